#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "helpers.hpp"

using namespace authex;
using namespace authex::deploy;
using harness::Scenario;
using harness::Stimulus;
using harness::VirtualNetwork;
using crypto::CipherSuite;
using crypto::Key128;

namespace {

/// Boots the descriptor's nodes and devices without deploying anything, so
/// tests can drive the deployer command by command.
struct Rig {
  explicit Rig(const Descriptor& d, uint64_t seed = 9000) {
    harness::ensure_behaviors_registered();
    std::set<uint16_t> vendors{io::kInfraVendorId};
    for (const auto& m : d.modules) vendors.insert(m.vendor_id);
    crypto::Rng roots(seed);
    for (const auto& n : d.nodes) {
      tee::NodeConfig cfg;
      cfg.node_id = n.name;
      cfg.address = n.address;
      cfg.flavor = n.flavor;
      cfg.root_key = roots.key();
      cfg.vendors = vendors;
      net.add_node(cfg).set_rng(crypto::Rng(roots.u64()));
      auto it = n.extra.find("devices");
      if (it == n.extra.end()) continue;
      std::istringstream in(it->second);
      std::string item;
      while (std::getline(in, item, ',')) {
        auto colon = item.find(':');
        net.attach_device(n.address, item.substr(0, colon),
                          item.substr(colon + 1) == "input" ? io::DeviceKind::input
                                                            : io::DeviceKind::output);
      }
    }
    deployer = std::make_unique<Deployer>(net, &net.provider(), crypto::Rng(seed + 7));
  }

  VirtualNetwork net;
  std::unique_ptr<Deployer> deployer;
  DeploymentState state;
};

}  // namespace

TEST_CASE("endpoint references parse and print all three forms") {
  for (const std::string& text : {"deployer", "device:TAP", "web.UserCommand"}) {
    EndpointRef ep = EndpointRef::parse(text);
    CHECK(ep.str() == text);
  }
  CHECK(EndpointRef::parse("device:TAP").kind == EndpointRef::Kind::device);
  CHECK(EndpointRef::parse("a.b").module == "a");
  CHECK(EndpointRef::parse("a.b").label == "b");
  CHECK_THROWS_AS((void)EndpointRef::parse(""), Error);
  CHECK_THROWS_AS((void)EndpointRef::parse("device:"), Error);
  CHECK_THROWS_AS((void)EndpointRef::parse("loneword"), Error);
}

TEST_CASE("descriptors survive a serialize/parse round trip unchanged") {
  for (const Descriptor& d : {testutil::flo_descriptor(), testutil::smart_home_descriptor()}) {
    Descriptor back = Descriptor::parse(d.serialize());
    CHECK(back == d);
    CHECK(back.serialize() == d.serialize());
  }
}

TEST_CASE("schema violations are all reported in one pass") {
  const char* text = R"({
    "nodes": [
      {"name": "n1", "address": "mem://n1", "flavor": "sancus"},
      {"name": "n1", "address": "mem://dup", "flavor": "sancus"}
    ],
    "modules": [
      {"name": "m1", "node": "n1", "behavior": "echo", "vendor_id": 1,
       "handlers": {"Echo": 0}},
      {"name": "m1", "node": "ghost", "behavior": "echo", "vendor_id": 1},
      {"name": "m2", "node": "n1", "behavior": "echo", "vendor_id": 1}
    ],
    "connections": [
      {"name": "c1", "from": "m2.NoSuchOutput", "to": "m1.Echo"},
      {"name": "c2", "from": "deployer", "to": "deployer"},
      {"name": "c1", "from": "deployer", "to": "m1.Echo", "direct": true}
    ]
  })";
  try {
    (void)Descriptor::parse(text);
    FAIL("invalid descriptor accepted");
  } catch (const Error& e) {
    std::string msg = e.what();
    CHECK(e.code() == Err::SchemaError);
    CHECK(msg.find("n1") != std::string::npos);      // duplicate node
    CHECK(msg.find("m1") != std::string::npos);      // duplicate module
    CHECK(msg.find("ghost") != std::string::npos);   // unknown node reference
    CHECK(msg.find("NoSuchOutput") != std::string::npos);
    CHECK(msg.find("c1") != std::string::npos);      // duplicate connection
    CHECK(msg.find("c2") != std::string::npos);      // deployer-to-deployer
  }
  CHECK_THROWS_AS((void)Descriptor::parse("{\"nodes\": []}"), Error);  // missing sections
  CHECK_THROWS_AS((void)Descriptor::parse("not json at all"), Error);
}

TEST_CASE("deploy, attest and connect are idempotent and fully populate state") {
  Descriptor d = testutil::flo_descriptor();
  Rig rig(d);

  CHECK(rig.deployer->deploy(d, rig.state).ok());
  for (const auto& m : d.modules) {
    const ModuleState& ms = rig.state.modules.at(m.name);
    CHECK(ms.loaded);
    CHECK_FALSE(ms.attested);
    CHECK(ms.identity == crypto::sha256(build_package(m)));
  }

  CHECK(rig.deployer->attest(d, rig.state).ok());
  for (const auto& m : d.modules) CHECK(rig.state.modules.at(m.name).attested);
  // sgx-sim module keys come from the platform root, not the vendor chain.
  CHECK(rig.state.modules.at("floa").module_key ==
        crypto::kdf128(rig.net.provider().node_root("na"),
                       BytesView(rig.state.modules.at("floa").identity.data(), 32)));

  CHECK(rig.deployer->connect(d, rig.state).ok());
  std::set<uint16_t> conn_ids;
  std::set<std::string> keys;
  for (const auto& c : d.connections) {
    const ConnState& cs = rig.state.connections.at(c.name);
    CHECK(cs.established);
    CHECK(conn_ids.insert(cs.conn_id).second);  // globally unique ids
    CHECK(keys.insert(to_hex(BytesView(cs.key.bytes.data(), 16))).second);  // fresh keys
    bool device_endpoint = c.from.kind == EndpointRef::Kind::device ||
                           c.to.kind == EndpointRef::Kind::device;
    CHECK(cs.lease_transcript.empty() == !device_endpoint);
    if (device_endpoint) CHECK(cs.lease_transcript.size() == 3);
  }
  CHECK(rig.state.used_key_hex.size() >= d.connections.size());

  // Re-running every command against a healthy deployment changes nothing.
  std::string before = rig.state.serialize();
  CHECK(rig.deployer->deploy(d, rig.state).ok());
  CHECK(rig.deployer->attest(d, rig.state).ok());
  CHECK(rig.deployer->connect(d, rig.state).ok());
  CHECK(rig.state.serialize() == before);

  // State file round-trips through its textual form.
  DeploymentState back = DeploymentState::parse(before);
  CHECK(back.serialize() == before);

  // The deployment actually runs: flood S1, tap closes.
  rig.net.inject_physical_input("S1", testutil::u16be(80));
  for (int i = 0; i < 3; i++) rig.net.inject_physical_input("T1", testutil::u16be(0));
  CHECK(rig.net.actuations().at("A") == std::vector<Bytes>{{0x00}});
}

TEST_CASE("per-module failures do not poison the rest of the deployment") {
  Descriptor d = testutil::flo_descriptor();
  d.modules.push_back({"broken", "ns1", "no_such_behavior", 1, {}, {}, {}, {}, {}});
  Rig rig(d);

  OpReport report = rig.deployer->deploy(d, rig.state);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].find("broken") != std::string::npos);
  for (const auto& name : {"flos1", "flos2", "floa"})
    CHECK(rig.state.modules.at(name).loaded);

  OpReport att = rig.deployer->attest(d, rig.state);
  REQUIRE(att.failures.size() == 1);
  CHECK(att.failures[0].find("broken") != std::string::npos);
  for (const auto& name : {"flos1", "flos2", "floa"})
    CHECK(rig.state.modules.at(name).attested);
}

TEST_CASE("packages perturbed in transit fail attestation, not deployment") {
  Descriptor d = testutil::flo_descriptor();

  /// Flips one bit inside every LoadModule body addressed at ns2.
  struct BitFlipNet : DeployerNet {
    explicit BitFlipNet(VirtualNetwork& inner) : inner(inner) {}
    net::Frame request(const std::string& address, const net::Frame& frame) override {
      net::Frame f = frame;
      if (f.op == net::Op::LoadModule && address == "mem://ns2" && !f.body.empty())
        f.body[f.body.size() / 2] ^= 0x10;
      return inner.request(address, f);
    }
    void post(const std::string& address, const net::Frame& frame) override {
      inner.post(address, frame);
    }
    std::string reply_address() override { return inner.reply_address(); }
    std::optional<Bytes> wait_reply(uint16_t c, uint64_t t) override {
      return inner.wait_reply(c, t);
    }
    uint64_t now_ms() override { return inner.now_ms(); }
    VirtualNetwork& inner;
  };

  Rig rig(d);
  BitFlipNet evil(rig.net);
  Deployer deployer(evil, &rig.net.provider(), crypto::Rng(11));
  DeploymentState state;
  CHECK(deployer.deploy(d, state).ok());  // corruption is invisible at load time

  OpReport report = deployer.attest(d, state);
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].find("flos2") != std::string::npos);
  CHECK_FALSE(state.modules.at("flos2").attested);
  CHECK(state.modules.at("flos1").attested);
  CHECK(state.modules.at("floa").attested);
}

TEST_CASE("direct request connections answer and ignore replayed frames") {
  Descriptor d = testutil::smart_home_descriptor();
  Scenario s(d, 4242);

  s.arm_attack();  // passthrough: capture only
  s.stimulate({Stimulus::Kind::device, "TS", testutil::u16be(15)});
  s.stimulate({Stimulus::Kind::direct, "user", {0x01}});
  s.disarm_attack();

  auto acts = s.net().actuations();
  CHECK(acts.at("HLED") == std::vector<Bytes>{{0x01}});
  CHECK(acts.at("LLED") == std::vector<Bytes>{{0x01}});

  // A direct request-kind send returns the opened reply payload.
  auto reply = s.deployer().send_direct(d, s.state(), "user", Bytes{0x01});
  REQUIRE(reply.has_value());
  CHECK(*reply == testutil::u16be(15));  // last reported status

  // Re-posting every captured event frame moves nothing.
  auto before = s.net().actuations();
  for (const auto& [link, raw] : s.script().capture()) {
    REQUIRE(link.substr(0, 2) == "->");
    for (int i = 0; i < 3; i++)
      s.net().post(link.substr(2), net::Frame::decode(raw));
  }
  s.net().run_until_idle();
  CHECK(s.net().actuations() == before);

  // An unknown connection name is an error, not a silent no-op.
  CHECK_THROWS_AS((void)s.deployer().send_direct(d, s.state(), "nope", Bytes{0x01}), Error);
}

TEST_CASE("update swaps a module in place, rotating keys on live connection ids") {
  Descriptor d = testutil::smart_home_descriptor();
  Scenario s(d, 31337);

  std::map<std::string, ConnState> before = s.state().connections;
  const std::vector<std::string> touched = {"temp", "heat", "lights", "status", "command"};

  uint16_t old_module_id = s.state().modules.at("gateway").module_id;
  Key128 old_key = s.state().modules.at("gateway").module_key;
  Key128 old_heat_key = before.at("heat").key;

  UpdateReport report = s.deployer().update(d, s.state(), "gateway");
  CHECK(report.loss_window_ms > 0);
  CHECK(report.reestablished_conn_ids.size() == touched.size());

  const ModuleState& fresh = s.state().modules.at("gateway");
  CHECK(fresh.module_id != old_module_id);
  CHECK(fresh.attested);
  CHECK(fresh.module_key == old_key);  // same package bytes measure identically

  for (const auto& name : touched) {
    const ConnState& cs = s.state().connections.at(name);
    CHECK(cs.conn_id == before.at(name).conn_id);  // ids survive
    CHECK(cs.key != before.at(name).key);          // keys do not
    CHECK(cs.established);
  }
  // Untouched connections keep their keys.
  CHECK(s.state().connections.at("reading").key == before.at("reading").key);

  // The old instance is gone and its keys are useless against the new one.
  CHECK_FALSE(s.net().rig("mem://ng").node->has_module(old_module_id));
  const ConnState& heat = s.state().connections.at("heat");
  auto& thermostat = *s.net().rig("mem://nd").node;
  uint16_t th_id = s.state().modules.at("thermostat").module_id;
  size_t drops = thermostat.module(th_id).drops().size();
  Bytes stale = crypto::aead_seal(CipherSuite::AesGcm128, old_heat_key,
                                  crypto::AeadNonce::counter(0), Bytes{0x01},
                                  runtime::event_aad(heat.conn_id, 0, false))
                    .encode();
  Bytes args;
  put_u16(args, heat.conn_id);
  put_bytes(args, stale);
  thermostat.call_entry(runtime::kCallerUntrusted, th_id, runtime::kEntryHandleInput, args);
  CHECK(thermostat.module(th_id).drops().size() == drops + 1);

  // The updated pipeline still actuates end to end.
  s.stimulate({Stimulus::Kind::device, "TS", testutil::u16be(15)});
  CHECK(s.net().actuations().at("HLED") == std::vector<Bytes>{{0x01}});
  s.stimulate({Stimulus::Kind::direct, "user", {0x01}});
  CHECK(s.net().actuations().at("LLED") == std::vector<Bytes>{{0x01}});
}

TEST_CASE("a failed update aborts wholly, leaving the old module serving") {
  Descriptor d = testutil::smart_home_descriptor();
  Scenario s(d, 777);
  std::string before = s.state().serialize();

  // Replacement package that cannot even load.
  ModuleDecl broken = d.module("gateway");
  broken.behavior = "no_such_behavior";
  CHECK_THROWS_AS((void)s.deployer().update(d, s.state(), "gateway", broken), Error);
  CHECK(s.state().serialize() == before);

  s.stimulate({Stimulus::Kind::device, "TS", testutil::u16be(15)});
  CHECK(s.net().actuations().at("HLED") == std::vector<Bytes>{{0x01}});
}

TEST_CASE("an update whose new package fails attestation rolls back") {
  Descriptor d = testutil::smart_home_descriptor();

  struct BitFlipNet : DeployerNet {
    explicit BitFlipNet(VirtualNetwork& inner) : inner(inner) {}
    bool armed = false;
    net::Frame request(const std::string& address, const net::Frame& frame) override {
      net::Frame f = frame;
      if (armed && f.op == net::Op::LoadModule && !f.body.empty()) f.body.back() ^= 0x01;
      return inner.request(address, f);
    }
    void post(const std::string& address, const net::Frame& frame) override {
      inner.post(address, frame);
    }
    std::string reply_address() override { return inner.reply_address(); }
    std::optional<Bytes> wait_reply(uint16_t c, uint64_t t) override {
      return inner.wait_reply(c, t);
    }
    uint64_t now_ms() override { return inner.now_ms(); }
    VirtualNetwork& inner;
  };

  Rig rig(d, 555);
  BitFlipNet evil(rig.net);
  Deployer deployer(evil, &rig.net.provider(), crypto::Rng(556));
  CHECK(deployer.deploy(d, rig.state).ok());
  CHECK(deployer.attest(d, rig.state).ok());
  CHECK(deployer.connect(d, rig.state).ok());
  std::string before = rig.state.serialize();

  evil.armed = true;
  try {
    (void)deployer.update(d, rig.state, "gateway");
    FAIL("update with corrupted package succeeded");
  } catch (const Error& e) {
    CHECK(e.code() == Err::AttestationFailed);
  }
  evil.armed = false;
  CHECK(rig.state.serialize() == before);

  // The old topology still actuates.
  rig.net.inject_physical_input("TS", testutil::u16be(15));
  CHECK(rig.net.actuations().at("HLED") == std::vector<Bytes>{{0x01}});
}

TEST_CASE("an attestation manager attests and keys vendor-chain modules") {
  Descriptor d = testutil::smart_home_descriptor();
  ModuleDecl attman;
  attman.name = "attman";
  attman.node = "nw";  // enclave node: the deployer can verify it via quote
  attman.behavior = "attestation_manager";
  attman.vendor_id = 2;
  d.modules.push_back(attman);

  Rig rig(d, 808);
  rig.state.attman_module = "attman";
  CHECK(rig.deployer->deploy(d, rig.state).ok());
  CHECK(rig.deployer->attest(d, rig.state).ok());

  // Enclave modules are attested directly; the vendor-chain ones through the
  // manager, whose handles replace the module keys in deployer state.
  CHECK(rig.state.modules.at("attman").attman_handle == 0);
  CHECK(rig.state.modules.at("web").attman_handle == 0);
  for (const auto& name : {"gateway", "temp_sensor", "thermostat", "light_switch"}) {
    const ModuleState& ms = rig.state.modules.at(name);
    CHECK(ms.attested);
    CHECK(ms.attman_handle != 0);
    CHECK(ms.module_key.is_zero());  // the deployer never learns these keys
  }

  CHECK(rig.deployer->connect(d, rig.state).ok());
  rig.net.inject_physical_input("TS", testutil::u16be(15));
  CHECK(rig.net.actuations().at("HLED") == std::vector<Bytes>{{0x01}});

  // A handle forged for a different identity is rejected by the manager.
  const ModuleState& am = rig.state.modules.at("attman");
  const ModuleState& gw = rig.state.modules.at("gateway");
  std::array<uint8_t, 32> wrong = gw.identity;
  wrong[0] ^= 1;
  apps::AttmanClient client(am.module_key, rig.state.attman_seq);
  Bytes req = apps::AttmanClient::encode_setkey_request(gw.attman_handle, wrong, 99, 0, 2,
                                                        crypto::Rng(1).key(),
                                                        CipherSuite::AesGcm128);
  net::Frame resp = rig.net.request(
      "mem://nw", {net::Op::CallEntry,
                   net::EventManager::encode_call_entry(am.module_id, apps::kAttmanEntryMakeSetKey,
                                                        client.seal_request(req))});
  rig.state.attman_seq = client.next_seq();
  CHECK(resp.op == net::Op::Error);
}
