#include "authex/deploy.hpp"

#include <algorithm>

#include "authex/event_manager.hpp"
#include "authex/module.hpp"
#include "json.hpp"

namespace authex::deploy {

using crypto::AeadNonce;
using crypto::CipherSuite;
using crypto::Key128;
using crypto::Tag128;
using json = nlohmann::json;
using net::EventManager;
using net::Frame;
using net::Op;

EndpointRef EndpointRef::parse(const std::string& text) {
  EndpointRef ep;
  if (text == "deployer") {
    ep.kind = Kind::deployer;
    return ep;
  }
  if (text.rfind("device:", 0) == 0) {
    ep.kind = Kind::device;
    ep.device = text.substr(7);
    if (ep.device.empty()) fail(Err::SchemaError, "empty device endpoint");
    return ep;
  }
  auto dot = text.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == text.size())
    fail(Err::SchemaError, "endpoint '" + text + "' is not module.label, deployer, or device:<id>");
  ep.kind = Kind::module_io;
  ep.module = text.substr(0, dot);
  ep.label = text.substr(dot + 1);
  return ep;
}

std::string EndpointRef::str() const {
  switch (kind) {
    case Kind::deployer: return "deployer";
    case Kind::device: return "device:" + device;
    case Kind::module_io: return module + "." + label;
  }
  return "?";
}

namespace {

std::vector<runtime::EndpointDecl> decls_from_json(const json& j) {
  std::vector<runtime::EndpointDecl> out;
  for (const auto& [label, io] : j.items())
    out.push_back({static_cast<uint16_t>(io.get<unsigned>()), label});
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.io_id < b.io_id; });
  return out;
}

json decls_to_json(const std::vector<runtime::EndpointDecl>& decls) {
  json j = json::object();
  for (const auto& d : decls) j[d.label] = d.io_id;
  return j;
}

const runtime::EndpointDecl* find_decl(const std::vector<runtime::EndpointDecl>& decls,
                                       const std::string& label) {
  for (const auto& d : decls)
    if (d.label == label) return &d;
  return nullptr;
}

std::string default_conn_name(const ConnDecl& c) { return c.from.str() + "->" + c.to.str(); }

}  // namespace

Descriptor Descriptor::parse(const std::string& text) {
  std::vector<std::string> violations;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(Err::SchemaError, e.what());
  }

  Descriptor d;
  for (const char* section : {"nodes", "modules", "connections"})
    if (!j.contains(section)) violations.push_back(std::string("missing section '") + section + "'");
  if (!violations.empty()) fail(Err::SchemaError, violations[0]);

  try {
    for (const auto& n : j["nodes"]) {
      NodeDecl nd;
      nd.name = n.at("name").get<std::string>();
      nd.address = n.at("address").get<std::string>();
      nd.flavor = tee::flavor_from_string(n.at("flavor").get<std::string>());
      if (n.contains("extra"))
        for (const auto& [k, v] : n["extra"].items()) nd.extra[k] = v.get<std::string>();
      d.nodes.push_back(std::move(nd));
    }
    for (const auto& m : j["modules"]) {
      ModuleDecl md;
      md.name = m.at("name").get<std::string>();
      md.node = m.at("node").get<std::string>();
      md.behavior = m.at("behavior").get<std::string>();
      md.vendor_id = static_cast<uint16_t>(m.value("vendor_id", 0u));
      if (m.contains("inputs")) md.inputs = decls_from_json(m["inputs"]);
      if (m.contains("outputs")) md.outputs = decls_from_json(m["outputs"]);
      if (m.contains("requests")) md.requests = decls_from_json(m["requests"]);
      if (m.contains("handlers")) md.handlers = decls_from_json(m["handlers"]);
      if (m.contains("init")) md.init = from_hex(m["init"].get<std::string>());
      d.modules.push_back(std::move(md));
    }
    for (const auto& c : j["connections"]) {
      ConnDecl cd;
      cd.from = EndpointRef::parse(c.at("from").get<std::string>());
      cd.to = EndpointRef::parse(c.at("to").get<std::string>());
      cd.suite = crypto::suite_from_byte(static_cast<uint8_t>(c.value("encryption", 0u)));
      cd.direct = c.value("direct", false);
      cd.exclusive = c.value("exclusive", true);
      cd.name = c.value("name", default_conn_name(cd));
      d.connections.push_back(std::move(cd));
    }
  } catch (const json::exception& e) {
    fail(Err::SchemaError, e.what());
  }

  // Structural validation; every violation is reported, not just the first.
  std::set<std::string> node_names, module_names, conn_names;
  for (const auto& n : d.nodes)
    if (!node_names.insert(n.name).second) violations.push_back("duplicate node '" + n.name + "'");
  for (const auto& m : d.modules) {
    if (!module_names.insert(m.name).second)
      violations.push_back("duplicate module '" + m.name + "'");
    if (!node_names.count(m.node))
      violations.push_back("module '" + m.name + "' assigned to unknown node '" + m.node + "'");
  }
  for (const auto& c : d.connections) {
    if (!conn_names.insert(c.name).second)
      violations.push_back("duplicate connection '" + c.name + "'");
    auto check = [&](const EndpointRef& ep, bool is_source) {
      if (ep.kind != EndpointRef::Kind::module_io) return;
      auto it = std::find_if(d.modules.begin(), d.modules.end(),
                             [&](const ModuleDecl& m) { return m.name == ep.module; });
      if (it == d.modules.end()) {
        violations.push_back("connection '" + c.name + "' names unknown module '" + ep.module + "'");
        return;
      }
      bool found = is_source ? (find_decl(it->outputs, ep.label) || find_decl(it->requests, ep.label))
                             : (find_decl(it->inputs, ep.label) || find_decl(it->handlers, ep.label));
      if (!found)
        violations.push_back("connection '" + c.name + "': module '" + ep.module
                             + "' does not declare " + (is_source ? "output/request '" : "input/handler '")
                             + ep.label + "'");
    };
    if (c.from.kind == EndpointRef::Kind::module_io) check(c.from, true);
    if (c.to.kind == EndpointRef::Kind::module_io) check(c.to, false);
    if (c.to.kind == EndpointRef::Kind::deployer)
      violations.push_back("connection '" + c.name + "' may not target the deployer");
    if (c.direct && c.from.kind != EndpointRef::Kind::deployer)
      violations.push_back("connection '" + c.name + "' is direct but not sourced at the deployer");
    if (c.from.kind == EndpointRef::Kind::deployer && !c.direct)
      violations.push_back("connection '" + c.name + "' from the deployer must be direct");
  }
  if (!violations.empty()) {
    std::string msg;
    for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v;
    fail(Err::SchemaError, msg);
  }
  return d;
}

std::string Descriptor::serialize() const {
  json j;
  j["nodes"] = json::array();
  for (const auto& n : nodes) {
    json jn{{"name", n.name}, {"address", n.address}, {"flavor", tee::flavor_to_string(n.flavor)}};
    if (!n.extra.empty()) jn["extra"] = n.extra;
    j["nodes"].push_back(jn);
  }
  j["modules"] = json::array();
  for (const auto& m : modules) {
    json jm{{"name", m.name}, {"node", m.node}, {"behavior", m.behavior},
            {"vendor_id", m.vendor_id}};
    if (!m.inputs.empty()) jm["inputs"] = decls_to_json(m.inputs);
    if (!m.outputs.empty()) jm["outputs"] = decls_to_json(m.outputs);
    if (!m.requests.empty()) jm["requests"] = decls_to_json(m.requests);
    if (!m.handlers.empty()) jm["handlers"] = decls_to_json(m.handlers);
    if (!m.init.empty()) jm["init"] = to_hex(m.init);
    j["modules"].push_back(jm);
  }
  j["connections"] = json::array();
  for (const auto& c : connections) {
    json jc{{"name", c.name}, {"from", c.from.str()}, {"to", c.to.str()},
            {"encryption", static_cast<unsigned>(c.suite)}, {"direct", c.direct},
            {"exclusive", c.exclusive}};
    j["connections"].push_back(jc);
  }
  return j.dump(2);
}

const NodeDecl& Descriptor::node(const std::string& name) const {
  for (const auto& n : nodes)
    if (n.name == name) return n;
  fail(Err::SchemaError, "no node '" + name + "'");
}

const ModuleDecl& Descriptor::module(const std::string& name) const {
  for (const auto& m : modules)
    if (m.name == name) return m;
  fail(Err::SchemaError, "no module '" + name + "'");
}

const ConnDecl& Descriptor::connection(const std::string& name) const {
  for (const auto& c : connections)
    if (c.name == name) return c;
  fail(Err::SchemaError, "no connection '" + name + "'");
}

Bytes build_package(const ModuleDecl& decl) {
  runtime::ModulePackage pkg;
  pkg.name = decl.behavior;
  pkg.vendor_id = decl.vendor_id;
  pkg.inputs = decl.inputs;
  pkg.outputs = decl.outputs;
  pkg.requests = decl.requests;
  pkg.handlers = decl.handlers;
  pkg.init = decl.init;
  return pkg.serialize();
}

std::string DeploymentState::serialize() const {
  json j;
  j["modules"] = json::object();
  for (const auto& [name, m] : modules) {
    j["modules"][name] = {
        {"node", m.node},
        {"module_id", m.module_id},
        {"identity", to_hex(BytesView(m.identity.data(), m.identity.size()))},
        {"loaded", m.loaded},
        {"attested", m.attested},
        {"module_key", to_hex(BytesView(m.module_key.bytes.data(), 16))},
        {"attman_handle", m.attman_handle},
        {"setkey_seq", m.setkey_seq},
    };
  }
  j["connections"] = json::object();
  for (const auto& [name, c] : connections) {
    j["connections"][name] = {
        {"conn_id", c.conn_id},
        {"key", to_hex(BytesView(c.key.bytes.data(), 16))},
        {"encryption", static_cast<unsigned>(c.suite)},
        {"established", c.established},
        {"direct", c.direct},
        {"is_request", c.is_request},
        {"nonce", c.nonce},
        {"reply_nonce", c.reply_nonce},
        {"lease_transcript", c.lease_transcript},
    };
  }
  j["used_key_hex"] = used_key_hex;
  j["next_conn_id"] = next_conn_id;
  j["attman_module"] = attman_module;
  j["attman_seq"] = attman_seq;
  return j.dump(2);
}

DeploymentState DeploymentState::parse(const std::string& text) {
  DeploymentState s;
  json j;
  try {
    j = json::parse(text);
    const json mods = j.value("modules", json::object());
    for (const auto& [name, m] : mods.items()) {
      ModuleState ms;
      ms.node = m.at("node").get<std::string>();
      ms.module_id = static_cast<uint16_t>(m.at("module_id").get<unsigned>());
      Bytes id = from_hex(m.at("identity").get<std::string>());
      std::copy(id.begin(), id.end(), ms.identity.begin());
      ms.loaded = m.at("loaded").get<bool>();
      ms.attested = m.at("attested").get<bool>();
      ms.module_key = Key128{};
      Bytes key = from_hex(m.at("module_key").get<std::string>());
      std::copy(key.begin(), key.end(), ms.module_key.bytes.begin());
      ms.attman_handle = static_cast<uint16_t>(m.at("attman_handle").get<unsigned>());
      ms.setkey_seq = static_cast<uint16_t>(m.at("setkey_seq").get<unsigned>());
      s.modules[name] = ms;
    }
    const json conns = j.value("connections", json::object());
    for (const auto& [name, c] : conns.items()) {
      ConnState cs;
      cs.conn_id = static_cast<uint16_t>(c.at("conn_id").get<unsigned>());
      Bytes key = from_hex(c.at("key").get<std::string>());
      std::copy(key.begin(), key.end(), cs.key.bytes.begin());
      cs.suite = crypto::suite_from_byte(static_cast<uint8_t>(c.at("encryption").get<unsigned>()));
      cs.established = c.at("established").get<bool>();
      cs.direct = c.at("direct").get<bool>();
      cs.is_request = c.at("is_request").get<bool>();
      cs.nonce = static_cast<uint16_t>(c.at("nonce").get<unsigned>());
      cs.reply_nonce = static_cast<uint16_t>(c.at("reply_nonce").get<unsigned>());
      cs.lease_transcript = c.value("lease_transcript", std::vector<std::string>{});
      s.connections[name] = cs;
    }
    s.used_key_hex = j.value("used_key_hex", std::set<std::string>{});
    s.next_conn_id = static_cast<uint16_t>(j.value("next_conn_id", 0u));
    s.attman_module = j.value("attman_module", std::string());
    s.attman_seq = static_cast<uint16_t>(j.value("attman_seq", 0u));
  } catch (const json::exception& e) {
    fail(Err::SchemaError, std::string("state file: ") + e.what());
  }
  return s;
}

Deployer::Deployer(DeployerNet& net, io::Provider* provider, crypto::Rng rng,
                   std::string deployer_id)
    : net_(net), provider_(provider), rng_(std::move(rng)), deployer_id_(std::move(deployer_id)) {}

Key128 Deployer::fresh_key(DeploymentState& state) {
  for (;;) {
    Key128 k = rng_.key();
    if (state.used_key_hex.insert(to_hex(BytesView(k.bytes.data(), 16))).second) return k;
  }
}

OpReport Deployer::deploy(const Descriptor& d, DeploymentState& state) {
  OpReport report;
  for (const auto& m : d.modules) {
    auto it = state.modules.find(m.name);
    if (it != state.modules.end() && it->second.loaded) continue;  // idempotent
    try {
      Bytes package = build_package(m);
      Frame resp = net_.request(d.node(m.node).address, {Op::LoadModule, package});
      if (resp.op != Op::Ack) fail(Err::MalformedPackage, to_string(resp.body));
      ByteReader r(resp.body);
      ModuleState ms;
      ms.node = m.node;
      ms.module_id = r.u16();
      r.take(32);  // the node's claimed identity is not trusted
      // The expected identity is computed locally; if the package was altered
      // in transit the loaded module diverges and attestation will fail.
      ms.identity = crypto::sha256(package);
      ms.loaded = true;
      state.modules[m.name] = ms;
    } catch (const std::exception& e) {
      report.failures.push_back(m.name + ": " + e.what());
    }
  }
  return report;
}

void Deployer::attest_one(const Descriptor& d, DeploymentState& state, const std::string& name) {
  ModuleState& ms = state.modules.at(name);
  const ModuleDecl& decl = d.module(name);
  const NodeDecl& node = d.node(ms.node);

  Bytes challenge = rng_.bytes(16);
  Frame resp = net_.request(
      node.address,
      {Op::CallEntry, EventManager::encode_call_entry(ms.module_id, runtime::kEntryAttest,
                                                      challenge)});
  if (resp.op != Op::Ack) fail(Err::AttestationFailed, to_string(resp.body));

  if (!provider_) fail(Err::AttestationFailed, "no provider configured for key derivation");
  if (node.flavor == tee::Flavor::sgx_sim) {
    ms.module_key = provider_->verify_quote(node.name, ms.identity, challenge, resp.body);
  } else {
    Key128 expected = tee::derive_module_key(provider_->vendor_key(node.name, decl.vendor_id),
                                             ms.identity);
    if (resp.body.size() != 16
        || !crypto::mac_verify(expected, challenge, Tag128::from(resp.body)))
      fail(Err::AttestationFailed, "evidence does not verify for module " + name);
    ms.module_key = expected;
  }
  ms.attested = true;
}

void Deployer::attest_via_manager(const Descriptor& d, DeploymentState& state,
                                  const std::string& name) {
  ModuleState& ms = state.modules.at(name);
  const ModuleDecl& decl = d.module(name);
  const NodeDecl& node = d.node(ms.node);
  const ModuleState& attman = state.modules.at(state.attman_module);
  const NodeDecl& attman_node = d.node(attman.node);

  apps::AttmanClient client(attman.module_key, state.attman_seq);
  Bytes req = apps::AttmanClient::encode_attest_request(
      node.address, ms.module_id, provider_->vendor_key(node.name, decl.vendor_id), ms.identity);
  Frame resp = net_.request(
      attman_node.address,
      {Op::CallEntry, EventManager::encode_call_entry(attman.module_id, apps::kAttmanEntryAttest,
                                                      client.seal_request(req))});
  state.attman_seq = client.next_seq();
  if (resp.op != Op::Ack) fail(Err::AttestationFailed, to_string(resp.body));
  Bytes reply = client.open_reply(resp.body);
  ByteReader r(reply);
  ms.attman_handle = r.u16();
  ms.attested = true;  // key held by the manager; module_key stays zero
}

OpReport Deployer::attest(const Descriptor& d, DeploymentState& state) {
  OpReport report;
  // The manager itself is always attested directly, first.
  if (!state.attman_module.empty()) {
    auto it = state.modules.find(state.attman_module);
    if (it == state.modules.end() || !it->second.loaded)
      fail(Err::ScenarioError, "attestation manager module not deployed");
    if (!it->second.attested) {
      try {
        attest_one(d, state, state.attman_module);
      } catch (const std::exception& e) {
        report.failures.push_back(state.attman_module + std::string(": ") + e.what());
        return report;
      }
    }
  }
  for (const auto& m : d.modules) {
    auto it = state.modules.find(m.name);
    if (it == state.modules.end() || !it->second.loaded) {
      report.failures.push_back(m.name + ": not loaded");
      continue;
    }
    if (it->second.attested) continue;  // idempotent
    try {
      bool delegate = !state.attman_module.empty() && m.name != state.attman_module
                      && d.node(m.node).flavor != tee::Flavor::sgx_sim;
      if (delegate)
        attest_via_manager(d, state, m.name);
      else
        attest_one(d, state, m.name);
    } catch (const std::exception& e) {
      report.failures.push_back(m.name + ": " + e.what());
    }
  }
  return report;
}

void Deployer::send_setkey(const Descriptor& d, DeploymentState& state,
                           const std::string& module_name, uint16_t conn_id, uint16_t io_id,
                           const Key128& conn_key, CipherSuite suite) {
  ModuleState& ms = state.modules.at(module_name);
  if (!ms.attested) fail(Err::SetKeyRejected, "module " + module_name + " not attested");
  const NodeDecl& node = d.node(ms.node);

  Bytes body;
  if (ms.attman_handle != 0) {
    const ModuleState& attman = state.modules.at(state.attman_module);
    const NodeDecl& attman_node = d.node(attman.node);
    apps::AttmanClient client(attman.module_key, state.attman_seq);
    Bytes req = apps::AttmanClient::encode_setkey_request(ms.attman_handle, ms.identity, conn_id,
                                                          io_id, ms.setkey_seq, conn_key, suite);
    Frame resp = net_.request(attman_node.address,
                              {Op::CallEntry,
                               EventManager::encode_call_entry(
                                   attman.module_id, apps::kAttmanEntryMakeSetKey,
                                   client.seal_request(req))});
    state.attman_seq = client.next_seq();
    if (resp.op != Op::Ack) fail(Err::SetKeyRejected, to_string(resp.body));
    body = client.open_reply(resp.body);
  } else {
    body = runtime::make_setkey_body(ms.module_key, conn_id, io_id, ms.setkey_seq, conn_key, suite);
  }

  Frame resp = net_.request(
      node.address,
      {Op::CallEntry,
       EventManager::encode_call_entry(ms.module_id, runtime::kEntrySetKey, body)});
  if (resp.op != Op::Ack) fail(Err::SetKeyRejected, to_string(resp.body));
  ms.setkey_seq++;
}

void Deployer::add_route(const std::string& manager_address, uint16_t conn_id,
                         uint16_t src_module_id, const std::string& dest_address,
                         uint16_t dest_module_id) {
  Frame resp = net_.request(manager_address,
                            {Op::AddConnection,
                             EventManager::encode_add_connection(conn_id, src_module_id,
                                                                 dest_address, dest_module_id)});
  if (resp.op != Op::Ack) fail(Err::NodeUnreachable, to_string(resp.body));
}

uint16_t Deployer::resolve_io(const Descriptor& d, const EndpointRef& ep,
                              bool& is_request_like) const {
  const ModuleDecl& m = d.module(ep.module);
  for (const auto& decls : {&m.inputs, &m.outputs}) {
    if (const auto* decl = find_decl(*decls, ep.label)) {
      is_request_like = false;
      return decl->io_id;
    }
  }
  for (const auto& decls : {&m.requests, &m.handlers}) {
    if (const auto* decl = find_decl(*decls, ep.label)) {
      is_request_like = true;
      return decl->io_id;
    }
  }
  fail(Err::SchemaError, "module '" + ep.module + "' has no io '" + ep.label + "'");
}

void Deployer::lease_connect(const Descriptor& d, DeploymentState& state,
                             const std::string& conn_name, const std::string& device_id,
                             uint16_t conn_id, const Key128& conn_key, bool exclusive) {
  if (!provider_) fail(Err::UnknownDriver, "no provider configured");
  ConnState& cs = state.connections.at(conn_name);
  const io::DriverBinding& binding = provider_->driver(device_id);
  const std::string& addr = provider_->driver_node_address(device_id);

  // Step 1: fetch the driver's current nonce.
  Frame r1 = net_.request(addr, {Op::CallEntry,
                                 EventManager::encode_call_entry(binding.driver_module_id,
                                                                 io::kDriverEntryGetNonce, {})});
  if (r1.op != Op::Ack || r1.body.size() != 16) fail(Err::UnknownDriver, to_string(r1.body));
  cs.lease_transcript.push_back("1 get_nonce " + to_hex(r1.body));

  // Step 2: ask the provider for a grant bound to that nonce.
  io::GrantBlob blob = provider_->grant(deployer_id_, device_id, r1.body, conn_key, exclusive);
  cs.lease_transcript.push_back("2 grant " + to_hex(blob.ciphertext) + to_hex(blob.tag));

  // Step 3: hand the blob to the driver and check its confirmation MAC.
  Frame r3 = net_.request(addr, {Op::CallEntry,
                                 EventManager::encode_call_entry(
                                     binding.driver_module_id, io::kDriverEntrySetExclusive,
                                     blob.encode_set_exclusive_args(conn_id))});
  if (r3.op != Op::Ack) fail(Err::AuthFailure, to_string(r3.body));
  Bytes confirm_input = to_bytes("CONFIRM");
  put_bytes(confirm_input, r1.body);
  if (r3.body.size() != 16
      || !crypto::mac_verify(conn_key, confirm_input, Tag128::from(r3.body)))
    fail(Err::AuthFailure, "driver confirmation does not verify");
  cs.lease_transcript.push_back("3 set_exclusive " + to_hex(r3.body));
}

void Deployer::establish(const Descriptor& d, DeploymentState& state,
                         const std::string& conn_name, bool rotate_only) {
  const ConnDecl& c = d.connection(conn_name);
  ConnState& cs = state.connections[conn_name];
  if (!rotate_only && cs.established) return;  // idempotent

  if (cs.key.is_zero() && !rotate_only) {
    cs.conn_id = state.next_conn_id++;
    cs.direct = c.direct;
    cs.suite = c.suite;
  }
  cs.key = fresh_key(state);
  cs.nonce = 0;
  cs.reply_nonce = 0;
  cs.lease_transcript.clear();

  using Kind = EndpointRef::Kind;
  bool src_request = false, dst_request = false;
  // Destination first, so the channel is ready before the source can emit.
  if (c.to.kind == Kind::module_io) {
    uint16_t io = resolve_io(d, c.to, dst_request);
    send_setkey(d, state, c.to.module, cs.conn_id, io, cs.key, cs.suite);
  } else {  // output device
    lease_connect(d, state, conn_name, c.to.device, cs.conn_id, cs.key, true);
  }

  if (c.from.kind == Kind::module_io) {
    uint16_t io = resolve_io(d, c.from, src_request);
    send_setkey(d, state, c.from.module, cs.conn_id, io, cs.key, cs.suite);
  } else if (c.from.kind == Kind::device) {
    lease_connect(d, state, conn_name, c.from.device, cs.conn_id, cs.key, c.exclusive);
  }
  cs.is_request = src_request || dst_request;

  // Routing entries on the source-side manager (and the reverse route for
  // request/handler pairs).
  auto module_addr = [&](const std::string& name) { return d.node(state.modules.at(name).node).address; };
  auto module_id = [&](const std::string& name) { return state.modules.at(name).module_id; };

  std::string src_addr, dst_addr;
  uint16_t src_id = 0, dst_id = 0;
  if (c.from.kind == Kind::module_io) {
    src_addr = module_addr(c.from.module);
    src_id = module_id(c.from.module);
  } else if (c.from.kind == Kind::device) {
    src_addr = provider_->driver_node_address(c.from.device);
    src_id = provider_->driver(c.from.device).driver_module_id;
  }
  if (c.to.kind == Kind::module_io) {
    dst_addr = module_addr(c.to.module);
    dst_id = module_id(c.to.module);
  } else {
    dst_addr = provider_->driver_node_address(c.to.device);
    dst_id = provider_->driver(c.to.device).driver_module_id;
  }

  if (c.from.kind != Kind::deployer) {
    add_route(src_addr, cs.conn_id, src_id, dst_addr, dst_id);
    if (cs.is_request) add_route(dst_addr, cs.conn_id, dst_id, src_addr, src_id);
  } else if (cs.is_request) {
    // Replies to the deployer's own requests route to its reply endpoint.
    add_route(dst_addr, cs.conn_id, dst_id, net_.reply_address(), 0);
  }
  cs.established = true;
}

OpReport Deployer::connect(const Descriptor& d, DeploymentState& state) {
  OpReport report;
  for (const auto& c : d.connections) {
    try {
      establish(d, state, c.name, /*rotate_only=*/false);
    } catch (const std::exception& e) {
      report.failures.push_back(c.name + ": " + e.what());
    }
  }
  return report;
}

UpdateReport Deployer::update(const Descriptor& d, DeploymentState& state,
                              const std::string& module_name,
                              std::optional<ModuleDecl> replacement) {
  auto it = state.modules.find(module_name);
  if (it == state.modules.end()) fail(Err::UnknownModule, "module not in deployment state");
  ModuleState old = it->second;
  const ModuleDecl decl = replacement.value_or(d.module(module_name));
  const NodeDecl& node = d.node(old.node);

  // Step 1: deploy and attest the new instance; any failure aborts wholly.
  Bytes package = build_package(decl);
  Frame resp = net_.request(node.address, {Op::LoadModule, package});
  if (resp.op != Op::Ack) fail(Err::MalformedPackage, to_string(resp.body));
  ByteReader r(resp.body);
  ModuleState fresh;
  fresh.node = old.node;
  fresh.module_id = r.u16();
  r.take(32);  // expected identity is computed locally, not trusted from the node
  fresh.identity = crypto::sha256(package);
  fresh.loaded = true;

  ModuleState saved = it->second;
  it->second = fresh;
  try {
    attest_one(d, state, module_name);
  } catch (...) {
    it->second = saved;  // abort: old instance untouched and still serving
    net_.request(node.address, {Op::RemoveModule, [&] {
                                  Bytes b;
                                  put_u16(b, fresh.module_id);
                                  return b;
                                }()});
    throw;
  }

  // Step 2: deactivate the old instance.
  uint64_t t_deactivate = net_.now_ms();
  Frame rm = net_.request(node.address, {Op::RemoveModule, [&] {
                                           Bytes b;
                                           put_u16(b, old.module_id);
                                           return b;
                                         }()});
  if (rm.op != Op::Ack) fail(Err::UnknownModule, to_string(rm.body));

  // Step 3: re-establish every touched connection, same conn_id, rotated key.
  UpdateReport report;
  for (const auto& c : d.connections) {
    bool touches = (c.from.kind == EndpointRef::Kind::module_io && c.from.module == module_name)
                   || (c.to.kind == EndpointRef::Kind::module_io && c.to.module == module_name);
    if (!touches) continue;
    establish(d, state, c.name, /*rotate_only=*/true);
    report.reestablished_conn_ids.push_back(state.connections.at(c.name).conn_id);
  }
  report.loss_window_ms = net_.now_ms() - t_deactivate;
  return report;
}

std::optional<Bytes> Deployer::send_direct(const Descriptor& d, DeploymentState& state,
                                           const std::string& conn_name, BytesView payload,
                                           uint64_t timeout_ms) {
  const ConnDecl& c = d.connection(conn_name);
  auto it = state.connections.find(conn_name);
  if (it == state.connections.end() || !it->second.established || !it->second.direct)
    fail(Err::Unestablished, "connection is not an established direct connection");
  ConnState& cs = it->second;

  bool dst_request = false;
  resolve_io(d, c.to, dst_request);
  const ModuleState& dest = state.modules.at(c.to.module);
  const NodeDecl& dest_node = d.node(dest.node);

  uint16_t n = cs.nonce;
  if (n == 0xffff) fail(Err::NonceExhausted, "direct connection exhausted");
  crypto::Sealed sealed = crypto::aead_seal(cs.suite, cs.key, AeadNonce::counter(n), payload,
                                            runtime::event_aad(cs.conn_id, n, false));
  cs.nonce = static_cast<uint16_t>(n + 1);
  net_.post(dest_node.address,
            {Op::RemoteEvent,
             EventManager::encode_remote_event(dest.module_id, cs.conn_id, sealed.encode())});

  if (!dst_request) return std::nullopt;
  std::optional<Bytes> raw = net_.wait_reply(cs.conn_id, timeout_ms);
  if (!raw) fail(Err::Timeout, "no reply on direct request connection");
  uint16_t rn = cs.reply_nonce;
  try {
    crypto::Sealed reply = crypto::Sealed::decode(*raw);
    Bytes opened = crypto::aead_open(cs.suite, cs.key, AeadNonce::reply_counter(rn),
                                     reply.ciphertext, reply.tag,
                                     runtime::event_aad(cs.conn_id, rn, true));
    cs.reply_nonce = static_cast<uint16_t>(rn + 1);
    return opened;
  } catch (const Error&) {
    // A reply that fails to verify is indistinguishable from a lost one.
    fail(Err::Timeout, "reply on direct request connection did not verify");
  }
}

}  // namespace authex::deploy
