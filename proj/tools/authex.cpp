// authex: deployer command line. Drives deploy/attest/connect/update/send/
// bench against a descriptor, either fully in-process (mem:// addresses) or
// against live node servers (tcp:// addresses, started with `authex node`).

#include <CLI11.hpp>

#include <fstream>
#include <sstream>

#include "authex/harness.hpp"
#include "tcp_net.hpp"

using namespace authex;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::SchemaError, "cannot read " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::SchemaError, "cannot write " + path);
  out << text;
}

std::vector<std::pair<std::string, io::DeviceKind>> devices_of(const deploy::NodeDecl& n) {
  std::vector<std::pair<std::string, io::DeviceKind>> out;
  auto it = n.extra.find("devices");
  if (it == n.extra.end()) return out;
  std::istringstream in(it->second);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto colon = item.find(':');
    if (colon == std::string::npos) fail(Err::SchemaError, "bad device spec: " + item);
    out.emplace_back(item.substr(0, colon), item.substr(colon + 1) == "input"
                                                ? io::DeviceKind::input
                                                : io::DeviceKind::output);
  }
  return out;
}

std::set<uint16_t> vendor_set(const deploy::Descriptor& d) {
  std::set<uint16_t> vendors{io::kInfraVendorId};
  for (const auto& m : d.modules) vendors.insert(m.vendor_id);
  return vendors;
}

/// Node boot parameters are derived deterministically from (descriptor order,
/// seed), so node servers and the deployer agree on root keys without any
/// out-of-band provisioning.
std::vector<tee::NodeConfig> node_configs(const deploy::Descriptor& d, uint64_t seed) {
  std::vector<tee::NodeConfig> out;
  std::set<uint16_t> vendors = vendor_set(d);
  crypto::Rng roots(seed);
  for (const auto& n : d.nodes) {
    tee::NodeConfig cfg;
    cfg.node_id = n.name;
    cfg.address = n.address;
    cfg.flavor = n.flavor;
    cfg.root_key = roots.key();
    cfg.vendors = vendors;
    roots.u64();  // node rng seed; consumed here to keep the stream aligned
    out.push_back(std::move(cfg));
  }
  return out;
}

bool tcp_mode(const deploy::Descriptor& d) {
  bool tcp = d.nodes.front().address.rfind("tcp://", 0) == 0;
  for (const auto& n : d.nodes)
    if ((n.address.rfind("tcp://", 0) == 0) != tcp)
      fail(Err::SchemaError, "descriptor mixes tcp:// and simulated addresses");
  return tcp;
}

struct Session {
  deploy::Descriptor descriptor;
  deploy::DeploymentState state;
  std::string state_path;
  uint64_t seed;

  // Exactly one of the two backends is live.
  std::unique_ptr<harness::VirtualNetwork> sim;
  std::unique_ptr<tools::TcpNet> tcp;
  std::unique_ptr<io::Provider> provider;
  std::vector<std::unique_ptr<tee::Node>> shadows;  // binding oracles, tcp only
  std::unique_ptr<deploy::Deployer> deployer;

  deploy::DeployerNet& net() { return sim ? static_cast<deploy::DeployerNet&>(*sim) : *tcp; }
};

Session open_session(const std::string& descriptor_path, const std::string& state_path,
                     uint64_t seed, const std::string& attman, uint16_t listen_port) {
  harness::ensure_behaviors_registered();
  Session s;
  s.descriptor = deploy::Descriptor::parse(read_file(descriptor_path));
  s.state_path = state_path;
  s.seed = seed;
  if (std::ifstream probe(state_path); probe)
    s.state = deploy::DeploymentState::parse(read_file(state_path));
  if (!attman.empty()) {
    (void)s.descriptor.module(attman);  // must exist
    s.state.attman_module = attman;
  }

  if (tcp_mode(s.descriptor)) {
    s.tcp = std::make_unique<tools::TcpNet>(listen_port);
    s.provider = std::make_unique<io::Provider>([&net = *s.tcp]() mutable { return net.now_ms(); });
    std::vector<tee::NodeConfig> configs = node_configs(s.descriptor, seed);
    for (size_t i = 0; i < configs.size(); i++) {
      s.provider->register_node(configs[i]);
      auto devices = devices_of(s.descriptor.nodes[i]);
      if (devices.empty()) continue;
      // Driver bindings are deterministic; replay the node's boot locally so
      // the provider learns ids and identities without a provisioning channel.
      auto shadow = std::make_unique<tee::Node>(configs[i]);
      io::DeviceBus shadow_bus(*shadow, [] { return uint64_t{0}; });
      for (const auto& [device, kind] : devices)
        s.provider->register_driver(configs[i].node_id, shadow_bus.attach_device(device, kind));
      s.shadows.push_back(std::move(shadow));
    }
    s.deployer = std::make_unique<deploy::Deployer>(*s.tcp, s.provider.get(),
                                                    crypto::Rng(seed ^ 0x9e3779b97f4a7c15ull));
  } else {
    // Simulated backend: boot every node in-process for this invocation.
    // Node state does not outlive the process, so each command replays the
    // earlier phases before its own (they are idempotent by construction).
    s.sim = std::make_unique<harness::VirtualNetwork>();
    std::vector<tee::NodeConfig> configs = node_configs(s.descriptor, seed);
    crypto::Rng roots(seed);
    for (size_t i = 0; i < configs.size(); i++) {
      roots.key();
      s.sim->add_node(configs[i]).set_rng(crypto::Rng(roots.u64()));
      for (const auto& [device, kind] : devices_of(s.descriptor.nodes[i]))
        s.sim->attach_device(configs[i].address, device, kind);
    }
    s.state = {};  // in-process nodes are fresh; prior state is unusable
    if (!attman.empty()) s.state.attman_module = attman;
    s.deployer = std::make_unique<deploy::Deployer>(*s.sim, &s.sim->provider(),
                                                    crypto::Rng(seed ^ 0x9e3779b97f4a7c15ull));
  }
  return s;
}

int run_phases(Session& s, const std::string& last_phase) {
  using Op = deploy::OpReport (deploy::Deployer::*)(const deploy::Descriptor&,
                                                    deploy::DeploymentState&);
  const std::vector<std::pair<std::string, Op>> phases = {
      {"deploy", &deploy::Deployer::deploy},
      {"attest", &deploy::Deployer::attest},
      {"connect", &deploy::Deployer::connect},
  };
  bool replay_chain = s.sim != nullptr;  // tcp nodes persist; run only the asked phase
  int rc = 0;
  for (const auto& [name, op] : phases) {
    if (replay_chain || name == last_phase) {
      deploy::OpReport report = ((*s.deployer).*op)(s.descriptor, s.state);
      for (const std::string& f : report.failures) {
        std::fprintf(stderr, "%s: %s\n", name.c_str(), f.c_str());
        rc = 1;
      }
      std::printf("%s: %s\n", name.c_str(), report.ok() ? "ok" : "failed");
    }
    if (name == last_phase) break;
  }
  write_file(s.state_path, s.state.serialize());
  return rc;
}

int cmd_node(const std::string& descriptor_path, const std::string& name, uint64_t seed) {
  harness::ensure_behaviors_registered();
  deploy::Descriptor d = deploy::Descriptor::parse(read_file(descriptor_path));
  std::vector<tee::NodeConfig> configs = node_configs(d, seed);
  crypto::Rng roots(seed);
  for (size_t i = 0; i < configs.size(); i++) {
    crypto::Rng node_rng(((void)roots.key(), roots.u64()));
    if (d.nodes[i].name != name) continue;
    tools::NodeServer server(configs[i], devices_of(d.nodes[i]));
    server.node().set_rng(std::move(node_rng));
    server.serve();  // never returns
  }
  std::fprintf(stderr, "no node named '%s' in the descriptor\n", name.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"authentic-execution deployer"};
  app.require_subcommand(1);
  app.fallthrough();  // common options may follow the subcommand

  std::string descriptor_path, state_path = "authex.state", attman;
  uint64_t seed = 1;
  uint16_t listen_port = 47200;
  app.add_option("--descriptor", descriptor_path, "deployment descriptor file");
  app.add_option("--state", state_path, "deployment state file (default authex.state)");
  app.add_option("--seed", seed, "deterministic seed for keys and node boot");
  app.add_option("--attman", attman, "descriptor module acting as attestation manager");
  app.add_option("--listen-port", listen_port, "deployer reply port for tcp:// descriptors");

  auto* cmd_deploy = app.add_subcommand("deploy", "package and load every module");
  auto* cmd_attest = app.add_subcommand("attest", "challenge every loaded module");
  auto* cmd_connect = app.add_subcommand("connect", "establish all connection keys");

  auto* cmd_update = app.add_subcommand("update", "live-update one module");
  std::string update_module;
  cmd_update->add_option("--module", update_module, "module to update")->required();

  auto* cmd_send = app.add_subcommand("send", "send an event on a direct connection");
  std::string send_conn, send_payload_hex;
  cmd_send->add_option("--connection", send_conn, "direct connection name")->required();
  cmd_send->add_option("--payload", send_payload_hex, "payload, hex encoded")->required();

  auto* cmd_bench = app.add_subcommand("bench", "round-trip benchmark over a direct route");
  std::string bench_route = "user";
  size_t bench_iterations = 110;
  bool bench_json = false;
  cmd_bench->add_option("--route", bench_route, "direct request connection to measure");
  cmd_bench->add_option("--iterations", bench_iterations, "measurement iterations");
  cmd_bench->add_flag("--json", bench_json, "emit the machine-readable report");

  auto* cmd_serve = app.add_subcommand("node", "run one node's event manager over TCP");
  std::string node_name;
  cmd_serve->add_option("--name", node_name, "node name from the descriptor")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (descriptor_path.empty()) fail(Err::SchemaError, "--descriptor is required");
    if (cmd_serve->parsed()) return cmd_node(descriptor_path, node_name, seed);

    if (cmd_bench->parsed()) {
      harness::ensure_behaviors_registered();
      deploy::Descriptor d = deploy::Descriptor::parse(read_file(descriptor_path));
      harness::BenchReport report = harness::bench_rtt(d, bench_route, bench_iterations, seed);
      std::printf("%s", (bench_json ? report.to_json() : report.render()).c_str());
      return 0;
    }

    Session s = open_session(descriptor_path, state_path, seed, attman, listen_port);
    if (cmd_deploy->parsed()) return run_phases(s, "deploy");
    if (cmd_attest->parsed()) return run_phases(s, "attest");
    if (cmd_connect->parsed()) return run_phases(s, "connect");

    if (cmd_update->parsed()) {
      if (s.sim && run_phases(s, "connect") != 0) return 1;
      deploy::UpdateReport report = s.deployer->update(s.descriptor, s.state, update_module);
      write_file(s.state_path, s.state.serialize());
      std::printf("update: ok, %zu connections re-established, loss window %llu ms\n",
                  report.reestablished_conn_ids.size(),
                  static_cast<unsigned long long>(report.loss_window_ms));
      return 0;
    }

    if (cmd_send->parsed()) {
      if (s.sim && run_phases(s, "connect") != 0) return 1;
      auto reply = s.deployer->send_direct(s.descriptor, s.state, send_conn,
                                           from_hex(send_payload_hex));
      write_file(s.state_path, s.state.serialize());
      if (reply)
        std::printf("reply: %s\n", reply->empty() ? "(empty)" : to_hex(*reply).c_str());
      else
        std::printf("sent\n");
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
