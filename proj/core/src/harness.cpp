#include "authex/harness.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <unordered_map>

#include "authex/behaviors_std.hpp"
#include "json.hpp"

namespace authex::harness {

using crypto::Key128;
using deploy::Descriptor;
using deploy::EndpointRef;
using net::Frame;
using net::Op;

void ensure_behaviors_registered() {
  static const bool once = [] {
    apps::register_std_behaviors();
    io::register_driver_behaviors();
    return true;
  }();
  (void)once;
}

namespace {

std::string digest(BytesView frame) {
  auto h = crypto::sha256(frame);
  return to_hex(BytesView(h.data(), 8));
}

}  // namespace

bool AttackScript::roll(double p) { return p > 0 && rng_.below(1'000'000) < p * 1'000'000; }

std::vector<Bytes> AttackScript::process(const std::string& link, const Bytes& frame) {
  capture_.emplace_back(link, frame);
  bool drop = roll(config_.p_drop);
  bool duplicate = roll(config_.p_duplicate);
  bool corrupt = roll(config_.p_corrupt);
  bool reorder = roll(config_.p_reorder);
  bool replay = roll(config_.p_replay);
  bool inject = roll(config_.p_inject);

  std::vector<Bytes> out;
  std::string actions;
  Bytes f = frame;
  if (corrupt && !f.empty()) {
    size_t bit = rng_.below(f.size() * 8);
    f[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
    actions += " corrupt";
  }
  if (drop) {
    actions += " drop";
  } else if (reorder) {
    // Held back until the next frame on this link passes.
    auto held = held_back_.find(link);
    if (held != held_back_.end()) {
      out.push_back(held->second);
      held->second = f;
    } else {
      held_back_[link] = f;
    }
    actions += " reorder";
  } else {
    out.push_back(f);
    if (duplicate) {
      out.push_back(f);
      actions += " duplicate";
    }
    auto held = held_back_.find(link);
    if (held != held_back_.end()) {
      out.push_back(held->second);
      held_back_.erase(held);
      actions += " release-held";
    }
  }
  if (replay && !capture_.empty()) {
    out.push_back(capture_[rng_.below(capture_.size())].second);
    actions += " replay";
  }
  if (inject) {
    out.push_back(rng_.bytes(rng_.below(64) + 1));
    actions += " inject";
  }
  if (actions.empty()) actions = " pass";
  log_.push_back(link + actions + " " + digest(frame));
  return out;
}

std::vector<std::string> CausalTrace::lines() const {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records)
    out.push_back(std::to_string(r.ts) + " " + r.kind + " " + r.subject + " " + r.data);
  return out;
}

VirtualNetwork::VirtualNetwork() : provider_([this] { return clock_; }) {}

tee::Node& VirtualNetwork::add_node(const tee::NodeConfig& config) {
  if (rigs_.count(config.address)) fail(Err::ScenarioError, "address already in use");
  NodeRig rig;
  rig.node = std::make_unique<tee::Node>(config);
  rig.manager = std::make_unique<net::EventManager>(*rig.node, *this);
  rig.bus = std::make_unique<io::DeviceBus>(*rig.node, [this] { return clock_; });
  rig.node->set_host_transport([this](const std::string& addr, BytesView raw) {
    return request(addr, Frame::decode(raw)).encode();
  });
  provider_.register_node(config);
  auto [it, ok] = rigs_.emplace(config.address, std::move(rig));
  return *it->second.node;
}

NodeRig& VirtualNetwork::rig(const std::string& address) {
  auto it = rigs_.find(address);
  if (it == rigs_.end()) fail(Err::NodeUnreachable, "no node at " + address);
  return it->second;
}

void VirtualNetwork::attach_device(const std::string& address, const std::string& device_id,
                                   io::DeviceKind kind) {
  NodeRig& r = rig(address);
  const io::DriverBinding& binding = r.bus->attach_device(device_id, kind);
  provider_.register_driver(r.node->config().node_id, binding);
  device_home_[device_id] = address;
}

void VirtualNetwork::inject_physical_input(const std::string& device_id, BytesView value) {
  auto it = device_home_.find(device_id);
  if (it == device_home_.end()) fail(Err::UnknownDevice, "no device " + device_id);
  trace_.records.push_back({clock_, "input", device_id, to_hex(value)});
  rig(it->second).bus->inject_physical_input(device_id, value);
  run_until_idle();
}

Frame VirtualNetwork::request(const std::string& address, const Frame& frame) {
  clock_ += link_latency_ms_;  // control-plane RPCs also cross a link
  trace_.records.push_back({clock_, "rpc", address,
                            std::to_string(static_cast<int>(frame.op)) + ":" + digest(frame.body)});
  auto resp = rig(address).manager->process(frame);
  return resp.value_or(Frame::ack());
}

void VirtualNetwork::post(const std::string& address, const Frame& frame) {
  Bytes raw = frame.encode();
  if (attack_) {
    for (Bytes& out : attack_->process("->" + address, raw)) queue_.emplace_back(address, std::move(out));
  } else {
    queue_.emplace_back(address, std::move(raw));
  }
}

void VirtualNetwork::deliver(const std::string& address, const Bytes& raw) {
  try {
    Frame frame = Frame::decode(raw);
    if (address == reply_address()) {
      if (frame.op != Op::RemoteEvent) return;
      ByteReader r(frame.body);
      r.u16();  // module id slot is unused on the deployer endpoint
      uint16_t conn_id = r.u16();
      replies_[conn_id] = r.rest();
      return;
    }
    auto it = rigs_.find(address);
    if (it == rigs_.end()) return;
    it->second.manager->process(frame);  // responses to posted frames go nowhere
  } catch (const std::exception&) {
    // Hostile bytes; drop.
  }
}

void VirtualNetwork::run_until_idle() {
  while (!queue_.empty()) {
    auto [address, raw] = std::move(queue_.front());
    queue_.pop_front();
    clock_ += link_latency_ms_;
    trace_.records.push_back({clock_, "frame", address, digest(raw)});
    deliver(address, raw);
  }
}

std::optional<Bytes> VirtualNetwork::wait_reply(uint16_t conn_id, uint64_t) {
  run_until_idle();
  auto it = replies_.find(conn_id);
  if (it == replies_.end()) return std::nullopt;
  Bytes out = std::move(it->second);
  replies_.erase(it);
  return out;
}

std::map<std::string, std::vector<Bytes>> VirtualNetwork::actuations() const {
  std::map<std::string, std::vector<Bytes>> out;
  for (const auto& [addr, r] : rigs_)
    for (const auto& e : r.bus->physical_log())
      if (e.direction == io::DeviceKind::output) out[e.device_id].push_back(e.value);
  return out;
}

namespace {

std::vector<std::pair<std::string, io::DeviceKind>> devices_of(const deploy::NodeDecl& n) {
  std::vector<std::pair<std::string, io::DeviceKind>> out;
  auto it = n.extra.find("devices");
  if (it == n.extra.end()) return out;
  std::istringstream in(it->second);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto colon = item.find(':');
    if (colon == std::string::npos) fail(Err::SchemaError, "device spec must be id:kind");
    std::string kind = item.substr(colon + 1);
    if (kind != "input" && kind != "output") fail(Err::SchemaError, "device kind must be input|output");
    out.emplace_back(item.substr(0, colon),
                     kind == "input" ? io::DeviceKind::input : io::DeviceKind::output);
  }
  return out;
}

}  // namespace

Scenario::Scenario(Descriptor d, uint64_t seed, const ScenarioOptions& options)
    : descriptor_(std::move(d)), script_(seed, options.attack) {
  ensure_behaviors_registered();
  net_ = std::make_unique<VirtualNetwork>();
  net_->set_link_latency(options.link_latency_ms);

  std::set<uint16_t> vendors{io::kInfraVendorId};
  for (const auto& m : descriptor_.modules) vendors.insert(m.vendor_id);

  crypto::Rng roots(seed);
  for (const auto& n : descriptor_.nodes) {
    tee::NodeConfig cfg;
    cfg.node_id = n.name;
    cfg.address = n.address;
    cfg.flavor = n.flavor;
    cfg.root_key = roots.key();
    cfg.vendors = vendors;
    net_->add_node(cfg).set_rng(crypto::Rng(roots.u64()));
    for (const auto& [device, kind] : devices_of(n)) net_->attach_device(n.address, device, kind);
  }

  deployer_ = std::make_unique<deploy::Deployer>(*net_, &net_->provider(),
                                                 crypto::Rng(seed ^ 0x9e3779b97f4a7c15ull));
  for (auto op : {&deploy::Deployer::deploy, &deploy::Deployer::attest, &deploy::Deployer::connect}) {
    deploy::OpReport report = ((*deployer_).*op)(descriptor_, state_);
    if (!report.ok()) fail(Err::ScenarioError, "deployment failed: " + report.failures.front());
  }

  if (options.insecure_no_verify) {
    for (const auto& [name, ms] : state_.modules)
      net_->rig(descriptor_.node(ms.node).address)
          .node->module(ms.module_id)
          .set_insecure_no_verify(true);
  }
}

void Scenario::stimulate(const Stimulus& s) {
  if (s.kind == Stimulus::Kind::device) {
    device_inputs_[s.target].push_back(s.value);
    net_->inject_physical_input(s.target, s.value);
  } else {
    direct_inputs_[s.target].push_back(s.value);
    net_->trace().records.push_back({net_->now_ms(), "direct", s.target, to_hex(s.value)});
    try {
      deployer_->send_direct(descriptor_, state_, s.target, s.value, 0);
    } catch (const Error& e) {
      if (e.code() != Err::Timeout) throw;  // reply lost to the attacker: availability only
    }
    net_->run_until_idle();
  }
}

void Scenario::run(const std::vector<Stimulus>& schedule) {
  arm_attack();
  for (const auto& s : schedule) stimulate(s);
  disarm_attack();
}

ScenarioResult Scenario::result() const {
  ScenarioResult result;
  result.device_inputs = device_inputs_;
  result.direct_inputs = direct_inputs_;
  result.trace = net_->trace();
  for (const auto& n : descriptor_.nodes)
    for (const auto& e : net_->rig(n.address).bus->physical_log())
      if (e.direction == io::DeviceKind::output)
        result.trace.records.push_back({e.ts, "actuation", e.device_id,
                                        to_hex(e.value) + " " + e.attribution});
  std::stable_sort(result.trace.records.begin(), result.trace.records.end(),
                   [](const TraceRecord& a, const TraceRecord& b) { return a.ts < b.ts; });
  result.actuations = net_->actuations();
  result.attack_log = script_.log();
  result.state = state_;
  return result;
}

ScenarioResult run_scenario(const Descriptor& d, uint64_t seed,
                            const std::vector<Stimulus>& schedule,
                            const ScenarioOptions& options) {
  Scenario scenario(d, seed, options);
  scenario.run(schedule);
  return scenario.result();
}

// ---------------------------------------------------------------------------
// Authenticity oracle: pure reference interpreter + prefix-interleaving search.

namespace {

class CaptureContext : public runtime::BehaviorContext {
 public:
  void emit(uint16_t output_io_id, BytesView payload) override {
    emissions.emplace_back(output_io_id, Bytes(payload.begin(), payload.end()));
  }
  std::vector<std::pair<uint16_t, Bytes>> emissions;
};

struct InterpEdge {
  int src_module = -1;  // -1: externally sourced (device input or direct)
  uint16_t src_io = 0;
  const std::vector<Bytes>* fixed = nullptr;
  int dest_module = -1;  // -1: output device
  uint16_t dest_io = 0;
  bool dest_is_handler = false;
  std::string dest_device;
};

struct SearchState {
  std::vector<Bytes> snapshots;              // per module
  std::vector<std::vector<Bytes>> emitted;   // per module-sourced edge
  std::vector<size_t> delivered;             // per edge
  std::vector<size_t> matched;               // per output device

  std::string key() const {
    std::string k;
    auto put = [&](size_t v) { k += std::to_string(v) + ","; };
    for (const auto& s : snapshots) {
      put(s.size());
      k.append(s.begin(), s.end());
    }
    for (const auto& e : emitted) {
      put(e.size());
      for (const auto& b : e) {
        put(b.size());
        k.append(b.begin(), b.end());
      }
    }
    for (size_t v : delivered) put(v);
    k += "|";
    for (size_t v : matched) put(v);
    return k;
  }
};

}  // namespace

OracleVerdict verify_authenticity(const Descriptor& d,
                                  const std::map<std::string, std::vector<Bytes>>& device_inputs,
                                  const std::map<std::string, std::vector<Bytes>>& direct_inputs,
                                  const std::map<std::string, std::vector<Bytes>>& actuations) {
  ensure_behaviors_registered();
  static const std::vector<Bytes> kEmpty;

  // Fresh behavior instances sharing source semantics with the deployment.
  std::vector<std::unique_ptr<runtime::Behavior>> behaviors;
  std::unordered_map<std::string, int> module_index;
  for (const auto& m : d.modules) {
    module_index[m.name] = static_cast<int>(behaviors.size());
    behaviors.push_back(runtime::BehaviorRegistry::global().make(m.behavior, m.init));
  }

  std::vector<std::string> devices;
  std::vector<const std::vector<Bytes>*> device_logs;
  for (const auto& [dev, log] : actuations) {
    devices.push_back(dev);
    device_logs.push_back(&log);
  }
  auto device_idx = [&](const std::string& dev) {
    for (size_t i = 0; i < devices.size(); i++)
      if (devices[i] == dev) return static_cast<int>(i);
    return -1;
  };

  std::vector<InterpEdge> edges;
  for (const auto& c : d.connections) {
    InterpEdge e;
    if (c.from.kind == EndpointRef::Kind::module_io) {
      const auto& m = d.module(c.from.module);
      e.src_module = module_index.at(c.from.module);
      bool req = false;
      for (const auto& decl : m.outputs)
        if (decl.label == c.from.label) e.src_io = decl.io_id;
      for (const auto& decl : m.requests)
        if (decl.label == c.from.label) e.src_io = decl.io_id, req = true;
      (void)req;
    } else if (c.from.kind == EndpointRef::Kind::device) {
      auto it = device_inputs.find(c.from.device);
      e.fixed = it == device_inputs.end() ? &kEmpty : &it->second;
    } else {
      auto it = direct_inputs.find(c.name);
      e.fixed = it == direct_inputs.end() ? &kEmpty : &it->second;
    }
    if (c.to.kind == EndpointRef::Kind::module_io) {
      const auto& m = d.module(c.to.module);
      e.dest_module = module_index.at(c.to.module);
      for (const auto& decl : m.inputs)
        if (decl.label == c.to.label) e.dest_io = decl.io_id;
      for (const auto& decl : m.handlers)
        if (decl.label == c.to.label) e.dest_io = decl.io_id, e.dest_is_handler = true;
    } else {
      e.dest_device = c.to.device;
    }
    edges.push_back(std::move(e));
  }

  size_t n_src_edges = 0;
  std::vector<int> emitted_slot(edges.size(), -1);
  for (size_t i = 0; i < edges.size(); i++)
    if (edges[i].src_module >= 0) emitted_slot[i] = static_cast<int>(n_src_edges++);

  SearchState init;
  init.snapshots.reserve(behaviors.size());
  for (const auto& b : behaviors) init.snapshots.push_back(b->snapshot_state());
  init.emitted.resize(n_src_edges);
  init.delivered.resize(edges.size(), 0);
  init.matched.resize(devices.size(), 0);

  auto is_goal = [&](const SearchState& s) {
    for (size_t i = 0; i < devices.size(); i++)
      if (s.matched[i] != device_logs[i]->size()) return false;
    return true;
  };

  OracleVerdict verdict;
  std::vector<size_t> best_matched(devices.size(), 0);
  std::unordered_set<std::string> seen;
  std::vector<SearchState> frontier{init};
  seen.insert(init.key());
  constexpr size_t kMaxStates = 500'000;

  while (!frontier.empty()) {
    SearchState s = std::move(frontier.back());
    frontier.pop_back();
    verdict.states_explored++;
    for (size_t i = 0; i < devices.size(); i++) best_matched[i] = std::max(best_matched[i], s.matched[i]);
    if (is_goal(s)) {
      verdict.ok = true;
      return verdict;
    }
    if (verdict.states_explored > kMaxStates) {
      verdict.ok = false;
      verdict.violations.push_back("state-space budget exhausted before justifying the log");
      return verdict;
    }

    for (size_t i = 0; i < edges.size(); i++) {
      const InterpEdge& e = edges[i];
      const std::vector<Bytes>& avail =
          e.src_module >= 0 ? s.emitted[emitted_slot[i]] : *e.fixed;
      if (s.delivered[i] >= avail.size()) continue;
      const Bytes value = avail[s.delivered[i]];

      SearchState next = s;
      next.delivered[i]++;
      if (e.dest_module < 0) {
        int di = device_idx(e.dest_device);
        // Actuation delivery must line up with the observed physical log.
        if (di < 0 || next.matched[di] >= device_logs[di]->size()
            || (*device_logs[di])[next.matched[di]] != value)
          continue;
        next.matched[di]++;
      } else {
        runtime::Behavior& b = *behaviors[e.dest_module];
        b.restore_state(next.snapshots[e.dest_module]);
        CaptureContext ctx;
        try {
          if (e.dest_is_handler)
            b.on_request(ctx, e.dest_io, value);
          else
            b.on_input(ctx, e.dest_io, value);
        } catch (const std::exception&) {
          // Same as the deployed runtime: the event is consumed either way.
        }
        next.snapshots[e.dest_module] = b.snapshot_state();
        for (const auto& [out_io, payload] : ctx.emissions)
          for (size_t j = 0; j < edges.size(); j++)
            if (edges[j].src_module == e.dest_module && edges[j].src_io == out_io)
              next.emitted[emitted_slot[j]].push_back(payload);
      }
      if (seen.insert(next.key()).second) frontier.push_back(std::move(next));
    }
  }

  verdict.ok = false;
  for (size_t i = 0; i < devices.size(); i++) {
    if (best_matched[i] == device_logs[i]->size()) continue;
    verdict.violations.push_back("device " + devices[i] + ": actuation #"
                                 + std::to_string(best_matched[i]) + " value "
                                 + to_hex((*device_logs[i])[best_matched[i]])
                                 + " is not justified by any input interleaving");
  }
  if (verdict.violations.empty())
    verdict.violations.push_back("observed actuations are not jointly producible");
  return verdict;
}

// ---------------------------------------------------------------------------
// Benchmark

std::string BenchReport::render() const {
  std::ostringstream out;
  out << "Operation                    Time (ms)    % of RTT\n";
  auto row = [&](const std::string& label, double ms, double pct) {
    out << label;
    for (size_t i = label.size(); i < 29; i++) out << ' ';
    char buf[64];
    snprintf(buf, sizeof(buf), "%9.3f   %9.2f\n", ms, pct);
    out << buf;
  };
  for (const auto& r : rows) row(r.label, r.ms, r.pct);
  row("RTT", total_ms, 100.0);
  out << "(" << iterations << " iterations; simulation-specific values, not comparable"
      << " with hardware measurements)\n";
  return out.str();
}

std::string BenchReport::to_json() const {
  nlohmann::json j;
  j["iterations"] = iterations;
  j["total_ms"] = total_ms;
  j["comparable"] = comparable;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back({{"label", r.label}, {"ms", r.ms}, {"pct", r.pct}});
  return j.dump(2);
}

BenchReport bench_rtt(const Descriptor& d, const std::string& route, size_t iterations,
                      uint64_t seed) {
  ensure_behaviors_registered();
  const deploy::ConnDecl& conn = d.connection(route);
  if (conn.to.kind != EndpointRef::Kind::module_io)
    fail(Err::Unestablished, "route must target a module handler");

  VirtualNetwork vnet;
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
    vnet.add_node(cfg).set_rng(crypto::Rng(roots.u64()));
    for (const auto& [device, kind] : devices_of(n)) vnet.attach_device(n.address, device, kind);
  }
  deploy::Deployer deployer(vnet, &vnet.provider(), crypto::Rng(seed + 1));
  deploy::DeploymentState state;
  for (auto op : {&deploy::Deployer::deploy, &deploy::Deployer::attest, &deploy::Deployer::connect}) {
    deploy::OpReport report = (deployer.*op)(d, state);
    if (!report.ok()) fail(Err::Unestablished, "deployment failed: " + report.failures.front());
  }
  const deploy::ConnState& cs = state.connections.at(route);
  if (!cs.established || !cs.is_request)
    fail(Err::Unestablished, "route is not an established direct request connection");

  using clk = std::chrono::steady_clock;
  auto ms_since = [](clk::time_point t0) {
    return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
  };

  Bytes payload = crypto::Rng(seed).bytes(16);
  double total = 0;
  auto t_all = clk::now();
  for (size_t i = 0; i < iterations; i++) {
    auto reply = deployer.send_direct(d, state, route, payload, 1000);
    if (!reply) fail(Err::Timeout, "request route returned no reply");
  }
  total = ms_since(t_all);

  // Component measurements are taken with the same primitives the route used;
  // the residual goes into "Other" so the rows always sum to the total.
  const deploy::ModuleState& dest = state.modules.at(conn.to.module);
  const std::string dest_addr = d.node(dest.node).address;

  auto t0 = clk::now();
  for (size_t i = 0; i < iterations; i++) {
    Key128 k = cs.key;
    auto sealed = crypto::aead_seal(cs.suite, k, crypto::AeadNonce::counter(1), payload, payload);
    crypto::aead_open(cs.suite, k, crypto::AeadNonce::counter(1), sealed.ciphertext, sealed.tag,
                      payload);
    auto sealed2 = crypto::aead_seal(cs.suite, k, crypto::AeadNonce::reply_counter(1), payload,
                                     payload);
    crypto::aead_open(cs.suite, k, crypto::AeadNonce::reply_counter(1), sealed2.ciphertext,
                      sealed2.tag, payload);
  }
  double t_crypto = ms_since(t0);

  t0 = clk::now();
  for (size_t i = 0; i < 2 * iterations; i++) {
    // Boundary crossing with a no-op body: HandleInput discards short args.
    vnet.request(dest_addr, {Op::CallEntry, net::EventManager::encode_call_entry(
                                                dest.module_id, runtime::kEntryHandleInput, {})});
  }
  double t_boundary = ms_since(t0);

  t0 = clk::now();
  for (size_t i = 0; i < 2 * iterations; i++) {
    vnet.post(vnet.reply_address(),
              {Op::RemoteEvent, net::EventManager::encode_remote_event(0, 0xffff, payload)});
    vnet.run_until_idle();
  }
  double t_network = ms_since(t0);

  double accounted = t_crypto + t_boundary + t_network;
  double other = total > accounted ? total - accounted : 0.0;

  BenchReport report;
  report.iterations = iterations;
  report.total_ms = total;
  auto add = [&](const std::string& label, double ms) {
    report.rows.push_back({label, ms, total > 0 ? 100.0 * ms / total : 0.0});
  };
  add("AES instructions", t_crypto);
  add("Spongent HW instructions", 0.0);
  add("Spongent SW instructions", 0.0);
  add("Host-enclave boundary", t_boundary);
  add("Secure I/O", 0.0);
  add("Network delay", t_network);
  add("Other", other);
  return report;
}

}  // namespace authex::harness
