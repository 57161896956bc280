#pragma once

#include <deque>
#include <memory>
#include <unordered_set>

#include "authex/deploy.hpp"
#include "authex/event_manager.hpp"
#include "authex/secure_io.hpp"

namespace authex::harness {

/// Per-frame action probabilities of the hostile network. All randomness comes
/// from the script's seed, so a (seed, config) pair is fully deterministic.
struct AttackConfig {
  double p_drop = 0, p_duplicate = 0, p_corrupt = 0, p_reorder = 0, p_replay = 0, p_inject = 0;

  static AttackConfig passthrough() { return {}; }
  /// The mix used by the seeded attack corpus.
  static AttackConfig standard() { return {0.15, 0.10, 0.10, 0.10, 0.10, 0.05}; }
};

/// Deterministic man-in-the-middle: maps each outbound frame to zero or more
/// frames actually delivered, keeping a capture for replays and a per-link
/// hold-back slot for reordering.
class AttackScript {
 public:
  AttackScript() = default;
  AttackScript(uint64_t seed, AttackConfig config) : rng_(seed), config_(config) {}

  std::vector<Bytes> process(const std::string& link, const Bytes& frame);
  const std::vector<std::string>& log() const { return log_; }
  /// Every frame ever seen, with the link ("-><address>") it traversed.
  const std::vector<std::pair<std::string, Bytes>>& capture() const { return capture_; }

 private:
  bool roll(double p);

  crypto::Rng rng_{0};
  AttackConfig config_;
  std::vector<std::pair<std::string, Bytes>> capture_;
  std::map<std::string, Bytes> held_back_;
  std::vector<std::string> log_;
};

struct TraceRecord {
  uint64_t ts;
  std::string kind;     // input | direct | frame | actuation | attack
  std::string subject;  // device id, link, or connection name
  std::string data;     // hex payload or frame digest
};

struct CausalTrace {
  std::vector<TraceRecord> records;
  std::vector<std::string> lines() const;
};

struct NodeRig {
  std::unique_ptr<tee::Node> node;
  std::unique_ptr<net::EventManager> manager;
  std::unique_ptr<io::DeviceBus> bus;
};

/// All nodes and links of one simulation, single-threaded and deterministic.
/// Control-plane RPCs are synchronous and reliable; posted events traverse the
/// (optionally hostile) link queue under a simulated clock.
class VirtualNetwork : public net::Transport, public deploy::DeployerNet {
 public:
  VirtualNetwork();

  tee::Node& add_node(const tee::NodeConfig& config);
  NodeRig& rig(const std::string& address);
  io::Provider& provider() { return provider_; }

  /// Boots the driver/mmio modules and registers the device with the provider.
  void attach_device(const std::string& address, const std::string& device_id, io::DeviceKind kind);
  void inject_physical_input(const std::string& device_id, BytesView value);

  void set_attack(AttackScript* script) { attack_ = script; }
  void set_link_latency(uint64_t ms) { link_latency_ms_ = ms; }

  // Transport + DeployerNet (one implementation serves both bases).
  net::Frame request(const std::string& address, const net::Frame& frame) override;
  void post(const std::string& address, const net::Frame& frame) override;
  std::string reply_address() override { return "mem://deployer"; }
  std::optional<Bytes> wait_reply(uint16_t conn_id, uint64_t timeout_ms) override;
  uint64_t now_ms() override { return clock_; }

  /// Drains the in-flight queue; every delivery advances the simulated clock.
  void run_until_idle();

  CausalTrace& trace() { return trace_; }
  /// Actuation logs of all device buses merged into per-device sequences.
  std::map<std::string, std::vector<Bytes>> actuations() const;

 private:
  void deliver(const std::string& address, const Bytes& raw);

  uint64_t clock_ = 0;
  uint64_t link_latency_ms_ = 1;
  std::map<std::string, NodeRig> rigs_;
  std::map<std::string, std::string> device_home_;  // device id -> node address
  io::Provider provider_;
  AttackScript* attack_ = nullptr;
  std::deque<std::pair<std::string, Bytes>> queue_;
  std::map<uint16_t, Bytes> replies_;
  CausalTrace trace_;
};

/// One scheduled stimulus: a physical input on a device, or a payload sent on
/// a direct deployer connection.
struct Stimulus {
  enum class Kind { device, direct };
  Kind kind;
  std::string target;  // device id or connection name
  Bytes value;
};

struct ScenarioResult {
  CausalTrace trace;
  std::map<std::string, std::vector<Bytes>> device_inputs;
  std::map<std::string, std::vector<Bytes>> direct_inputs;  // keyed by connection name
  std::map<std::string, std::vector<Bytes>> actuations;
  std::vector<std::string> attack_log;
  deploy::DeploymentState state;
};

struct ScenarioOptions {
  AttackConfig attack = AttackConfig::passthrough();
  /// Negative control: disables tag verification inside every application
  /// module, which must make the authenticity oracle fire.
  bool insecure_no_verify = false;
  uint64_t link_latency_ms = 1;
};

/// A booted deployment under harness control: nodes in-process, application
/// deployed over a clean network, attack script armed for the stimulus phase.
class Scenario {
 public:
  Scenario(deploy::Descriptor d, uint64_t seed, const ScenarioOptions& options = {});

  void stimulate(const Stimulus& s);
  void run(const std::vector<Stimulus>& schedule);
  /// Merged trace / logs snapshot; the scenario stays usable afterwards.
  ScenarioResult result() const;

  VirtualNetwork& net() { return *net_; }
  deploy::Deployer& deployer() { return *deployer_; }
  deploy::DeploymentState& state() { return state_; }
  AttackScript& script() { return script_; }
  const deploy::Descriptor& descriptor() const { return descriptor_; }
  void arm_attack() { net_->set_attack(&script_); }
  void disarm_attack() { net_->set_attack(nullptr); }

 private:
  deploy::Descriptor descriptor_;
  std::unique_ptr<VirtualNetwork> net_;
  std::unique_ptr<deploy::Deployer> deployer_;
  deploy::DeploymentState state_;
  AttackScript script_;
  std::map<std::string, std::vector<Bytes>> device_inputs_;
  std::map<std::string, std::vector<Bytes>> direct_inputs_;
};

/// Boots the descriptor's nodes in-process, deploys cleanly, then replays the
/// stimulus schedule through the hostile network.
ScenarioResult run_scenario(const deploy::Descriptor& d, uint64_t seed,
                            const std::vector<Stimulus>& schedule,
                            const ScenarioOptions& options = {});

struct OracleVerdict {
  bool ok = true;
  std::vector<std::string> violations;
  size_t states_explored = 0;
};

/// The authenticity oracle: a pure, network-free interpreter of the deployed
/// behaviors. Checks that every logged actuation is producible by some
/// interleaving in which each channel delivers a prefix of what its source
/// emitted, per-source order preserved.
OracleVerdict verify_authenticity(const deploy::Descriptor& d,
                                  const std::map<std::string, std::vector<Bytes>>& device_inputs,
                                  const std::map<std::string, std::vector<Bytes>>& direct_inputs,
                                  const std::map<std::string, std::vector<Bytes>>& actuations);

inline OracleVerdict verify_authenticity(const deploy::Descriptor& d, const ScenarioResult& r) {
  return verify_authenticity(d, r.device_inputs, r.direct_inputs, r.actuations);
}

struct BenchReport {
  struct Row {
    std::string label;
    double ms = 0;
    double pct = 0;
  };
  std::vector<Row> rows;
  double total_ms = 0;
  size_t iterations = 0;
  /// Absolute values are environment-specific and must not be compared
  /// against published hardware numbers.
  bool comparable = false;

  std::string render() const;
  std::string to_json() const;
};

/// Round-trip benchmark over a direct request connection, reported as a
/// per-stage breakdown whose rows sum to the measured total.
BenchReport bench_rtt(const deploy::Descriptor& d, const std::string& route, size_t iterations,
                      uint64_t seed = 1);

/// Registers every built-in behavior (applications and drivers).
void ensure_behaviors_registered();

}  // namespace authex::harness
