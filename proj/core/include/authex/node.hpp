#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>

#include "authex/module.hpp"

namespace authex::tee {

enum class Flavor { sancus, trustzone, sgx_sim };

Flavor flavor_from_string(const std::string& s);
std::string flavor_to_string(Flavor f);

struct NodeConfig {
  std::string node_id;
  std::string address;  // host:port
  Flavor flavor = Flavor::sancus;
  crypto::Key128 root_key;  // node key / HUK / platform master
  std::set<uint16_t> vendors;
  size_t max_modules = 256;

  /// Textual key-value document (test deployments only carry the root key).
  static NodeConfig from_text(const std::string& text);
  std::string to_text() const;
};

// Key chain: vendor_key = kdf128(root || vendor_id_be), module_key =
// kdf128(vendor_key || identity). The sgx-sim flavor derives module keys
// directly from the platform root and verifies quotes with a shared quoting
// key instead.
crypto::Key128 derive_vendor_key(const crypto::Key128& root, uint16_t vendor_id);
crypto::Key128 derive_module_key(const crypto::Key128& vendor_key,
                                 const std::array<uint8_t, 32>& identity);
crypto::Key128 derive_quoting_key(const crypto::Key128& root);
crypto::Key128 derive_module_key_for(Flavor flavor, const crypto::Key128& root, uint16_t vendor_id,
                                     const std::array<uint8_t, 32>& identity);

/// Verifier side of the sgx-sim quote flavor; shares the platform quoting key.
bool verify_sgx_quote(const crypto::Key128& quoting_key,
                      const std::array<uint8_t, 32>& identity, BytesView challenge,
                      BytesView evidence);

/// One simulated TEE node: loads modules with identity measurement, keeps them
/// isolated by construction, and tracks caller identity across intra-node
/// calls. Single-threaded per node.
class Node : public runtime::ModuleEnv {
 public:
  using LocalEventSink = std::function<void(uint16_t module_id, uint16_t conn_id, Bytes sealed)>;
  using HostTransport = std::function<Bytes(const std::string& address, BytesView frame)>;

  explicit Node(NodeConfig config);

  const NodeConfig& config() const { return config_; }

  crypto::Key128 vendor_key(uint16_t vendor_id) const;

  std::pair<uint16_t, std::array<uint8_t, 32>> load_module(BytesView package_bytes);
  void remove_module(uint16_t module_id);
  bool has_module(uint16_t module_id) const { return modules_.count(module_id) != 0; }
  runtime::SecurityModule& module(uint16_t module_id);

  /// Flavor-specific attestation evidence. sancus / trustzone: 16-byte MAC
  /// over the challenge; sgx-sim: identity || challenge || MAC under the
  /// platform quoting key.
  Bytes attest(uint16_t module_id, BytesView challenge);

  Bytes call_entry(uint16_t caller, uint16_t module_id, uint16_t entry, BytesView args);
  uint16_t current_caller() const { return caller_stack_.empty() ? runtime::kCallerUntrusted : caller_stack_.back(); }

  void set_local_event_sink(LocalEventSink sink) { local_sink_ = std::move(sink); }
  void set_host_transport(HostTransport t) { host_transport_ = std::move(t); }
  void set_rng(crypto::Rng rng) { rng_ = std::move(rng); }

  /// Clears all modules and ids but preserves the root key; the epoch counter
  /// makes stale module ids detectable.
  void reset();
  uint64_t epoch() const { return epoch_; }
  uint16_t next_module_id() const { return next_id_; }

  // ModuleEnv (device hooks are overridden by the secure-io device bus).
  Bytes call_module(uint16_t caller, uint16_t module_id, uint16_t entry, BytesView args) override;
  void device_write(uint16_t module_id, const std::string& device_id, BytesView value,
                    const std::string& attribution) override;
  Bytes device_read(uint16_t module_id, const std::string& device_id) override;
  crypto::Rng& rng() override { return rng_; }
  Bytes host_request(const std::string& address, BytesView frame) override;

  using DeviceWriteFn =
      std::function<void(uint16_t module_id, const std::string&, BytesView, const std::string&)>;
  using DeviceReadFn = std::function<Bytes(uint16_t module_id, const std::string&)>;
  void set_device_bus(DeviceWriteFn w, DeviceReadFn r) {
    device_write_ = std::move(w);
    device_read_ = std::move(r);
  }

  const std::map<uint16_t, std::unique_ptr<runtime::SecurityModule>>& modules() const {
    return modules_;
  }

 private:
  NodeConfig config_;
  std::map<uint16_t, std::unique_ptr<runtime::SecurityModule>> modules_;
  uint16_t next_id_ = 1;  // ids assigned in load order, starting at 1
  uint64_t epoch_ = 0;
  std::vector<uint16_t> caller_stack_;
  LocalEventSink local_sink_;
  HostTransport host_transport_;
  DeviceWriteFn device_write_;
  DeviceReadFn device_read_;
  crypto::Rng rng_;
};

}  // namespace authex::tee
