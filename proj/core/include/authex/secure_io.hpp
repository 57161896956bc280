#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "authex/node.hpp"

namespace authex::io {

enum class DeviceKind { input, output };

struct PhysicalLogEntry {
  uint64_t ts;
  std::string device_id;
  DeviceKind direction;  // input: harness-injected value; output: actuation
  Bytes value;
  std::string attribution;  // lease-key fingerprint for actuations, "phys" for inputs
};

struct SimDevice {
  std::string device_id;
  DeviceKind kind;
  Bytes state;  // last written value (outputs) / last injected value (inputs)
};

/// Driver packages are provided by the infrastructure vendor.
inline constexpr uint16_t kInfraVendorId = 0;

// Wire entry ids of the driver lease protocol (user entries 0..3).
inline constexpr uint16_t kDriverEntryGetNonce = 3;
inline constexpr uint16_t kDriverEntrySetExclusive = 4;
inline constexpr uint16_t kDriverEntryRelease = 5;
inline constexpr uint16_t kDriverEntryInterrupt = 6;  // input drivers only
inline constexpr uint16_t kMmioEntryAccess = 3;

inline constexpr uint8_t kGrantExclusive = 0x01;
inline constexpr uint8_t kGrantShared = 0x00;

/// Lease-key fingerprint written into the physical log for actuations.
std::string attribution_tag(const crypto::Key128& conn_key);

runtime::ModulePackage make_output_driver_package(const std::string& device_id,
                                                  uint16_t mmio_module_id);
runtime::ModulePackage make_input_driver_package(const std::string& device_id);
runtime::ModulePackage make_mmio_package(const std::string& device_id,
                                         uint16_t expected_driver_id);

/// Registers the driver / mmio behaviors with the global registry.
void register_driver_behaviors();

struct DriverBinding {
  std::string device_id;
  DeviceKind kind;
  uint16_t driver_module_id = 0;
  uint16_t mmio_module_id = 0;  // outputs only
  std::array<uint8_t, 32> driver_identity{};
  uint16_t interrupt_id = 0;  // inputs only
};

/// Per-node device bus: owns the simulated devices and the append-only
/// physical log, boots driver/mmio module pairs, and injects physical inputs
/// with reserved interrupt caller ids.
class DeviceBus {
 public:
  using Clock = std::function<uint64_t()>;

  DeviceBus(tee::Node& node, Clock clock);

  /// Loads the driver (and, for outputs, mmio) modules onto the node and
  /// binds the device. Must run at node boot, before application modules.
  const DriverBinding& attach_device(const std::string& device_id, DeviceKind kind);

  void inject_physical_input(const std::string& device_id, BytesView value);

  const std::vector<PhysicalLogEntry>& physical_log() const { return log_; }
  std::vector<std::string> export_log_lines() const;
  const std::map<std::string, SimDevice>& devices() const { return devices_; }
  const std::map<std::string, DriverBinding>& bindings() const { return bindings_; }
  const DriverBinding& binding(const std::string& device_id) const;

 private:
  tee::Node& node_;
  Clock clock_;
  std::map<std::string, SimDevice> devices_;
  std::map<std::string, DriverBinding> bindings_;
  std::vector<PhysicalLogEntry> log_;
  uint16_t next_interrupt_ = runtime::kCallerInterruptBase;
};

struct AccessLease {
  std::string deployer_id;
  std::string device_id;
  uint64_t granted_at = 0;
  uint64_t expires_at = 0;
  bool exclusive = true;
};

struct GrantBlob {
  uint8_t flags;
  Bytes ciphertext;  // 16 bytes
  Bytes tag;         // 16 bytes

  /// Argument layout for the driver's set-exclusive entry:
  /// flags(1) || ciphertext(16) || tag(16) || conn_id(2).
  Bytes encode_set_exclusive_args(uint16_t conn_id) const;
};

/// Infrastructure-provider role: holds node root keys and the driver
/// directory, grants exclusive/shared device leases, and acts as the sgx-sim
/// verification service. The deployer reaches it over the trusted in-process
/// channel.
class Provider {
 public:
  using Clock = std::function<uint64_t()>;

  explicit Provider(Clock clock, uint64_t lease_duration_ms = 3600'000);

  void register_node(const tee::NodeConfig& config);
  void register_driver(const std::string& node_id, const DriverBinding& binding);

  /// 3-step protocol, step 2: seals the connection key under the driver's
  /// module key with the driver's current nonce (and the grant flags) as
  /// associated data, and records the lease.
  GrantBlob grant(const std::string& deployer_id, const std::string& device_id,
                  BytesView driver_nonce, const crypto::Key128& conn_key, bool exclusive);

  void close_lease(const std::string& deployer_id, const std::string& device_id);
  const std::vector<AccessLease>& active_leases() const { return leases_; }

  /// Deployer-facing trusted APIs.
  crypto::Key128 vendor_key(const std::string& node_id, uint16_t vendor_id) const;
  /// sgx-sim verification service: checks the quote and, on success, hands
  /// the deployer the module key.
  crypto::Key128 verify_quote(const std::string& node_id, const std::array<uint8_t, 32>& identity,
                              BytesView challenge, BytesView evidence) const;

  const crypto::Key128& node_root(const std::string& node_id) const;
  crypto::Key128 driver_module_key(const std::string& device_id) const;
  const DriverBinding& driver(const std::string& device_id) const;
  const std::string& driver_node(const std::string& device_id) const;
  const std::string& driver_node_address(const std::string& device_id) const;

 private:
  void expire_leases();

  Clock clock_;
  uint64_t lease_duration_ms_;
  std::map<std::string, tee::NodeConfig> nodes_;
  struct DriverRecord {
    std::string node_id;
    DriverBinding binding;
  };
  std::map<std::string, DriverRecord> drivers_;
  std::vector<AccessLease> leases_;
};

}  // namespace authex::io
