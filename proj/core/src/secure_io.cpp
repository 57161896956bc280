#include "authex/secure_io.hpp"

#include <algorithm>

namespace authex::io {

using crypto::AeadNonce;
using crypto::CipherSuite;
using crypto::Key128;
using crypto::Tag128;
using runtime::Behavior;
using runtime::BehaviorContext;
using runtime::BehaviorRegistry;
using runtime::Direction;
using runtime::ModulePackage;

std::string attribution_tag(const Key128& conn_key) {
  Key128 t = crypto::kdf128(conn_key, to_bytes("ATTR"));
  return to_hex(BytesView(t.bytes.data(), 4));
}

namespace {

Bytes driver_init(const std::string& device_id, std::optional<uint16_t> peer) {
  Bytes init = to_bytes(device_id);
  init.push_back(0);
  if (peer) put_u16(init, *peer);
  return init;
}

std::pair<std::string, std::optional<uint16_t>> parse_driver_init(BytesView init) {
  auto nul = std::find(init.begin(), init.end(), 0);
  if (nul == init.end()) fail(Err::MalformedPackage, "driver init missing device id");
  std::string device(init.begin(), nul);
  size_t off = device.size() + 1;
  if (init.size() == off) return {device, std::nullopt};
  if (init.size() != off + 2) fail(Err::MalformedPackage, "driver init trailing bytes");
  return {device, static_cast<uint16_t>(init[off] << 8 | init[off + 1])};
}

const std::string kConfirmPrefix = "CONFIRM";
const std::string kReleaseAad = "RELEASE";

/// Shared lease-protocol state machine for driver behaviors.
struct LeaseState {
  std::array<uint8_t, 16> nonce{};
  bool nonce_ready = false;
  bool rotated_once = false;
  uint16_t release_counter = 0;

  void ensure_nonce(BehaviorContext& ctx) {
    if (!nonce_ready) {
      nonce = ctx.rng().bytes16();
      nonce_ready = true;
    }
  }

  /// Opens a grant blob (flags(1) || ct(16) || tag(16) || conn_id(2)) against
  /// the current nonce; returns (conn_key, flags, conn_id) and rotates.
  std::tuple<Key128, uint8_t, uint16_t> accept_grant(BehaviorContext& ctx, BytesView args,
                                                     Bytes& confirmation) {
    if (args.size() != 1 + 16 + 16 + 2) fail(Err::AuthFailure, "malformed grant args");
    ensure_nonce(ctx);
    ByteReader r(args);
    uint8_t flags = r.u8();
    Bytes ct = r.take(16);
    Tag128 tag = Tag128::from(r.take(16));
    uint16_t conn_id = r.u16();

    Bytes aad(nonce.begin(), nonce.end());
    put_u8(aad, flags);
    Bytes key_bytes;
    try {
      key_bytes = ctx.module_open(AeadNonce::counter(0), ct, tag, aad);
    } catch (const Error&) {
      // A blob that fails to open after a completed grant is, in every test
      // reachable case, a replay against the rotated nonce.
      if (rotated_once) fail(Err::NonceMismatch, "grant blob does not match current nonce");
      throw;
    }
    Key128 conn_key = Key128::from(key_bytes);

    Bytes confirm_input = to_bytes(kConfirmPrefix);
    put_bytes(confirm_input, BytesView(nonce.data(), nonce.size()));
    confirmation = crypto::mac_tag(conn_key, confirm_input).as_bytes();

    nonce = ctx.rng().bytes16();
    rotated_once = true;
    release_counter = 0;
    return {conn_key, flags, conn_id};
  }

  /// Verifies a release request (tag-only, reply-domain nonce at the release
  /// counter) under the given connection key.
  void accept_release(BehaviorContext& ctx, const Key128& conn_key, BytesView args) {
    if (args.size() != 16) fail(Err::AuthFailure, "malformed release args");
    Tag128 tag = Tag128::from(args);
    crypto::aead_open(CipherSuite::AesGcm128, conn_key, AeadNonce::reply_counter(release_counter),
                      {}, tag, to_bytes(kReleaseAad));
    release_counter++;
    nonce = ctx.rng().bytes16();
  }

  Bytes snapshot() const {
    Bytes out(nonce.begin(), nonce.end());
    put_u8(out, nonce_ready);
    put_u8(out, rotated_once);
    put_u16(out, release_counter);
    return out;
  }
};

/// Protected driver for one output device. Accepts actuation events only from
/// the current lease owner; forwards register writes to its mmio peer.
class OutputDriverBehavior : public Behavior {
 public:
  explicit OutputDriverBehavior(BytesView init) {
    auto [device, mmio] = parse_driver_init(init);
    device_id_ = device;
    if (!mmio) fail(Err::MalformedPackage, "output driver init missing mmio id");
    mmio_id_ = *mmio;
  }

  void on_input(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    (void)io_id;  // single declared input
    if (!owner_) fail(Err::Unestablished, "no lease owner");
    Bytes args;
    put_u8(args, 1);  // write
    put_u16(args, 0);
    std::string attr = attribution_tag(*owner_);
    put_u8(args, static_cast<uint8_t>(attr.size()));
    put_bytes(args, to_bytes(attr));
    put_bytes(args, payload);
    ctx.call_module(mmio_id_, kMmioEntryAccess, args);
  }

  Bytes on_entry(BehaviorContext& ctx, uint16_t index, BytesView args) override {
    switch (index + runtime::kEntryUserBase) {
      case kDriverEntryGetNonce:
        lease_.ensure_nonce(ctx);
        return Bytes(lease_.nonce.begin(), lease_.nonce.end());
      case kDriverEntrySetExclusive: {
        Bytes confirmation;
        auto [key, flags, conn_id] = lease_.accept_grant(ctx, args, confirmation);
        (void)flags;  // output devices are always exclusive
        if (owner_) ctx.remove_connection(owner_conn_id_);
        owner_ = key;
        owner_conn_id_ = conn_id;
        ctx.install_connection(conn_id, 0, Direction::input, key);
        return confirmation;
      }
      case kDriverEntryRelease: {
        if (!owner_) fail(Err::AuthFailure, "no lease owner");
        lease_.accept_release(ctx, *owner_, args);
        ctx.remove_connection(owner_conn_id_);
        owner_.reset();
        return {};
      }
      default:
        fail(Err::UnknownEntry, "no such driver entry");
    }
  }

  Bytes snapshot_state() const override {
    Bytes out = lease_.snapshot();
    put_u8(out, owner_.has_value());
    if (owner_) put_bytes(out, owner_->bytes);
    return out;
  }

 private:
  std::string device_id_;
  uint16_t mmio_id_ = 0;
  LeaseState lease_;
  std::optional<Key128> owner_;
  uint16_t owner_conn_id_ = 0;
};

/// Protected driver for one input device. Physical interrupts arrive on a
/// reserved caller id; every subscriber connection gets its own sealed copy.
class InputDriverBehavior : public Behavior {
 public:
  explicit InputDriverBehavior(BytesView init) { device_id_ = parse_driver_init(init).first; }

  Bytes on_entry(BehaviorContext& ctx, uint16_t index, BytesView args) override {
    switch (index + runtime::kEntryUserBase) {
      case kDriverEntryGetNonce:
        lease_.ensure_nonce(ctx);
        return Bytes(lease_.nonce.begin(), lease_.nonce.end());
      case kDriverEntrySetExclusive: {
        Bytes confirmation;
        auto [key, flags, conn_id] = lease_.accept_grant(ctx, args, confirmation);
        if (flags & kGrantExclusive) {
          for (auto& [cid, k] : subscribers_) ctx.remove_connection(cid);
          subscribers_.clear();
        }
        subscribers_[conn_id] = key;
        ctx.install_connection(conn_id, 0, Direction::output, key);
        return confirmation;
      }
      case kDriverEntryRelease: {
        if (args.size() != 2 + 16) fail(Err::AuthFailure, "malformed release args");
        uint16_t conn_id = static_cast<uint16_t>(args[0] << 8 | args[1]);
        auto it = subscribers_.find(conn_id);
        if (it == subscribers_.end()) fail(Err::AuthFailure, "no such subscription");
        lease_.accept_release(ctx, it->second, args.subspan(2));
        ctx.remove_connection(conn_id);
        subscribers_.erase(it);
        return {};
      }
      case kDriverEntryInterrupt: {
        if (ctx.caller() < runtime::kCallerInterruptBase)
          fail(Err::CallerRejected, "interrupt entry requires an interrupt source");
        ctx.emit(0, args);
        return {};
      }
      default:
        fail(Err::UnknownEntry, "no such driver entry");
    }
  }

  Bytes snapshot_state() const override {
    Bytes out = lease_.snapshot();
    put_u16(out, static_cast<uint16_t>(subscribers_.size()));
    for (const auto& [cid, key] : subscribers_) {
      put_u16(out, cid);
      put_bytes(out, key.bytes);
    }
    return out;
  }

 private:
  std::string device_id_;
  LeaseState lease_;
  std::map<uint16_t, Key128> subscribers_;
};

/// Register-access module mapped over one device; accepts calls only from its
/// hard-coded driver.
class MmioBehavior : public Behavior {
 public:
  explicit MmioBehavior(BytesView init) {
    auto [device, driver] = parse_driver_init(init);
    device_id_ = device;
    if (!driver) fail(Err::MalformedPackage, "mmio init missing expected driver id");
    expected_driver_ = *driver;
  }

  Bytes on_entry(BehaviorContext& ctx, uint16_t index, BytesView args) override {
    if (index + runtime::kEntryUserBase != kMmioEntryAccess)
      fail(Err::UnknownEntry, "no such mmio entry");
    if (ctx.caller() != expected_driver_)
      fail(Err::CallerRejected, "mmio accepts calls from its driver only");
    ByteReader r(args);
    uint8_t op = r.u8();
    r.u16();  // register address; single-register devices
    std::string attr = to_string(r.take(r.u8()));
    Bytes value = r.rest();
    if (op == 1) {
      ctx.device_write(device_id_, value, attr);
      return {};
    }
    return ctx.device_read(device_id_);
  }

 private:
  std::string device_id_;
  uint16_t expected_driver_ = 0;
};

}  // namespace

void register_driver_behaviors() {
  auto& reg = BehaviorRegistry::global();
  reg.add("output_driver",
          [](BytesView init) { return std::make_unique<OutputDriverBehavior>(init); });
  reg.add("input_driver",
          [](BytesView init) { return std::make_unique<InputDriverBehavior>(init); });
  reg.add("mmio", [](BytesView init) { return std::make_unique<MmioBehavior>(init); });
}

ModulePackage make_output_driver_package(const std::string& device_id, uint16_t mmio_module_id) {
  ModulePackage pkg;
  pkg.name = "output_driver";
  pkg.vendor_id = kInfraVendorId;
  pkg.inputs = {{0, "actuate"}};
  pkg.init = driver_init(device_id, mmio_module_id);
  return pkg;
}

ModulePackage make_input_driver_package(const std::string& device_id) {
  ModulePackage pkg;
  pkg.name = "input_driver";
  pkg.vendor_id = kInfraVendorId;
  pkg.outputs = {{0, "event"}};
  pkg.init = driver_init(device_id, std::nullopt);
  return pkg;
}

ModulePackage make_mmio_package(const std::string& device_id, uint16_t expected_driver_id) {
  ModulePackage pkg;
  pkg.name = "mmio";
  pkg.vendor_id = kInfraVendorId;
  pkg.init = driver_init(device_id, expected_driver_id);
  return pkg;
}

Bytes GrantBlob::encode_set_exclusive_args(uint16_t conn_id) const {
  Bytes args;
  put_u8(args, flags);
  put_bytes(args, ciphertext);
  put_bytes(args, tag);
  put_u16(args, conn_id);
  return args;
}

DeviceBus::DeviceBus(tee::Node& node, Clock clock) : node_(node), clock_(std::move(clock)) {
  node_.set_device_bus(
      [this](uint16_t module_id, const std::string& device_id, BytesView value,
             const std::string& attribution) {
        auto dev = devices_.find(device_id);
        if (dev == devices_.end()) fail(Err::UnknownDevice, "no device " + device_id);
        const DriverBinding& b = binding(device_id);
        if (dev->second.kind != DeviceKind::output || module_id != b.mmio_module_id)
          fail(Err::CallerRejected, "device is not writable by module "
                                        + std::to_string(module_id));
        dev->second.state.assign(value.begin(), value.end());
        log_.push_back({clock_(), device_id, DeviceKind::output,
                        Bytes(value.begin(), value.end()), attribution});
      },
      [this](uint16_t, const std::string& device_id) -> Bytes {
        auto dev = devices_.find(device_id);
        if (dev == devices_.end()) fail(Err::UnknownDevice, "no device " + device_id);
        return dev->second.state;
      });
}

const DriverBinding& DeviceBus::attach_device(const std::string& device_id, DeviceKind kind) {
  if (devices_.count(device_id)) fail(Err::ScenarioError, "device already attached");
  devices_[device_id] = {device_id, kind, {}};

  DriverBinding binding;
  binding.device_id = device_id;
  binding.kind = kind;
  if (kind == DeviceKind::output) {
    // mmio loads first; its expected driver id is the next slot after it.
    uint16_t mmio_id = node_.next_module_id();
    Bytes mmio_pkg = make_mmio_package(device_id, static_cast<uint16_t>(mmio_id + 1)).serialize();
    binding.mmio_module_id = node_.load_module(mmio_pkg).first;
    Bytes drv_pkg = make_output_driver_package(device_id, binding.mmio_module_id).serialize();
    auto [drv_id, identity] = node_.load_module(drv_pkg);
    binding.driver_module_id = drv_id;
    binding.driver_identity = identity;
  } else {
    Bytes drv_pkg = make_input_driver_package(device_id).serialize();
    auto [drv_id, identity] = node_.load_module(drv_pkg);
    binding.driver_module_id = drv_id;
    binding.driver_identity = identity;
    binding.interrupt_id = next_interrupt_++;
  }
  return bindings_.emplace(device_id, binding).first->second;
}

const DriverBinding& DeviceBus::binding(const std::string& device_id) const {
  auto it = bindings_.find(device_id);
  if (it == bindings_.end()) fail(Err::UnknownDevice, "no device " + device_id);
  return it->second;
}

void DeviceBus::inject_physical_input(const std::string& device_id, BytesView value) {
  auto dev = devices_.find(device_id);
  if (dev == devices_.end()) fail(Err::UnknownDevice, "no device " + device_id);
  if (dev->second.kind != DeviceKind::input)
    fail(Err::UnknownDevice, device_id + " is not an input device");
  dev->second.state.assign(value.begin(), value.end());
  log_.push_back({clock_(), device_id, DeviceKind::input, Bytes(value.begin(), value.end()),
                  "phys"});
  const DriverBinding& b = binding(device_id);
  node_.call_entry(b.interrupt_id, b.driver_module_id, kDriverEntryInterrupt, value);
}

std::vector<std::string> DeviceBus::export_log_lines() const {
  std::vector<std::string> lines;
  lines.reserve(log_.size());
  for (const auto& e : log_) {
    lines.push_back(std::to_string(e.ts) + ", " + e.device_id + ", "
                    + (e.direction == DeviceKind::input ? "in" : "out") + ", " + to_hex(e.value)
                    + ", " + e.attribution);
  }
  return lines;
}

Provider::Provider(Clock clock, uint64_t lease_duration_ms)
    : clock_(std::move(clock)), lease_duration_ms_(lease_duration_ms) {}

void Provider::register_node(const tee::NodeConfig& config) { nodes_[config.node_id] = config; }

void Provider::register_driver(const std::string& node_id, const DriverBinding& binding) {
  if (!nodes_.count(node_id)) fail(Err::UnknownDriver, "unknown node " + node_id);
  drivers_[binding.device_id] = {node_id, binding};
}

void Provider::expire_leases() {
  uint64_t now = clock_();
  std::erase_if(leases_, [now](const AccessLease& l) { return l.expires_at <= now; });
}

GrantBlob Provider::grant(const std::string& deployer_id, const std::string& device_id,
                          BytesView driver_nonce, const Key128& conn_key, bool exclusive) {
  expire_leases();
  if (driver_nonce.size() != 16) fail(Err::NonceMismatch, "driver nonce must be 16 bytes");
  auto it = drivers_.find(device_id);
  if (it == drivers_.end()) fail(Err::UnknownDriver, "no driver for device " + device_id);

  for (const auto& lease : leases_) {
    if (lease.device_id != device_id || lease.deployer_id == deployer_id) continue;
    if (lease.exclusive || exclusive)
      fail(Err::LeaseHeld, "device " + device_id + " is held by " + lease.deployer_id);
  }

  uint8_t flags = exclusive ? kGrantExclusive : kGrantShared;
  Bytes aad(driver_nonce.begin(), driver_nonce.end());
  put_u8(aad, flags);
  crypto::Sealed sealed = crypto::aead_seal(CipherSuite::AesGcm128, driver_module_key(device_id),
                                            AeadNonce::counter(0), conn_key.bytes, aad);

  std::erase_if(leases_, [&](const AccessLease& l) {
    return l.device_id == device_id && l.deployer_id == deployer_id;
  });
  uint64_t now = clock_();
  leases_.push_back({deployer_id, device_id, now, now + lease_duration_ms_, exclusive});

  return {flags, sealed.ciphertext, sealed.tag.as_bytes()};
}

void Provider::close_lease(const std::string& deployer_id, const std::string& device_id) {
  std::erase_if(leases_, [&](const AccessLease& l) {
    return l.device_id == device_id && l.deployer_id == deployer_id;
  });
}

Key128 Provider::vendor_key(const std::string& node_id, uint16_t vendor_id) const {
  return tee::derive_vendor_key(node_root(node_id), vendor_id);
}

Key128 Provider::verify_quote(const std::string& node_id, const std::array<uint8_t, 32>& identity,
                              BytesView challenge, BytesView evidence) const {
  const Key128& root = node_root(node_id);
  if (!tee::verify_sgx_quote(tee::derive_quoting_key(root), identity, challenge, evidence))
    fail(Err::AttestationFailed, "quote verification failed");
  return crypto::kdf128(root, BytesView(identity.data(), identity.size()));
}

const Key128& Provider::node_root(const std::string& node_id) const {
  auto it = nodes_.find(node_id);
  if (it == nodes_.end()) fail(Err::UnknownDriver, "unknown node " + node_id);
  return it->second.root_key;
}

Key128 Provider::driver_module_key(const std::string& device_id) const {
  const auto& rec = drivers_.at(device_id);
  const tee::NodeConfig& cfg = nodes_.at(rec.node_id);
  return tee::derive_module_key_for(cfg.flavor, cfg.root_key, kInfraVendorId,
                                    rec.binding.driver_identity);
}

const std::string& Provider::driver_node_address(const std::string& device_id) const {
  return nodes_.at(driver_node(device_id)).address;
}

const DriverBinding& Provider::driver(const std::string& device_id) const {
  auto it = drivers_.find(device_id);
  if (it == drivers_.end()) fail(Err::UnknownDriver, "no driver for device " + device_id);
  return it->second.binding;
}

const std::string& Provider::driver_node(const std::string& device_id) const {
  auto it = drivers_.find(device_id);
  if (it == drivers_.end()) fail(Err::UnknownDriver, "no driver for device " + device_id);
  return it->second.node_id;
}

}  // namespace authex::io
