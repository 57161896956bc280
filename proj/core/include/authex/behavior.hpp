#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "authex/common.hpp"
#include "authex/crypto.hpp"

namespace authex::runtime {

enum class Direction : uint8_t { input, output, request, handler };

/// Services a behavior can reach while one of its handlers runs. Backed by the
/// security module inside a node, and by the pure reference interpreter in the
/// harness oracle (which implements only emit()).
class BehaviorContext {
 public:
  virtual ~BehaviorContext() = default;

  /// Publish an event on one of the module's declared outputs.
  virtual void emit(uint16_t output_io_id, BytesView payload) = 0;

  /// Identity of whoever invoked the current entry point. 0 is the untrusted
  /// external caller; >= 0xFF00 are interrupt sources.
  virtual uint16_t caller() const { return 0; }

  /// Call an entry point of another module on the same node, carrying this
  /// module's id as caller.
  virtual Bytes call_module(uint16_t module_id, uint16_t entry, BytesView args) {
    (void)module_id, (void)entry, (void)args;
    fail(Err::ScenarioError, "intra-node calls not available in this context");
  }

  /// Write a value to a physical device register. Only the mmio module bound
  /// to the device may succeed. The attribution tag ends up in the physical
  /// log next to the actuation.
  virtual void device_write(const std::string& device_id, BytesView value,
                            const std::string& attribution) {
    (void)device_id, (void)value, (void)attribution;
    fail(Err::UnknownDevice, "no device bus in this context");
  }
  virtual Bytes device_read(const std::string& device_id) {
    (void)device_id;
    fail(Err::UnknownDevice, "no device bus in this context");
  }

  virtual crypto::Rng& rng() { fail(Err::ScenarioError, "no rng in this context"); }

  // TEE crypto primitives with the calling module's key as implicit key, the
  // only way a module may use it. Driver modules build their lease protocol
  // on these.
  virtual Bytes module_open(const crypto::AeadNonce& nonce, BytesView ciphertext,
                            const crypto::Tag128& tag, BytesView aad) {
    (void)nonce, (void)ciphertext, (void)tag, (void)aad;
    fail(Err::ScenarioError, "no module key in this context");
  }
  virtual crypto::Sealed module_seal(const crypto::AeadNonce& nonce, BytesView plaintext,
                                     BytesView aad) {
    (void)nonce, (void)plaintext, (void)aad;
    fail(Err::ScenarioError, "no module key in this context");
  }

  /// Driver-managed connection slots (the SetKey-equivalent of the lease
  /// protocol installs the owner key through this).
  virtual void install_connection(uint16_t conn_id, uint16_t io_id, Direction dir,
                                  const crypto::Key128& key) {
    (void)conn_id, (void)io_id, (void)dir, (void)key;
    fail(Err::ScenarioError, "no connection table in this context");
  }
  virtual void remove_connection(uint16_t conn_id) { (void)conn_id; }

  /// Untrusted host callout: send a wire frame to a remote event manager and
  /// return the reply body. Used by the attestation manager only; security
  /// rests on the payload crypto, not on the callout.
  virtual Bytes host_request(const std::string& address, BytesView frame) {
    (void)address, (void)frame;
    fail(Err::ScenarioError, "no host transport in this context");
  }
};

/// Application logic of one module. Implementations must be deterministic
/// functions of their state and inputs so that the reference interpreter and
/// the deployed module agree on semantics.
class Behavior {
 public:
  virtual ~Behavior() = default;

  virtual void on_input(BehaviorContext& ctx, uint16_t io_id, BytesView payload) {
    (void)ctx, (void)io_id, (void)payload;
    fail(Err::UnknownIo, "behavior declares no input handlers");
  }
  virtual Bytes on_request(BehaviorContext& ctx, uint16_t io_id, BytesView payload) {
    (void)ctx, (void)io_id, (void)payload;
    fail(Err::UnknownIo, "behavior declares no request handlers");
  }
  /// User entry points, numbered from 0 (wire entry id 3 maps to index 0).
  virtual Bytes on_entry(BehaviorContext& ctx, uint16_t index, BytesView args) {
    (void)ctx, (void)index, (void)args;
    fail(Err::UnknownEntry, "behavior declares no user entries");
  }

  /// Opaque state snapshot, used by the reference interpreter for memoized
  /// search. Stateless behaviors keep the default.
  virtual Bytes snapshot_state() const { return {}; }
  virtual void restore_state(BytesView state) { (void)state; }
};

using BehaviorFactory = std::function<std::unique_ptr<Behavior>(BytesView init)>;

class BehaviorRegistry {
 public:
  static BehaviorRegistry& global();

  void add(const std::string& name, BehaviorFactory factory) { factories_[name] = std::move(factory); }
  bool has(const std::string& name) const { return factories_.count(name) != 0; }
  std::unique_ptr<Behavior> make(const std::string& name, BytesView init) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) fail(Err::UnknownBehavior, "no behavior registered as '" + name + "'");
    return it->second(init);
  }

 private:
  std::map<std::string, BehaviorFactory> factories_;
};

}  // namespace authex::runtime
