#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>

#include "authex/behavior.hpp"
#include "authex/crypto.hpp"
#include "authex/package.hpp"

namespace authex::runtime {

// Entry ids 0..2 are fixed by the compiled layout; user entries follow.
inline constexpr uint16_t kEntrySetKey = 0;
inline constexpr uint16_t kEntryAttest = 1;
inline constexpr uint16_t kEntryHandleInput = 2;
inline constexpr uint16_t kEntryUserBase = 3;

inline constexpr uint16_t kCallerUntrusted = 0;
inline constexpr uint16_t kCallerInterruptBase = 0xFF00;

/// One directed channel slot. An all-zero key marks the slot unestablished.
struct Connection {
  uint16_t conn_id = 0;
  uint16_t io_id = 0;
  Direction dir = Direction::input;
  crypto::Key128 key;
  crypto::CipherSuite suite = crypto::CipherSuite::AesGcm128;
  uint16_t nonce = 0;        // forward stream counter
  uint16_t reply_nonce = 0;  // reply stream counter (request/handler pairs)
  bool dead = false;         // set at counter exhaustion, never cleared

  bool established() const { return !key.is_zero(); }
};

enum class DropReason : uint8_t {
  UnknownConnection,
  Unestablished,
  AuthFailure,
  NonceExhausted,
  StaleSequence,
  UnknownIo,
  UnsupportedCipher,
  WrongDirection,
};

struct DropRecord {
  DropReason reason;
  uint16_t conn_id;
};

/// Services a node makes available to its modules. The module itself never
/// sees other modules' tables or keys through this surface.
class ModuleEnv {
 public:
  virtual ~ModuleEnv() = default;
  virtual Bytes call_module(uint16_t caller, uint16_t module_id, uint16_t entry, BytesView args) = 0;
  virtual void device_write(uint16_t module_id, const std::string& device_id, BytesView value,
                            const std::string& attribution) = 0;
  virtual Bytes device_read(uint16_t module_id, const std::string& device_id) = 0;
  virtual crypto::Rng& rng() = 0;
  virtual Bytes host_request(const std::string& address, BytesView frame) = 0;
};

/// The security-module abstraction: connection and callback tables, the fixed
/// entry points (SetKey / Attest / HandleInput), output wrappers and
/// synchronous request events. All entry invocations on one module are
/// serialized by its node executor.
class SecurityModule {
 public:
  using EventSink = std::function<void(uint16_t conn_id, Bytes sealed_event)>;

  /// build_module: identity is SHA-256 of the exact package bytes; the
  /// callback table comes from the package declarations and is immutable
  /// afterwards.
  SecurityModule(BytesView package_bytes, crypto::Key128 module_key);

  const ModulePackage& package() const { return package_; }
  const std::array<uint8_t, 32>& identity() const { return identity_; }
  uint16_t module_id() const { return module_id_; }

  void bind(uint16_t module_id, ModuleEnv* env) {
    module_id_ = module_id;
    env_ = env;
  }
  void set_event_sink(EventSink sink) { sink_ = std::move(sink); }

  /// Entry 0. Body: conn_id(2) || io_id(2) || seq(2) || sealed key(16) ||
  /// tag(16) || suite(1), sealed under the module key with nonce counter = seq
  /// and aad = conn_id || io_id || seq.
  void set_key(BytesView body);

  /// Entry 2 with hostile input expected: bad events are ignored, never fatal.
  void handle_input(uint16_t conn_id, BytesView sealed_event, uint16_t caller = kCallerUntrusted);

  /// Output wrapper: one sealed event per established connection mapped to
  /// this output. Unconnected outputs yield an empty list.
  std::vector<std::pair<uint16_t, Bytes>> handle_output(uint16_t output_io_id, BytesView payload);

  /// Entry 1: evidence = MAC over the challenge under the module key.
  crypto::Tag128 attest(BytesView challenge) const;

  Bytes dispatch_entry(uint16_t entry, BytesView args, uint16_t caller = kCallerUntrusted);

  /// Sends a sealed request on the connection bound to request_io_id and
  /// blocks for the sealed reply (reverse counter stream).
  Bytes request_sync(uint16_t request_io_id, BytesView payload, std::chrono::milliseconds timeout);

  const std::map<uint16_t, Connection>& connection_table() const { return conn_table_; }
  const std::vector<DropRecord>& drops() const { return drops_; }

  // Crypto primitives keyed by the module key; callable only from within the
  // module's own handlers (behavior context), mirroring the hardware
  // instruction pair. The key itself never leaves.
  crypto::Sealed seal_with_module_key(const crypto::AeadNonce& nonce, BytesView plaintext,
                                      BytesView aad) const;
  Bytes open_with_module_key(const crypto::AeadNonce& nonce, BytesView ciphertext,
                             const crypto::Tag128& tag, BytesView aad) const;

  // Driver-managed slots (lease protocol).
  void install_connection(uint16_t conn_id, uint16_t io_id, Direction dir,
                          const crypto::Key128& key);
  void remove_connection(uint16_t conn_id) { conn_table_.erase(conn_id); }

  /// Negative-control hook for the adversary harness: disables tag and nonce
  /// checking in handle_input so the authenticity oracle can be shown to catch
  /// a broken build. Never set outside tests.
  void set_insecure_no_verify(bool v) { insecure_no_verify_ = v; }

 private:
  Direction infer_direction(uint16_t io_id) const;
  void run_input_handler(uint16_t io_id, BytesView payload, uint16_t caller);
  void emit_from_handler(uint16_t output_io_id, BytesView payload);
  void drop(DropReason reason, uint16_t conn_id) { drops_.push_back({reason, conn_id}); }

  ModulePackage package_;
  std::array<uint8_t, 32> identity_;
  crypto::Key128 module_key_;
  std::unique_ptr<Behavior> behavior_;
  std::map<uint16_t, Connection> conn_table_;
  // Callback table: io_id -> handler kind, fixed at construction.
  std::map<uint16_t, Direction> cb_table_;
  uint16_t setkey_seq_ = 0;
  uint16_t module_id_ = 0;
  ModuleEnv* env_ = nullptr;
  EventSink sink_;
  bool insecure_no_verify_ = false;
  std::vector<DropRecord> drops_;

  std::mutex reply_mutex_;
  std::condition_variable reply_cv_;
  std::map<uint16_t, Bytes> pending_replies_;
};

// AAD framing for sealed events: conn_id(2) || counter(2) || direction byte
// (0 forward, 1 reply).
Bytes event_aad(uint16_t conn_id, uint16_t counter, bool reply);
Bytes setkey_aad(uint16_t conn_id, uint16_t io_id, uint16_t seq);

/// Deployer-side constructor for SetKey bodies; sealed under the target's
/// module key.
Bytes make_setkey_body(const crypto::Key128& module_key, uint16_t conn_id, uint16_t io_id,
                       uint16_t seq, const crypto::Key128& conn_key, crypto::CipherSuite suite);

}  // namespace authex::runtime
