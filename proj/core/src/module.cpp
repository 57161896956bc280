#include "authex/module.hpp"

#include <set>

namespace authex::runtime {

using crypto::AeadNonce;
using crypto::CipherSuite;
using crypto::Key128;
using crypto::Sealed;
using crypto::Tag128;

Bytes event_aad(uint16_t conn_id, uint16_t counter, bool reply) {
  Bytes aad;
  put_u16(aad, conn_id);
  put_u16(aad, counter);
  put_u8(aad, reply ? 1 : 0);
  return aad;
}

Bytes setkey_aad(uint16_t conn_id, uint16_t io_id, uint16_t seq) {
  Bytes aad;
  put_u16(aad, conn_id);
  put_u16(aad, io_id);
  put_u16(aad, seq);
  return aad;
}

Bytes make_setkey_body(const Key128& module_key, uint16_t conn_id, uint16_t io_id, uint16_t seq,
                       const Key128& conn_key, CipherSuite suite) {
  Sealed sealed = crypto::aead_seal(CipherSuite::AesGcm128, module_key, AeadNonce::counter(seq),
                                    conn_key.bytes, setkey_aad(conn_id, io_id, seq));
  Bytes body;
  put_u16(body, conn_id);
  put_u16(body, io_id);
  put_u16(body, seq);
  put_bytes(body, sealed.ciphertext);
  put_bytes(body, sealed.tag.bytes);
  put_u8(body, static_cast<uint8_t>(suite));
  return body;
}

namespace {

/// BehaviorContext for handlers running inside a module.
class ModuleContext : public BehaviorContext {
 public:
  ModuleContext(SecurityModule& mod, ModuleEnv* env, uint16_t module_id, uint16_t caller,
                std::function<void(uint16_t, BytesView)> emit_fn)
      : mod_(mod), env_(env), module_id_(module_id), caller_(caller), emit_fn_(std::move(emit_fn)) {}

  void emit(uint16_t output_io_id, BytesView payload) override { emit_fn_(output_io_id, payload); }
  uint16_t caller() const override { return caller_; }
  Bytes call_module(uint16_t module_id, uint16_t entry, BytesView args) override {
    if (!env_) fail(Err::ScenarioError, "module not bound to a node");
    return env_->call_module(module_id_, module_id, entry, args);
  }
  void device_write(const std::string& device_id, BytesView value,
                    const std::string& attribution) override {
    if (!env_) fail(Err::UnknownDevice, "module not bound to a node");
    env_->device_write(module_id_, device_id, value, attribution);
  }
  Bytes device_read(const std::string& device_id) override {
    if (!env_) fail(Err::UnknownDevice, "module not bound to a node");
    return env_->device_read(module_id_, device_id);
  }
  crypto::Rng& rng() override {
    if (!env_) fail(Err::ScenarioError, "module not bound to a node");
    return env_->rng();
  }
  Bytes host_request(const std::string& address, BytesView frame) override {
    if (!env_) fail(Err::ScenarioError, "module not bound to a node");
    return env_->host_request(address, frame);
  }
  Bytes module_open(const AeadNonce& nonce, BytesView ciphertext, const Tag128& tag,
                    BytesView aad) override {
    return mod_.open_with_module_key(nonce, ciphertext, tag, aad);
  }
  Sealed module_seal(const AeadNonce& nonce, BytesView plaintext, BytesView aad) override {
    return mod_.seal_with_module_key(nonce, plaintext, aad);
  }
  void install_connection(uint16_t conn_id, uint16_t io_id, Direction dir,
                          const Key128& key) override {
    mod_.install_connection(conn_id, io_id, dir, key);
  }
  void remove_connection(uint16_t conn_id) override { mod_.remove_connection(conn_id); }

 private:
  SecurityModule& mod_;
  ModuleEnv* env_;
  uint16_t module_id_;
  uint16_t caller_;
  std::function<void(uint16_t, BytesView)> emit_fn_;
};

}  // namespace

SecurityModule::SecurityModule(BytesView package_bytes, Key128 module_key)
    : package_(ModulePackage::parse(package_bytes)),
      identity_(crypto::sha256(package_bytes)),
      module_key_(module_key) {
  if (!BehaviorRegistry::global().has(package_.name))
    fail(Err::UnknownBehavior, "package names unregistered behavior '" + package_.name + "'");
  std::set<uint16_t> seen;
  auto add = [&](const std::vector<EndpointDecl>& eps, Direction dir) {
    for (const auto& ep : eps) {
      if (!seen.insert(ep.io_id).second)
        fail(Err::DuplicateIoId, "io id " + std::to_string(ep.io_id) + " declared twice");
      cb_table_[ep.io_id] = dir;
    }
  };
  add(package_.inputs, Direction::input);
  add(package_.outputs, Direction::output);
  add(package_.requests, Direction::request);
  add(package_.handlers, Direction::handler);
  behavior_ = BehaviorRegistry::global().make(package_.name, package_.init);
}

Direction SecurityModule::infer_direction(uint16_t io_id) const {
  auto it = cb_table_.find(io_id);
  if (it == cb_table_.end()) fail(Err::UnknownIo, "io id not declared by this module");
  return it->second;
}

void SecurityModule::set_key(BytesView body) {
  // conn_id(2) io_id(2) seq(2) ct(16) tag(16) suite(1)
  if (body.size() != 2 + 2 + 2 + 16 + 16 + 1) fail(Err::AuthFailure, "malformed SetKey body");
  ByteReader r(body);
  uint16_t conn_id = r.u16();
  uint16_t io_id = r.u16();
  uint16_t seq = r.u16();
  Bytes ct = r.take(16);
  Tag128 tag = Tag128::from(r.take(16));
  CipherSuite suite = crypto::suite_from_byte(r.u8());

  Bytes key_bytes = crypto::aead_open(CipherSuite::AesGcm128, module_key_, AeadNonce::counter(seq),
                                      ct, tag, setkey_aad(conn_id, io_id, seq));
  if (seq != setkey_seq_) {
    drop(DropReason::StaleSequence, conn_id);
    fail(Err::StaleSequence, "SetKey sequence " + std::to_string(seq) + " != expected "
                                 + std::to_string(setkey_seq_));
  }
  if (suite != CipherSuite::AesGcm128)
    fail(Err::UnsupportedCipher, "connection suite not implemented");

  Connection conn;
  conn.conn_id = conn_id;
  conn.io_id = io_id;
  conn.dir = infer_direction(io_id);
  conn.key = Key128::from(key_bytes);
  conn.suite = suite;
  conn_table_[conn_id] = conn;  // last-writer-wins on re-establishment
  setkey_seq_ = static_cast<uint16_t>(seq + 1);
}

void SecurityModule::run_input_handler(uint16_t io_id, BytesView payload, uint16_t caller) {
  ModuleContext ctx(*this, env_, module_id_, caller,
                    [this](uint16_t out_io, BytesView p) { emit_from_handler(out_io, p); });
  behavior_->on_input(ctx, io_id, payload);
}

void SecurityModule::emit_from_handler(uint16_t output_io_id, BytesView payload) {
  for (auto& [conn_id, sealed] : handle_output(output_io_id, payload)) {
    if (sink_) sink_(conn_id, std::move(sealed));
  }
}

void SecurityModule::handle_input(uint16_t conn_id, BytesView sealed_event, uint16_t caller) {
  auto it = conn_table_.find(conn_id);
  if (it == conn_table_.end()) {
    drop(DropReason::UnknownConnection, conn_id);
    return;
  }
  Connection& conn = it->second;
  if (!conn.established()) {
    drop(DropReason::Unestablished, conn_id);
    return;
  }
  if (conn.dead) {
    drop(DropReason::NonceExhausted, conn_id);
    return;
  }

  Sealed sealed;
  try {
    sealed = Sealed::decode(sealed_event);
  } catch (const Error&) {
    drop(DropReason::AuthFailure, conn_id);
    return;
  }

  bool reply_stream = conn.dir == Direction::request;
  uint16_t expected = reply_stream ? conn.reply_nonce : conn.nonce;
  Bytes payload;
  if (insecure_no_verify_) {
    payload = crypto::aead_open_insecure_no_verify(
        conn.suite, conn.key,
        reply_stream ? AeadNonce::reply_counter(expected) : AeadNonce::counter(expected),
        sealed.ciphertext);
  } else {
    try {
      payload = crypto::aead_open(
          conn.suite, conn.key,
          reply_stream ? AeadNonce::reply_counter(expected) : AeadNonce::counter(expected),
          sealed.ciphertext, sealed.tag, event_aad(conn_id, expected, reply_stream));
    } catch (const Error&) {
      drop(DropReason::AuthFailure, conn_id);
      return;
    }
    // Decrypt succeeded: advance the expected counter before running the
    // handler so a replay can never fire it twice.
    if (expected == 0xffff) conn.dead = true;
    if (reply_stream)
      conn.reply_nonce = static_cast<uint16_t>(expected + 1);
    else
      conn.nonce = static_cast<uint16_t>(expected + 1);
  }

  switch (conn.dir) {
    case Direction::input:
      run_input_handler(conn.io_id, payload, caller);
      break;
    case Direction::handler: {
      ModuleContext ctx(*this, env_, module_id_, caller,
                        [this](uint16_t out_io, BytesView p) { emit_from_handler(out_io, p); });
      Bytes reply = behavior_->on_request(ctx, conn.io_id, payload);
      if (conn.reply_nonce == 0xffff) conn.dead = true;
      uint16_t rc = conn.reply_nonce;
      Sealed out = crypto::aead_seal(conn.suite, conn.key, AeadNonce::reply_counter(rc), reply,
                                     event_aad(conn_id, rc, true));
      conn.reply_nonce = static_cast<uint16_t>(rc + 1);
      if (sink_) sink_(conn_id, out.encode());
      break;
    }
    case Direction::request: {
      std::lock_guard lock(reply_mutex_);
      pending_replies_[conn_id] = std::move(payload);
      reply_cv_.notify_all();
      break;
    }
    case Direction::output:
      drop(DropReason::WrongDirection, conn_id);
      break;
  }
}

std::vector<std::pair<uint16_t, Bytes>> SecurityModule::handle_output(uint16_t output_io_id,
                                                                      BytesView payload) {
  if (infer_direction(output_io_id) != Direction::output)
    fail(Err::UnknownIo, "io id is not a declared output");
  std::vector<std::pair<uint16_t, Bytes>> out;
  for (auto& [conn_id, conn] : conn_table_) {
    if (conn.io_id != output_io_id || conn.dir != Direction::output) continue;
    if (!conn.established() || conn.dead) continue;
    uint16_t c = conn.nonce;
    Sealed sealed =
        crypto::aead_seal(conn.suite, conn.key, AeadNonce::counter(c), payload,
                          event_aad(conn_id, c, false));
    if (c == 0xffff) {
      conn.dead = true;
      drop(DropReason::NonceExhausted, conn_id);
    }
    conn.nonce = static_cast<uint16_t>(c + 1);
    out.emplace_back(conn_id, sealed.encode());
  }
  return out;
}

Sealed SecurityModule::seal_with_module_key(const AeadNonce& nonce, BytesView plaintext,
                                            BytesView aad) const {
  return crypto::aead_seal(CipherSuite::AesGcm128, module_key_, nonce, plaintext, aad);
}

Bytes SecurityModule::open_with_module_key(const AeadNonce& nonce, BytesView ciphertext,
                                           const Tag128& tag, BytesView aad) const {
  return crypto::aead_open(CipherSuite::AesGcm128, module_key_, nonce, ciphertext, tag, aad);
}

void SecurityModule::install_connection(uint16_t conn_id, uint16_t io_id, Direction dir,
                                        const Key128& key) {
  Connection conn;
  conn.conn_id = conn_id;
  conn.io_id = io_id;
  conn.dir = dir;
  conn.key = key;
  conn_table_[conn_id] = conn;
}

Tag128 SecurityModule::attest(BytesView challenge) const {
  if (challenge.size() < 16) fail(Err::ChallengeTooShort, "challenge must be at least 16 bytes");
  return crypto::mac_tag(module_key_, challenge);
}

Bytes SecurityModule::dispatch_entry(uint16_t entry, BytesView args, uint16_t caller) {
  switch (entry) {
    case kEntrySetKey:
      set_key(args);
      return {};
    case kEntryAttest:
      return attest(args).as_bytes();
    case kEntryHandleInput: {
      if (args.size() < 2) return {};  // hostile input, ignore
      uint16_t conn_id = static_cast<uint16_t>(args[0] << 8 | args[1]);
      handle_input(conn_id, args.subspan(2), caller);
      return {};
    }
    default: {
      ModuleContext ctx(*this, env_, module_id_, caller,
                        [this](uint16_t out_io, BytesView p) { emit_from_handler(out_io, p); });
      return behavior_->on_entry(ctx, static_cast<uint16_t>(entry - kEntryUserBase), args);
    }
  }
}

Bytes SecurityModule::request_sync(uint16_t request_io_id, BytesView payload,
                                   std::chrono::milliseconds timeout) {
  Connection* conn = nullptr;
  for (auto& [id, c] : conn_table_) {
    if (c.io_id == request_io_id && c.dir == Direction::request) {
      conn = &c;
      break;
    }
  }
  if (!conn || !conn->established()) fail(Err::Unestablished, "request io has no established connection");
  if (conn->dead) fail(Err::NonceExhausted, "request connection exhausted");

  uint16_t conn_id = conn->conn_id;
  {
    std::lock_guard lock(reply_mutex_);
    pending_replies_.erase(conn_id);
  }
  uint16_t c = conn->nonce;
  Sealed sealed = crypto::aead_seal(conn->suite, conn->key, AeadNonce::counter(c), payload,
                                    event_aad(conn_id, c, false));
  if (c == 0xffff) conn->dead = true;
  conn->nonce = static_cast<uint16_t>(c + 1);
  if (!sink_) fail(Err::Unestablished, "module has no event sink");
  sink_(conn_id, sealed.encode());

  std::unique_lock lock(reply_mutex_);
  if (!reply_cv_.wait_for(lock, timeout,
                          [&] { return pending_replies_.count(conn_id) != 0; }))
    fail(Err::Timeout, "no reply within timeout");
  Bytes reply = std::move(pending_replies_[conn_id]);
  pending_replies_.erase(conn_id);
  return reply;
}

}  // namespace authex::runtime
