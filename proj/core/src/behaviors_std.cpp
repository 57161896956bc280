#include "authex/behaviors_std.hpp"

#include <optional>

#include "authex/attman.hpp"
#include "authex/event_manager.hpp"
#include "authex/module.hpp"
#include "authex/node.hpp"

namespace authex::apps {

using crypto::AeadNonce;
using crypto::CipherSuite;
using crypto::Key128;
using crypto::Tag128;
using runtime::Behavior;
using runtime::BehaviorContext;
using runtime::BehaviorRegistry;

namespace {

uint16_t read_u16(BytesView payload) {
  ByteReader r(payload);
  return r.u16();
}

Bytes encode_u16(uint16_t v) {
  Bytes out;
  put_u16(out, v);
  return out;
}

/// Flood detector: arms on a saturated moisture reading, raises the alarm
/// after a run of armed ticks.
class FloSensor : public Behavior {
 public:
  explicit FloSensor(BytesView init) {
    ByteReader r(init);
    saturated_ = r.u16();
    max_ticks_ = r.u16();
  }

  void on_input(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    if (io_id == 0) {  // Sensor
      armed_ = read_u16(payload) >= saturated_;
      ticks_ = 0;
    } else if (io_id == 1 && armed_) {  // Tick
      if (++ticks_ >= max_ticks_) {
        ctx.emit(2, Bytes{0x01});  // Flooded
        armed_ = false;
        ticks_ = 0;
      }
    }
  }

  Bytes snapshot_state() const override {
    Bytes out;
    put_u8(out, armed_);
    put_u16(out, ticks_);
    return out;
  }
  void restore_state(BytesView state) override {
    ByteReader r(state);
    armed_ = r.u8();
    ticks_ = r.u16();
  }

 private:
  uint16_t saturated_ = 0;
  uint16_t max_ticks_ = 0;
  bool armed_ = false;
  uint16_t ticks_ = 0;
};

/// Central tap controller: any flood alert shuts the water supply.
class FloActuator : public Behavior {
 public:
  void on_input(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    (void)io_id, (void)payload;
    ctx.emit(2, Bytes{0x00});  // Tap: off
  }
};

class Forwarder : public Behavior {
 public:
  Forwarder(uint16_t in, uint16_t out) : in_(in), out_(out) {}
  void on_input(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    if (io_id == in_) ctx.emit(out_, payload);
  }

 private:
  uint16_t in_, out_;
};

/// Averages the latest reading from each sensor stream.
class Agg : public Behavior {
 public:
  void on_input(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    if (io_id > 1) return;
    latest_[io_id] = read_u16(payload);
    uint32_t sum = 0, n = 0;
    for (const auto& v : latest_)
      if (v) sum += *v, n++;
    ctx.emit(2, encode_u16(static_cast<uint16_t>(sum / n)));  // MoistChanged
  }

  Bytes snapshot_state() const override {
    Bytes out;
    for (const auto& v : latest_) {
      put_u8(out, v.has_value());
      put_u16(out, v.value_or(0));
    }
    return out;
  }
  void restore_state(BytesView state) override {
    ByteReader r(state);
    for (auto& v : latest_) {
      bool has = r.u8();
      uint16_t val = r.u16();
      v = has ? std::optional<uint16_t>(val) : std::nullopt;
    }
  }

 private:
  std::array<std::optional<uint16_t>, 2> latest_;
};

/// Smart-home hub: thresholds the temperature into heating commands and
/// relays user commands to the lights.
class Gateway : public Behavior {
 public:
  explicit Gateway(BytesView init) {
    ByteReader r(init);
    low_ = r.u16();
    high_ = r.u16();
  }

  void on_input(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    if (io_id == 0) {  // Temp
      uint16_t t = read_u16(payload);
      if (t < low_) ctx.emit(2, Bytes{0x01});       // Heating: on
      else if (t > high_) ctx.emit(2, Bytes{0x00});  // Heating: off
      ctx.emit(4, payload);                          // Status
    } else if (io_id == 1) {  // Command
      ctx.emit(3, payload);   // Lights
    }
  }

 private:
  uint16_t low_ = 0;
  uint16_t high_ = 0;
};

/// User-facing front end: forwards commands to the gateway and answers with
/// the last status report.
class Web : public Behavior {
 public:
  void on_input(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    (void)ctx;
    if (io_id == 1) last_status_.assign(payload.begin(), payload.end());  // Status
  }
  Bytes on_request(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    (void)io_id;  // UserCommand
    ctx.emit(2, payload);  // Command
    return last_status_;
  }

  Bytes snapshot_state() const override { return last_status_; }
  void restore_state(BytesView state) override {
    last_status_.assign(state.begin(), state.end());
  }

 private:
  Bytes last_status_;
};

class Echo : public Behavior {
 public:
  Bytes on_request(BehaviorContext& ctx, uint16_t io_id, BytesView payload) override {
    (void)ctx, (void)io_id;
    return Bytes(payload.begin(), payload.end());
  }
};

const std::string kAttmanAadPrefix = "ATTMAN";

Bytes attman_aad(uint16_t seq) {
  Bytes aad = to_bytes(kAttmanAadPrefix);
  put_u16(aad, seq);
  return aad;
}

/// Holds attested module keys on the deployer's behalf; all requests arrive
/// sealed under this module's own key.
class AttestationManager : public Behavior {
 public:
  Bytes on_entry(BehaviorContext& ctx, uint16_t index, BytesView args) override {
    auto [seq, plaintext] = open_request(ctx, args);
    switch (index + runtime::kEntryUserBase) {
      case kAttmanEntryAttest: return seal_reply(ctx, seq, serve_attest(ctx, plaintext));
      case kAttmanEntryMakeSetKey: return seal_reply(ctx, seq, serve_setkey(plaintext));
      default: fail(Err::UnknownEntry, "no such manager entry");
    }
  }

 private:
  struct Handle {
    Key128 module_key;
    std::array<uint8_t, 32> identity;
  };

  std::pair<uint16_t, Bytes> open_request(BehaviorContext& ctx, BytesView args) {
    ByteReader r(args);
    uint16_t seq = r.u16();
    if (seq != expected_seq_) fail(Err::StaleSequence, "manager request out of sequence");
    crypto::Sealed sealed = crypto::Sealed::decode(r.rest());
    Bytes pt = ctx.module_open(AeadNonce::counter(seq), sealed.ciphertext, sealed.tag,
                               attman_aad(seq));
    expected_seq_++;
    return {seq, pt};
  }

  Bytes seal_reply(BehaviorContext& ctx, uint16_t seq, BytesView plaintext) {
    return ctx.module_seal(AeadNonce::reply_counter(seq), plaintext, attman_aad(seq)).encode();
  }

  Bytes serve_attest(BehaviorContext& ctx, BytesView plaintext) {
    ByteReader r(plaintext);
    std::string addr = to_string(r.take(r.u8()));
    uint16_t module_id = r.u16();
    Key128 vendor_key = Key128::from(r.take(16));
    std::array<uint8_t, 32> identity;
    Bytes id = r.take(32);
    std::copy(id.begin(), id.end(), identity.begin());

    Bytes challenge = ctx.rng().bytes(16);
    net::Frame call{net::Op::CallEntry,
                    net::EventManager::encode_call_entry(module_id, runtime::kEntryAttest,
                                                         challenge)};
    net::Frame resp = net::Frame::decode(ctx.host_request(addr, call.encode()));
    if (resp.op != net::Op::Ack || resp.body.size() != 16)
      fail(Err::AttestationFailed, "remote attest call failed");
    Key128 expected = tee::derive_module_key(vendor_key, identity);
    if (!crypto::mac_verify(expected, challenge, Tag128::from(resp.body)))
      fail(Err::AttestationFailed, "evidence does not verify");

    uint16_t handle = next_handle_++;
    handles_[handle] = {expected, identity};
    return encode_u16(handle);
  }

  Bytes serve_setkey(BytesView plaintext) {
    ByteReader r(plaintext);
    uint16_t handle = r.u16();
    Bytes id = r.take(32);
    uint16_t conn_id = r.u16(), io_id = r.u16(), seq = r.u16();
    Key128 conn_key = Key128::from(r.take(16));
    CipherSuite suite = crypto::suite_from_byte(r.u8());

    auto it = handles_.find(handle);
    if (it == handles_.end() || !std::equal(id.begin(), id.end(), it->second.identity.begin()))
      fail(Err::KeyMismatch, "handle does not match the named module");
    return runtime::make_setkey_body(it->second.module_key, conn_id, io_id, seq, conn_key, suite);
  }

  uint16_t expected_seq_ = 0;
  uint16_t next_handle_ = 1;
  std::map<uint16_t, Handle> handles_;
};

}  // namespace

runtime::ModulePackage make_attman_package(uint16_t vendor_id) {
  runtime::ModulePackage pkg;
  pkg.name = "attestation_manager";
  pkg.vendor_id = vendor_id;
  return pkg;
}

Bytes AttmanClient::seal_request(BytesView plaintext) {
  uint16_t seq = seq_++;
  Bytes out;
  put_u16(out, seq);
  put_bytes(out, crypto::aead_seal(CipherSuite::AesGcm128, key_, AeadNonce::counter(seq),
                                   plaintext, attman_aad(seq))
                     .encode());
  return out;
}

Bytes AttmanClient::open_reply(BytesView reply) {
  if (seq_ == 0) fail(Err::ScenarioError, "no request outstanding");
  uint16_t seq = static_cast<uint16_t>(seq_ - 1);
  crypto::Sealed sealed = crypto::Sealed::decode(reply);
  return crypto::aead_open(CipherSuite::AesGcm128, key_, AeadNonce::reply_counter(seq),
                           sealed.ciphertext, sealed.tag, attman_aad(seq));
}

Bytes AttmanClient::encode_attest_request(const std::string& address, uint16_t module_id,
                                          const Key128& vendor_key,
                                          const std::array<uint8_t, 32>& identity) {
  Bytes out;
  put_u8(out, static_cast<uint8_t>(address.size()));
  put_bytes(out, to_bytes(address));
  put_u16(out, module_id);
  put_bytes(out, vendor_key.bytes);
  put_bytes(out, BytesView(identity.data(), identity.size()));
  return out;
}

Bytes AttmanClient::encode_setkey_request(uint16_t handle, const std::array<uint8_t, 32>& identity,
                                          uint16_t conn_id, uint16_t io_id, uint16_t seq,
                                          const Key128& conn_key, CipherSuite suite) {
  Bytes out;
  put_u16(out, handle);
  put_bytes(out, BytesView(identity.data(), identity.size()));
  put_u16(out, conn_id);
  put_u16(out, io_id);
  put_u16(out, seq);
  put_bytes(out, conn_key.bytes);
  put_u8(out, static_cast<uint8_t>(suite));
  return out;
}

void register_std_behaviors() {
  auto& reg = BehaviorRegistry::global();
  reg.add("flo_sensor", [](BytesView init) { return std::make_unique<FloSensor>(init); });
  reg.add("flo_actuator", [](BytesView) { return std::make_unique<FloActuator>(); });
  reg.add("agg_sensor", [](BytesView) { return std::make_unique<Forwarder>(0, 1); });
  reg.add("agg", [](BytesView) { return std::make_unique<Agg>(); });
  reg.add("agg_display", [](BytesView) { return std::make_unique<Forwarder>(0, 1); });
  reg.add("temp_sensor", [](BytesView) { return std::make_unique<Forwarder>(0, 1); });
  reg.add("thermostat", [](BytesView) { return std::make_unique<Forwarder>(0, 1); });
  reg.add("light_switch", [](BytesView) { return std::make_unique<Forwarder>(0, 1); });
  reg.add("gateway", [](BytesView init) { return std::make_unique<Gateway>(init); });
  reg.add("web", [](BytesView) { return std::make_unique<Web>(); });
  reg.add("echo", [](BytesView) { return std::make_unique<Echo>(); });
  reg.add("attestation_manager",
          [](BytesView) { return std::make_unique<AttestationManager>(); });
}

}  // namespace authex::apps
