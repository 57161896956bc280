#pragma once

#include <optional>
#include <string>

#include "authex/common.hpp"

namespace authex::net {

// Wire opcodes, bit-exact. Ack/Error are responses only.
enum class Op : uint8_t {
  LoadModule = 0x00,
  CallEntry = 0x01,
  AddConnection = 0x02,
  RemoteEvent = 0x03,
  Ack = 0x04,
  Error = 0x05,
  RemoveModule = 0x06,
};

/// Length-prefixed frame: opcode(1) || length(2 BE) || body.
struct Frame {
  Op op;
  Bytes body;

  Bytes encode() const {
    if (body.size() > 0xffff) fail(Err::WireError, "frame body too long");
    Bytes out;
    put_u8(out, static_cast<uint8_t>(op));
    put_u16(out, static_cast<uint16_t>(body.size()));
    put_bytes(out, body);
    return out;
  }

  static Frame decode(BytesView raw) {
    ByteReader r(raw);
    Frame f;
    uint8_t op = r.u8();
    if (op > 0x06) fail(Err::WireError, "unknown opcode " + std::to_string(op));
    f.op = static_cast<Op>(op);
    f.body = r.take(r.u16());
    if (!r.done()) fail(Err::WireError, "trailing bytes after frame");
    return f;
  }

  static Frame ack(Bytes body = {}) { return {Op::Ack, std::move(body)}; }
  static Frame error(const std::string& msg) { return {Op::Error, to_bytes(msg)}; }
};

/// Request/response transport between event managers. post() is fire-and
/// -forget (RemoteEvent); request() waits for the Ack/Error frame.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual Frame request(const std::string& address, const Frame& frame) = 0;
  virtual void post(const std::string& address, const Frame& frame) = 0;
};

}  // namespace authex::net
