#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace authex {

using Bytes = std::vector<uint8_t>;
using BytesView = std::span<const uint8_t>;

enum class Err {
  UnsupportedCipher,
  InvalidKey,
  AuthFailure,
  UnknownBehavior,
  DuplicateIoId,
  StaleSequence,
  UnknownConnection,
  Unestablished,
  NonceExhausted,
  UnknownEntry,
  UnknownIo,
  ChallengeTooShort,
  Timeout,
  UnknownVendor,
  UnknownModule,
  MalformedPackage,
  CapacityExceeded,
  UnknownDevice,
  CallerRejected,
  LeaseHeld,
  UnknownDriver,
  NonceMismatch,
  SchemaError,
  NodeUnreachable,
  AttestationFailed,
  SetKeyRejected,
  KeyMismatch,
  ScenarioError,
  WireError,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw Error(code, msg); }

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(BytesView b) { return std::string(b.begin(), b.end()); }

inline void put_u8(Bytes& out, uint8_t v) { out.push_back(v); }

inline void put_u16(Bytes& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v & 0xff));
}

inline void put_bytes(Bytes& out, BytesView b) { out.insert(out.end(), b.begin(), b.end()); }

// Cursor for parsing length-checked binary formats. All integers big-endian.
class ByteReader {
 public:
  explicit ByteReader(BytesView data) : data_(data) {}

  uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(data_[pos_] << 8 | data_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  Bytes take(size_t n) {
    need(n);
    Bytes out(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return out;
  }
  Bytes rest() { return take(remaining()); }
  size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return remaining() == 0; }

 private:
  void need(size_t n) const {
    if (data_.size() - pos_ < n) fail(Err::WireError, "truncated input");
  }
  BytesView data_;
  size_t pos_ = 0;
};

std::string to_hex(BytesView b);
Bytes from_hex(std::string_view hex);

}  // namespace authex
