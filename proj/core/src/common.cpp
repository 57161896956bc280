#include "authex/common.hpp"

namespace authex {

const char* err_name(Err e) {
  switch (e) {
    case Err::UnsupportedCipher: return "UnsupportedCipher";
    case Err::InvalidKey: return "InvalidKey";
    case Err::AuthFailure: return "AuthFailure";
    case Err::UnknownBehavior: return "UnknownBehavior";
    case Err::DuplicateIoId: return "DuplicateIoId";
    case Err::StaleSequence: return "StaleSequence";
    case Err::UnknownConnection: return "UnknownConnection";
    case Err::Unestablished: return "Unestablished";
    case Err::NonceExhausted: return "NonceExhausted";
    case Err::UnknownEntry: return "UnknownEntry";
    case Err::UnknownIo: return "UnknownIo";
    case Err::ChallengeTooShort: return "ChallengeTooShort";
    case Err::Timeout: return "Timeout";
    case Err::UnknownVendor: return "UnknownVendor";
    case Err::UnknownModule: return "UnknownModule";
    case Err::MalformedPackage: return "MalformedPackage";
    case Err::CapacityExceeded: return "CapacityExceeded";
    case Err::UnknownDevice: return "UnknownDevice";
    case Err::CallerRejected: return "CallerRejected";
    case Err::LeaseHeld: return "LeaseHeld";
    case Err::UnknownDriver: return "UnknownDriver";
    case Err::NonceMismatch: return "NonceMismatch";
    case Err::SchemaError: return "SchemaError";
    case Err::NodeUnreachable: return "NodeUnreachable";
    case Err::AttestationFailed: return "AttestationFailed";
    case Err::SetKeyRejected: return "SetKeyRejected";
    case Err::KeyMismatch: return "KeyMismatch";
    case Err::ScenarioError: return "ScenarioError";
    case Err::WireError: return "WireError";
  }
  return "Unknown";
}

std::string to_hex(BytesView b) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (uint8_t c : b) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

static int hex_val(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  fail(Err::WireError, "invalid hex digit");
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) fail(Err::WireError, "odd-length hex string");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<uint8_t>(hex_val(hex[i]) << 4 | hex_val(hex[i + 1])));
  return out;
}

}  // namespace authex
