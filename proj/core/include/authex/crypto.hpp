#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "authex/common.hpp"

namespace authex::crypto {

/// 128-bit symmetric key. The all-zero value is reserved to mean "unset" and
/// is never produced by derivation or random generation.
struct Key128 {
  std::array<uint8_t, 16> bytes{};

  bool is_zero() const {
    for (uint8_t b : bytes)
      if (b != 0) return false;
    return true;
  }
  static Key128 from(BytesView b) {
    if (b.size() != 16) fail(Err::InvalidKey, "key must be exactly 16 bytes");
    Key128 k;
    std::copy(b.begin(), b.end(), k.bytes.begin());
    return k;
  }
  Bytes as_bytes() const { return Bytes(bytes.begin(), bytes.end()); }
  auto operator<=>(const Key128&) const = default;
};

/// 128-bit authentication tag.
struct Tag128 {
  std::array<uint8_t, 16> bytes{};

  static Tag128 from(BytesView b) {
    if (b.size() != 16) fail(Err::WireError, "tag must be exactly 16 bytes");
    Tag128 t;
    std::copy(b.begin(), b.end(), t.bytes.begin());
    return t;
  }
  Bytes as_bytes() const { return Bytes(bytes.begin(), bytes.end()); }
  auto operator<=>(const Tag128&) const = default;
};

/// 12-byte AEAD nonce: 10 zero bytes followed by a 16-bit big-endian counter.
/// Reply streams flip byte 9 so the forward and reply counters never collide
/// under the same connection key.
struct AeadNonce {
  std::array<uint8_t, 12> bytes{};

  static AeadNonce counter(uint16_t c) {
    AeadNonce n;
    n.bytes[10] = static_cast<uint8_t>(c >> 8);
    n.bytes[11] = static_cast<uint8_t>(c & 0xff);
    return n;
  }
  static AeadNonce reply_counter(uint16_t c) {
    AeadNonce n = counter(c);
    n.bytes[9] = 0x01;
    return n;
  }
  static AeadNonce from(BytesView b) {
    if (b.size() != 12) fail(Err::WireError, "nonce must be exactly 12 bytes");
    AeadNonce n;
    std::copy(b.begin(), b.end(), n.bytes.begin());
    return n;
  }
  uint16_t counter_value() const {
    return static_cast<uint16_t>(bytes[10] << 8 | bytes[11]);
  }
  auto operator<=>(const AeadNonce&) const = default;
};

enum class CipherSuite : uint8_t {
  AesGcm128 = 0,
  // Plug-in slot; no implementation is registered, so any use yields
  // UnsupportedCipher.
  Spongent128 = 1,
};

inline CipherSuite suite_from_byte(uint8_t b) {
  if (b > 1) fail(Err::UnsupportedCipher, "unknown cipher suite id " + std::to_string(b));
  return static_cast<CipherSuite>(b);
}

struct Sealed {
  Bytes ciphertext;
  Tag128 tag;

  // Wire form: ciphertext || tag.
  Bytes encode() const {
    Bytes out = ciphertext;
    put_bytes(out, tag.bytes);
    return out;
  }
  static Sealed decode(BytesView b) {
    if (b.size() < 16) fail(Err::WireError, "sealed body shorter than a tag");
    Sealed s;
    s.ciphertext.assign(b.begin(), b.end() - 16);
    s.tag = Tag128::from(BytesView(b.data() + b.size() - 16, 16));
    return s;
  }
};

/// Authenticated encryption. |ciphertext| == |plaintext|; the tag binds the
/// nonce, the associated data and the ciphertext.
Sealed aead_seal(CipherSuite suite, const Key128& key, const AeadNonce& nonce,
                 BytesView plaintext, BytesView aad);

/// Inverse of aead_seal; throws AuthFailure unless (key, nonce, ciphertext,
/// tag, aad) verify.
Bytes aead_open(CipherSuite suite, const Key128& key, const AeadNonce& nonce,
                BytesView ciphertext, const Tag128& tag, BytesView aad);

/// CTR-mode decryption that skips tag verification entirely. Exists only so
/// the adversary harness can build a deliberately broken module for the
/// negative-control experiment; never called on any production path.
Bytes aead_open_insecure_no_verify(CipherSuite suite, const Key128& key,
                                   const AeadNonce& nonce, BytesView ciphertext);

std::array<uint8_t, 32> sha256(BytesView data);

/// First 16 bytes of SHA-256(parent || data).
Key128 kdf128(BytesView parent, BytesView data);
inline Key128 kdf128(const Key128& parent, BytesView data) {
  return kdf128(BytesView(parent.bytes.data(), parent.bytes.size()), data);
}

/// MAC as the tag of sealing an empty plaintext with a zero-counter nonce and
/// the data as associated data.
Tag128 mac_tag(const Key128& key, BytesView data);
bool mac_verify(const Key128& key, BytesView data, const Tag128& tag);

/// Randomness source. Default construction seeds from the OS; the seeded form
/// yields a reproducible stream for harness runs.
class Rng {
 public:
  Rng();
  explicit Rng(uint64_t seed);

  Bytes bytes(size_t n);
  Key128 key();
  std::array<uint8_t, 16> bytes16();
  uint64_t u64();
  // Uniform in [0, bound).
  uint64_t below(uint64_t bound);

 private:
  bool seeded_;
  std::mt19937_64 gen_;
};

}  // namespace authex::crypto
