#include "authex/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <memory>

namespace authex::crypto {

namespace {

struct CtxFree {
  void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CtxFree>;

void require_suite(CipherSuite suite) {
  if (suite != CipherSuite::AesGcm128)
    fail(Err::UnsupportedCipher, "no implementation registered for suite "
                                     + std::to_string(static_cast<int>(suite)));
}

[[noreturn]] void ssl_fail(const char* what) {
  throw std::runtime_error(std::string("openssl failure in ") + what);
}

}  // namespace

Sealed aead_seal(CipherSuite suite, const Key128& key, const AeadNonce& nonce,
                 BytesView plaintext, BytesView aad) {
  require_suite(suite);
  if (key.is_zero()) fail(Err::InvalidKey, "refusing to seal under the reserved all-zero key");

  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) ssl_fail("ctx alloc");
  if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_gcm(), nullptr, key.bytes.data(),
                         nonce.bytes.data()) != 1)
    ssl_fail("EncryptInit");

  int len = 0;
  if (!aad.empty() &&
      EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
    ssl_fail("aad update");

  Sealed out;
  out.ciphertext.resize(plaintext.size());
  if (!plaintext.empty() &&
      EVP_EncryptUpdate(ctx.get(), out.ciphertext.data(), &len, plaintext.data(),
                        static_cast<int>(plaintext.size())) != 1)
    ssl_fail("EncryptUpdate");
  if (EVP_EncryptFinal_ex(ctx.get(), nullptr, &len) != 1) ssl_fail("EncryptFinal");
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, 16, out.tag.bytes.data()) != 1)
    ssl_fail("get tag");
  return out;
}

Bytes aead_open(CipherSuite suite, const Key128& key, const AeadNonce& nonce,
                BytesView ciphertext, const Tag128& tag, BytesView aad) {
  require_suite(suite);

  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) ssl_fail("ctx alloc");
  if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_128_gcm(), nullptr, key.bytes.data(),
                         nonce.bytes.data()) != 1)
    ssl_fail("DecryptInit");

  int len = 0;
  if (!aad.empty() &&
      EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
    ssl_fail("aad update");

  Bytes plaintext(ciphertext.size());
  if (!ciphertext.empty() &&
      EVP_DecryptUpdate(ctx.get(), plaintext.data(), &len, ciphertext.data(),
                        static_cast<int>(ciphertext.size())) != 1)
    ssl_fail("DecryptUpdate");

  Bytes tag_copy(tag.bytes.begin(), tag.bytes.end());
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, 16, tag_copy.data()) != 1)
    ssl_fail("set tag");
  if (EVP_DecryptFinal_ex(ctx.get(), nullptr, &len) != 1)
    fail(Err::AuthFailure, "tag verification failed");
  return plaintext;
}

Bytes aead_open_insecure_no_verify(CipherSuite suite, const Key128& key,
                                   const AeadNonce& nonce, BytesView ciphertext) {
  require_suite(suite);
  // GCM keystream = CTR with IV || 0^31 || 1, counter starting at 2 for the
  // payload blocks.
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) ssl_fail("ctx alloc");
  std::array<uint8_t, 16> iv{};
  std::copy(nonce.bytes.begin(), nonce.bytes.end(), iv.begin());
  iv[15] = 2;
  if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_128_ctr(), nullptr, key.bytes.data(), iv.data()) != 1)
    ssl_fail("ctr init");
  Bytes plaintext(ciphertext.size());
  int len = 0;
  if (!ciphertext.empty() &&
      EVP_EncryptUpdate(ctx.get(), plaintext.data(), &len, ciphertext.data(),
                        static_cast<int>(ciphertext.size())) != 1)
    ssl_fail("ctr update");
  return plaintext;
}

std::array<uint8_t, 32> sha256(BytesView data) {
  std::array<uint8_t, 32> out;
  SHA256(data.data(), data.size(), out.data());
  return out;
}

Key128 kdf128(BytesView parent, BytesView data) {
  if (parent.empty()) fail(Err::InvalidKey, "kdf parent must be non-empty");
  Bytes buf(parent.begin(), parent.end());
  put_bytes(buf, data);
  auto digest = sha256(buf);
  Key128 k;
  std::copy(digest.begin(), digest.begin() + 16, k.bytes.begin());
  return k;
}

Tag128 mac_tag(const Key128& key, BytesView data) {
  return aead_seal(CipherSuite::AesGcm128, key, AeadNonce::counter(0), {}, data).tag;
}

bool mac_verify(const Key128& key, BytesView data, const Tag128& tag) {
  try {
    aead_open(CipherSuite::AesGcm128, key, AeadNonce::counter(0), {}, tag, data);
    return true;
  } catch (const Error& e) {
    if (e.code() == Err::AuthFailure) return false;
    throw;
  }
}

Rng::Rng() : seeded_(false), gen_(0) {}

Rng::Rng(uint64_t seed) : seeded_(true), gen_(seed) {}

Bytes Rng::bytes(size_t n) {
  Bytes out(n);
  if (n == 0) return out;
  if (seeded_) {
    for (auto& b : out) b = static_cast<uint8_t>(gen_());
  } else {
    if (RAND_bytes(out.data(), static_cast<int>(n)) != 1) ssl_fail("RAND_bytes");
  }
  return out;
}

Key128 Rng::key() {
  for (;;) {
    Key128 k = Key128::from(bytes(16));
    if (!k.is_zero()) return k;
  }
}

std::array<uint8_t, 16> Rng::bytes16() {
  auto b = bytes(16);
  std::array<uint8_t, 16> out;
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

uint64_t Rng::u64() {
  if (seeded_) return gen_();
  auto b = bytes(8);
  uint64_t v = 0;
  for (uint8_t c : b) v = v << 8 | c;
  return v;
}

uint64_t Rng::below(uint64_t bound) { return bound == 0 ? 0 : u64() % bound; }

}  // namespace authex::crypto
