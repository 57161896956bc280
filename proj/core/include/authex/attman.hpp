#pragma once

#include "authex/crypto.hpp"
#include "authex/package.hpp"

namespace authex::apps {

// Attestation-manager module. Runs as a regular module (intended for an
// sgx-sim node); the deployer attests it first and then talks to it over a
// sealed request channel keyed by the manager's module key:
//
//   wire entry 3: attest_remote  plaintext request
//                   addr_len(1) || addr || module_id(2) || vendor_key(16) ||
//                   identity(32)
//                 The manager draws a fresh 16-byte challenge, calls the
//                 remote module's Attest entry through the untrusted host
//                 callout, verifies the evidence against the module key it
//                 derived itself, and on success stores that key. Reply
//                 plaintext: handle(2).
//   wire entry 4: make_setkey   plaintext request
//                   handle(2) || identity(32) || conn_id(2) || io_id(2) ||
//                   seq(2) || conn_key(16) || suite(1)
//                 Builds a SetKey body under the stored module key, so the
//                 deployer wires connections without ever holding the raw
//                 module key. Reply plaintext: the SetKey body.
//
// Request framing (both entries): args = seq(2) || ciphertext || tag(16),
// sealed under the manager's module key at nonce counter seq with
// aad = "ATTMAN" || seq; replies use the reply-stream nonce at the same seq.
// The manager accepts each seq exactly once, in order.

inline constexpr uint16_t kAttmanEntryAttest = 3;
inline constexpr uint16_t kAttmanEntryMakeSetKey = 4;

runtime::ModulePackage make_attman_package(uint16_t vendor_id);

/// Deployer-side endpoint of the sealed request channel.
class AttmanClient {
 public:
  AttmanClient() = default;
  explicit AttmanClient(const crypto::Key128& manager_module_key, uint16_t next_seq = 0)
      : key_(manager_module_key), seq_(next_seq) {}

  /// Returns the wire args for one sealed request and bumps the sequence.
  Bytes seal_request(BytesView plaintext);
  /// Opens the sealed reply to the most recent request.
  Bytes open_reply(BytesView reply);

  static Bytes encode_attest_request(const std::string& address, uint16_t module_id,
                                     const crypto::Key128& vendor_key,
                                     const std::array<uint8_t, 32>& identity);
  static Bytes encode_setkey_request(uint16_t handle, const std::array<uint8_t, 32>& identity,
                                     uint16_t conn_id, uint16_t io_id, uint16_t seq,
                                     const crypto::Key128& conn_key, crypto::CipherSuite suite);

  uint16_t next_seq() const { return seq_; }

 private:
  crypto::Key128 key_;
  uint16_t seq_ = 0;
};

}  // namespace authex::apps
