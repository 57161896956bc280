#pragma once

#include <string>
#include <vector>

#include "authex/common.hpp"
#include "authex/crypto.hpp"

namespace authex::runtime {

struct EndpointDecl {
  uint16_t io_id;
  std::string label;
  bool operator==(const EndpointDecl&) const = default;
};

/// Loadable module image. Wire format (all integers big-endian):
///   name_len(1) || name || vendor_id(2) ||
///   n_inputs(1) || n_outputs(1) || n_requests(1) || n_handlers(1) ||
///   per-endpoint records [io_id(2) || label_len(1) || label]
///   (inputs, then outputs, then requests, then handlers) ||
///   init_len(2) || init bytes
/// The identity is SHA-256 over the full package bytes.
struct ModulePackage {
  std::string name;
  uint16_t vendor_id = 0;
  std::vector<EndpointDecl> inputs;
  std::vector<EndpointDecl> outputs;
  std::vector<EndpointDecl> requests;
  std::vector<EndpointDecl> handlers;
  Bytes init;

  Bytes serialize() const;
  static ModulePackage parse(BytesView raw);

  std::array<uint8_t, 32> identity() const { return crypto::sha256(serialize()); }

  bool operator==(const ModulePackage&) const = default;
};

}  // namespace authex::runtime
