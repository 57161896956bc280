#include "authex/node.hpp"

#include <sstream>

namespace authex::tee {

using crypto::Key128;

Flavor flavor_from_string(const std::string& s) {
  if (s == "sancus") return Flavor::sancus;
  if (s == "trustzone") return Flavor::trustzone;
  if (s == "sgx-sim") return Flavor::sgx_sim;
  fail(Err::SchemaError, "unknown TEE flavor '" + s + "'");
}

std::string flavor_to_string(Flavor f) {
  switch (f) {
    case Flavor::sancus: return "sancus";
    case Flavor::trustzone: return "trustzone";
    case Flavor::sgx_sim: return "sgx-sim";
  }
  return "?";
}

NodeConfig NodeConfig::from_text(const std::string& text) {
  NodeConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail(Err::SchemaError, "node config line without '=': " + line);
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "node_id") cfg.node_id = value;
    else if (key == "address") cfg.address = value;
    else if (key == "flavor") cfg.flavor = flavor_from_string(value);
    else if (key == "root_key") cfg.root_key = Key128::from(from_hex(value));
    else if (key == "vendor") cfg.vendors.insert(static_cast<uint16_t>(std::stoul(value)));
    else if (key == "max_modules") cfg.max_modules = std::stoul(value);
    else fail(Err::SchemaError, "unknown node config key '" + key + "'");
  }
  if (cfg.node_id.empty()) fail(Err::SchemaError, "node config missing node_id");
  return cfg;
}

std::string NodeConfig::to_text() const {
  std::ostringstream out;
  out << "node_id=" << node_id << "\n";
  out << "address=" << address << "\n";
  out << "flavor=" << flavor_to_string(flavor) << "\n";
  out << "root_key=" << to_hex(BytesView(root_key.bytes.data(), 16)) << "\n";
  for (uint16_t v : vendors) out << "vendor=" << v << "\n";
  out << "max_modules=" << max_modules << "\n";
  return out.str();
}

Key128 derive_vendor_key(const Key128& root, uint16_t vendor_id) {
  Bytes id;
  put_u16(id, vendor_id);
  return crypto::kdf128(root, id);
}

Key128 derive_module_key(const Key128& vendor_key, const std::array<uint8_t, 32>& identity) {
  return crypto::kdf128(vendor_key, BytesView(identity.data(), identity.size()));
}

Key128 derive_quoting_key(const Key128& root) {
  return crypto::kdf128(root, to_bytes("QUOTE"));
}

Key128 derive_module_key_for(Flavor flavor, const Key128& root, uint16_t vendor_id,
                             const std::array<uint8_t, 32>& identity) {
  if (flavor == Flavor::sgx_sim)
    return crypto::kdf128(root, BytesView(identity.data(), identity.size()));
  return derive_module_key(derive_vendor_key(root, vendor_id), identity);
}

bool verify_sgx_quote(const Key128& quoting_key, const std::array<uint8_t, 32>& identity,
                      BytesView challenge, BytesView evidence) {
  if (evidence.size() != 32 + challenge.size() + 16) return false;
  if (!std::equal(identity.begin(), identity.end(), evidence.begin())) return false;
  if (!std::equal(challenge.begin(), challenge.end(), evidence.begin() + 32)) return false;
  Bytes mac_input(evidence.begin(), evidence.begin() + 32 + challenge.size());
  auto tag = crypto::Tag128::from(evidence.subspan(32 + challenge.size()));
  return crypto::mac_verify(quoting_key, mac_input, tag);
}

Node::Node(NodeConfig config) : config_(std::move(config)) {
  if (config_.root_key.is_zero()) fail(Err::InvalidKey, "node root key must be set");
}

Key128 Node::vendor_key(uint16_t vendor_id) const {
  if (!config_.vendors.count(vendor_id))
    fail(Err::UnknownVendor, "vendor " + std::to_string(vendor_id) + " not registered on node "
                                 + config_.node_id);
  return derive_vendor_key(config_.root_key, vendor_id);
}

std::pair<uint16_t, std::array<uint8_t, 32>> Node::load_module(BytesView package_bytes) {
  if (modules_.size() >= config_.max_modules)
    fail(Err::CapacityExceeded, "node " + config_.node_id + " is full");
  runtime::ModulePackage pkg;
  try {
    pkg = runtime::ModulePackage::parse(package_bytes);
  } catch (const Error& e) {
    fail(Err::MalformedPackage, e.what());
  }
  auto identity = crypto::sha256(package_bytes);
  Key128 key;
  if (config_.flavor == Flavor::sgx_sim) {
    key = crypto::kdf128(config_.root_key, BytesView(identity.data(), identity.size()));
  } else {
    key = derive_module_key(vendor_key(pkg.vendor_id), identity);
  }

  std::unique_ptr<runtime::SecurityModule> mod;
  try {
    mod = std::make_unique<runtime::SecurityModule>(package_bytes, key);
  } catch (const Error& e) {
    if (e.code() == Err::DuplicateIoId) fail(Err::MalformedPackage, e.what());
    throw;
  }
  uint16_t id = next_id_++;
  mod->bind(id, this);
  mod->set_event_sink([this, id](uint16_t conn_id, Bytes sealed) {
    if (local_sink_) local_sink_(id, conn_id, std::move(sealed));
  });
  modules_[id] = std::move(mod);
  return {id, identity};
}

void Node::remove_module(uint16_t module_id) {
  if (modules_.erase(module_id) == 0)
    fail(Err::UnknownModule, "no module " + std::to_string(module_id));
}

runtime::SecurityModule& Node::module(uint16_t module_id) {
  auto it = modules_.find(module_id);
  if (it == modules_.end()) fail(Err::UnknownModule, "no module " + std::to_string(module_id));
  return *it->second;
}

Bytes Node::attest(uint16_t module_id, BytesView challenge) {
  runtime::SecurityModule& mod = module(module_id);
  if (config_.flavor != Flavor::sgx_sim) return mod.attest(challenge).as_bytes();
  // Quote: identity || challenge || MAC(quoting_key, identity || challenge).
  if (challenge.size() < 16) fail(Err::ChallengeTooShort, "challenge must be at least 16 bytes");
  Bytes evidence(mod.identity().begin(), mod.identity().end());
  put_bytes(evidence, challenge);
  auto tag = crypto::mac_tag(derive_quoting_key(config_.root_key), evidence);
  put_bytes(evidence, tag.bytes);
  return evidence;
}

Bytes Node::call_entry(uint16_t caller, uint16_t module_id, uint16_t entry, BytesView args) {
  // Attestation evidence is flavor-specific and produced at the node level.
  if (entry == runtime::kEntryAttest) return attest(module_id, args);
  runtime::SecurityModule& mod = module(module_id);
  caller_stack_.push_back(caller);
  try {
    Bytes out = mod.dispatch_entry(entry, args, caller);
    caller_stack_.pop_back();
    return out;
  } catch (...) {
    caller_stack_.pop_back();
    throw;
  }
}

Bytes Node::call_module(uint16_t caller_module, uint16_t module_id, uint16_t entry,
                        BytesView args) {
  return call_entry(caller_module, module_id, entry, args);
}

void Node::device_write(uint16_t module_id, const std::string& device_id, BytesView value,
                        const std::string& attribution) {
  if (!device_write_) fail(Err::UnknownDevice, "node has no device bus");
  device_write_(module_id, device_id, value, attribution);
}

Bytes Node::device_read(uint16_t module_id, const std::string& device_id) {
  if (!device_read_) fail(Err::UnknownDevice, "node has no device bus");
  return device_read_(module_id, device_id);
}

Bytes Node::host_request(const std::string& address, BytesView frame) {
  if (!host_transport_) fail(Err::NodeUnreachable, "node has no host transport");
  return host_transport_(address, frame);
}

void Node::reset() {
  modules_.clear();
  next_id_ = 1;
  epoch_++;
}

}  // namespace authex::tee
