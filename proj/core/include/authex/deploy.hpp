#pragma once

#include <optional>

#include "authex/attman.hpp"
#include "authex/node.hpp"
#include "authex/secure_io.hpp"
#include "authex/wire.hpp"

namespace authex::deploy {

/// One side of a connection: a module's declared io, the deployer's own
/// machine, or a physical device endpoint.
struct EndpointRef {
  enum class Kind { module_io, deployer, device };
  Kind kind = Kind::deployer;
  std::string module;  // module_io
  std::string label;   // module_io
  std::string device;  // device

  // "deployer" | "device:<id>" | "<module>.<label>"
  static EndpointRef parse(const std::string& text);
  std::string str() const;
  bool operator==(const EndpointRef&) const = default;
};

struct NodeDecl {
  std::string name;
  std::string address;
  tee::Flavor flavor = tee::Flavor::sancus;
  std::map<std::string, std::string> extra;  // flavor-specific open fields
  bool operator==(const NodeDecl&) const = default;
};

struct ModuleDecl {
  std::string name;
  std::string node;
  std::string behavior;
  uint16_t vendor_id = 0;
  std::vector<runtime::EndpointDecl> inputs, outputs, requests, handlers;
  Bytes init;
  bool operator==(const ModuleDecl&) const = default;
};

struct ConnDecl {
  std::string name;  // defaults to "<from>-><to>"
  EndpointRef from, to;
  crypto::CipherSuite suite = crypto::CipherSuite::AesGcm128;
  bool direct = false;
  bool exclusive = true;  // device leases; input devices may opt into sharing
  bool operator==(const ConnDecl&) const = default;
};

/// The three-section deployment document. parse() reports every violation at
/// once inside the SchemaError message.
struct Descriptor {
  std::vector<NodeDecl> nodes;
  std::vector<ModuleDecl> modules;
  std::vector<ConnDecl> connections;

  static Descriptor parse(const std::string& text);
  std::string serialize() const;

  const NodeDecl& node(const std::string& name) const;
  const ModuleDecl& module(const std::string& name) const;
  const ConnDecl& connection(const std::string& name) const;
  bool operator==(const Descriptor&) const = default;
};

Bytes build_package(const ModuleDecl& decl);

struct ModuleState {
  std::string node;
  uint16_t module_id = 0;
  std::array<uint8_t, 32> identity{};
  bool loaded = false;
  bool attested = false;
  crypto::Key128 module_key;    // zero when held by the attestation manager
  uint16_t attman_handle = 0;   // 0 = none
  uint16_t setkey_seq = 0;
};

struct ConnState {
  uint16_t conn_id = 0;
  crypto::Key128 key;
  crypto::CipherSuite suite = crypto::CipherSuite::AesGcm128;
  bool established = false;
  bool direct = false;
  bool is_request = false;
  uint16_t nonce = 0;        // deployer-side counters for direct connections
  uint16_t reply_nonce = 0;
  std::vector<std::string> lease_transcript;  // device endpoints only
};

struct DeploymentState {
  std::map<std::string, ModuleState> modules;
  std::map<std::string, ConnState> connections;
  std::set<std::string> used_key_hex;  // key-freshness ledger
  uint16_t next_conn_id = 0;
  std::string attman_module;  // empty = the deployer attests directly
  uint16_t attman_seq = 0;

  std::string serialize() const;
  static DeploymentState parse(const std::string& text);
};

/// Network reach of the deployer process. The reply address must be routable
/// from event managers so direct request connections can answer.
class DeployerNet {
 public:
  virtual ~DeployerNet() = default;
  virtual net::Frame request(const std::string& address, const net::Frame& frame) = 0;
  virtual void post(const std::string& address, const net::Frame& frame) = 0;
  virtual std::string reply_address() = 0;
  /// Sealed reply frames routed to reply_address(), keyed by conn_id.
  virtual std::optional<Bytes> wait_reply(uint16_t conn_id, uint64_t timeout_ms) = 0;
  virtual uint64_t now_ms() = 0;
};

struct OpReport {
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

struct UpdateReport {
  uint64_t loss_window_ms = 0;
  std::vector<uint16_t> reestablished_conn_ids;
};

/// The trusted deployer: packages and loads modules, attests them per flavor,
/// establishes keys, and performs live updates. All commands are idempotent
/// over a healthy deployment.
class Deployer {
 public:
  Deployer(DeployerNet& net, io::Provider* provider, crypto::Rng rng = crypto::Rng(),
           std::string deployer_id = "deployer");

  OpReport deploy(const Descriptor& d, DeploymentState& state);
  OpReport attest(const Descriptor& d, DeploymentState& state);
  OpReport connect(const Descriptor& d, DeploymentState& state);
  UpdateReport update(const Descriptor& d, DeploymentState& state, const std::string& module_name,
                      std::optional<ModuleDecl> replacement = std::nullopt);
  /// Sends one event on a direct connection; request-kind connections return
  /// the opened reply payload.
  std::optional<Bytes> send_direct(const Descriptor& d, DeploymentState& state,
                                   const std::string& conn_name, BytesView payload,
                                   uint64_t timeout_ms = 2000);

 private:
  crypto::Key128 fresh_key(DeploymentState& state);
  void attest_one(const Descriptor& d, DeploymentState& state, const std::string& name);
  void attest_via_manager(const Descriptor& d, DeploymentState& state, const std::string& name);
  void send_setkey(const Descriptor& d, DeploymentState& state, const std::string& module_name,
                   uint16_t conn_id, uint16_t io_id, const crypto::Key128& conn_key,
                   crypto::CipherSuite suite);
  void add_route(const std::string& manager_address, uint16_t conn_id, uint16_t src_module_id,
                 const std::string& dest_address, uint16_t dest_module_id);
  void establish(const Descriptor& d, DeploymentState& state, const std::string& conn_name,
                 bool rotate_only);
  void lease_connect(const Descriptor& d, DeploymentState& state, const std::string& conn_name,
                     const std::string& device_id, uint16_t conn_id,
                     const crypto::Key128& conn_key, bool exclusive);
  uint16_t resolve_io(const Descriptor& d, const EndpointRef& ep, bool& is_request_like) const;

  DeployerNet& net_;
  io::Provider* provider_;
  crypto::Rng rng_;
  std::string deployer_id_;
};

}  // namespace authex::deploy
