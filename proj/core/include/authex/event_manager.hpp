#pragma once

#include <functional>
#include <map>

#include "authex/node.hpp"
#include "authex/wire.hpp"

namespace authex::net {

/// Plaintext routing metadata; corruption affects availability only.
struct RoutingEntry {
  uint16_t src_module_id = 0;
  uint16_t conn_id = 0;
  std::string dest_address;
  uint16_t dest_module_id = 0;
};

struct ManagerLogLine {
  uint64_t seq;
  Op op;
  std::string outcome;
};

/// The untrusted per-node runtime: loader and event router merged into one
/// process. Holds no keys and never inspects plaintext payloads.
class EventManager {
 public:
  EventManager(tee::Node& node, Transport& transport);

  /// Process one inbound frame. Returns the response frame for LoadModule /
  /// CallEntry / AddConnection / RemoveModule; nullopt for RemoteEvent
  /// (fire-and-forget).
  std::optional<Frame> process(const Frame& frame);

  void handle_local_event(uint16_t src_module_id, uint16_t conn_id, Bytes sealed);

  const std::map<std::pair<uint16_t, uint16_t>, RoutingEntry>& routes() const { return routes_; }
  const std::vector<ManagerLogLine>& log() const { return log_; }
  uint64_t dropped_no_route() const { return dropped_no_route_; }
  uint64_t delivery_failures() const { return delivery_failures_; }

  static Bytes encode_call_entry(uint16_t module_id, uint16_t entry, BytesView args);
  static Bytes encode_add_connection(uint16_t conn_id, uint16_t src_module_id,
                                     const std::string& dest_address, uint16_t dest_module_id);
  static Bytes encode_remote_event(uint16_t dest_module_id, uint16_t conn_id, BytesView sealed);

 private:
  Frame serve_load_module(BytesView body);
  Frame serve_call_entry(BytesView body);
  Frame serve_add_connection(BytesView body);
  Frame serve_remove_module(BytesView body);
  void serve_remote_event(BytesView body);
  void note(Op op, const std::string& outcome) { log_.push_back({log_seq_++, op, outcome}); }

  tee::Node& node_;
  Transport& transport_;
  std::map<std::pair<uint16_t, uint16_t>, RoutingEntry> routes_;
  std::vector<ManagerLogLine> log_;
  uint64_t log_seq_ = 0;
  uint64_t dropped_no_route_ = 0;
  uint64_t delivery_failures_ = 0;
};

}  // namespace authex::net
