#include "authex/event_manager.hpp"

namespace authex::net {

EventManager::EventManager(tee::Node& node, Transport& transport)
    : node_(node), transport_(transport) {
  node_.set_local_event_sink([this](uint16_t module_id, uint16_t conn_id, Bytes sealed) {
    handle_local_event(module_id, conn_id, std::move(sealed));
  });
}

Bytes EventManager::encode_call_entry(uint16_t module_id, uint16_t entry, BytesView args) {
  Bytes body;
  put_u16(body, module_id);
  put_u16(body, entry);
  put_bytes(body, args);
  return body;
}

Bytes EventManager::encode_add_connection(uint16_t conn_id, uint16_t src_module_id,
                                          const std::string& dest_address,
                                          uint16_t dest_module_id) {
  if (dest_address.size() > 255) fail(Err::WireError, "destination address too long");
  Bytes body;
  put_u16(body, conn_id);
  put_u16(body, src_module_id);
  put_u8(body, static_cast<uint8_t>(dest_address.size()));
  put_bytes(body, to_bytes(dest_address));
  put_u16(body, dest_module_id);
  return body;
}

Bytes EventManager::encode_remote_event(uint16_t dest_module_id, uint16_t conn_id,
                                        BytesView sealed) {
  Bytes body;
  put_u16(body, dest_module_id);
  put_u16(body, conn_id);
  put_bytes(body, sealed);
  return body;
}

std::optional<Frame> EventManager::process(const Frame& frame) {
  switch (frame.op) {
    case Op::LoadModule: return serve_load_module(frame.body);
    case Op::CallEntry: return serve_call_entry(frame.body);
    case Op::AddConnection: return serve_add_connection(frame.body);
    case Op::RemoveModule: return serve_remove_module(frame.body);
    case Op::RemoteEvent:
      serve_remote_event(frame.body);
      return std::nullopt;
    default:
      note(frame.op, "unexpected opcode");
      return Frame::error("unexpected opcode");
  }
}

Frame EventManager::serve_load_module(BytesView body) {
  try {
    auto [id, identity] = node_.load_module(body);
    note(Op::LoadModule, "ok id=" + std::to_string(id));
    Bytes reply;
    put_u16(reply, id);
    put_bytes(reply, identity);
    return Frame::ack(std::move(reply));
  } catch (const Error& e) {
    note(Op::LoadModule, e.what());
    return Frame::error(e.what());
  }
}

Frame EventManager::serve_call_entry(BytesView body) {
  try {
    ByteReader r(body);
    uint16_t module_id = r.u16();
    uint16_t entry = r.u16();
    Bytes args = r.rest();
    Bytes reply = node_.call_entry(runtime::kCallerUntrusted, module_id, entry, args);
    note(Op::CallEntry, "ok");
    return Frame::ack(std::move(reply));
  } catch (const Error& e) {
    note(Op::CallEntry, e.what());
    return Frame::error(e.what());
  } catch (const std::exception& e) {
    note(Op::CallEntry, e.what());
    return Frame::error(e.what());
  }
}

Frame EventManager::serve_add_connection(BytesView body) {
  try {
    ByteReader r(body);
    RoutingEntry entry;
    entry.conn_id = r.u16();
    entry.src_module_id = r.u16();
    entry.dest_address = to_string(r.take(r.u8()));
    entry.dest_module_id = r.u16();
    if (!r.done()) fail(Err::WireError, "trailing bytes");
    // Insert-or-overwrite; overwrite serves the update flow.
    routes_[{entry.src_module_id, entry.conn_id}] = entry;
    note(Op::AddConnection, "ok");
    return Frame::ack();
  } catch (const Error& e) {
    note(Op::AddConnection, e.what());
    return Frame::error(e.what());
  }
}

Frame EventManager::serve_remove_module(BytesView body) {
  try {
    ByteReader r(body);
    uint16_t module_id = r.u16();
    node_.remove_module(module_id);
    note(Op::RemoveModule, "ok");
    return Frame::ack();
  } catch (const Error& e) {
    note(Op::RemoveModule, e.what());
    return Frame::error(e.what());
  }
}

void EventManager::serve_remote_event(BytesView body) {
  // Hostile network path: fully processed or discarded, never surfaced.
  try {
    ByteReader r(body);
    uint16_t dest_module = r.u16();
    uint16_t conn_id = r.u16();
    Bytes sealed = r.rest();
    if (!node_.has_module(dest_module)) {
      note(Op::RemoteEvent, "dropped: unknown module");
      return;
    }
    Bytes args;
    put_u16(args, conn_id);
    put_bytes(args, sealed);
    node_.call_entry(runtime::kCallerUntrusted, dest_module, runtime::kEntryHandleInput, args);
    note(Op::RemoteEvent, "ok");
  } catch (const std::exception& e) {
    note(Op::RemoteEvent, std::string("dropped: ") + e.what());
  }
}

void EventManager::handle_local_event(uint16_t src_module_id, uint16_t conn_id, Bytes sealed) {
  auto it = routes_.find({src_module_id, conn_id});
  if (it == routes_.end()) {
    dropped_no_route_++;
    note(Op::RemoteEvent, "local event dropped: no route");
    return;
  }
  const RoutingEntry& route = it->second;
  Frame frame{Op::RemoteEvent,
              encode_remote_event(route.dest_module_id, route.conn_id, sealed)};
  try {
    transport_.post(route.dest_address, frame);
  } catch (const std::exception& e) {
    // Availability-only failure.
    delivery_failures_++;
    note(Op::RemoteEvent, std::string("delivery lost: ") + e.what());
  }
}

}  // namespace authex::net
