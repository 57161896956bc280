#include "tcp_net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstring>

namespace authex::tools {

namespace {

void write_all(int fd, const Bytes& data) {
  size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n <= 0) fail(Err::NodeUnreachable, "socket write failed");
    off += static_cast<size_t>(n);
  }
}

bool read_exact(int fd, uint8_t* out, size_t len) {
  size_t off = 0;
  while (off < len) {
    ssize_t n = ::recv(fd, out + off, len - off, 0);
    if (n <= 0) return false;
    off += static_cast<size_t>(n);
  }
  return true;
}

std::optional<net::Frame> read_frame(int fd) {
  uint8_t header[3];
  if (!read_exact(fd, header, 3)) return std::nullopt;
  size_t len = static_cast<size_t>(header[1]) << 8 | header[2];
  Bytes raw(header, header + 3);
  raw.resize(3 + len);
  if (len > 0 && !read_exact(fd, raw.data() + 3, len)) return std::nullopt;
  return net::Frame::decode(raw);
}

int dial(const std::string& address) {
  auto [host, port] = parse_tcp_address(address);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) fail(Err::NodeUnreachable, "socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    fail(Err::NodeUnreachable, "bad host in " + address);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    fail(Err::NodeUnreachable, "cannot reach " + address);
  }
  return fd;
}

int listen_on(uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) fail(Err::NodeUnreachable, "socket() failed");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd, 16) != 0) {
    ::close(fd);
    fail(Err::NodeUnreachable, "cannot listen on port " + std::to_string(port));
  }
  return fd;
}

}  // namespace

std::pair<std::string, uint16_t> parse_tcp_address(const std::string& address) {
  const std::string scheme = "tcp://";
  if (address.rfind(scheme, 0) != 0) fail(Err::NodeUnreachable, "not a tcp:// address: " + address);
  std::string rest = address.substr(scheme.size());
  auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon + 1 == rest.size())
    fail(Err::NodeUnreachable, "missing port in " + address);
  int port = std::stoi(rest.substr(colon + 1));
  if (port <= 0 || port > 0xffff) fail(Err::NodeUnreachable, "bad port in " + address);
  return {rest.substr(0, colon), static_cast<uint16_t>(port)};
}

net::Frame tcp_request(const std::string& address, const net::Frame& frame) {
  int fd = dial(address);
  try {
    write_all(fd, frame.encode());
    auto resp = read_frame(fd);
    ::close(fd);
    if (!resp) fail(Err::NodeUnreachable, "connection closed by " + address);
    return *resp;
  } catch (...) {
    ::close(fd);
    throw;
  }
}

void tcp_post(const std::string& address, const net::Frame& frame) {
  try {
    int fd = dial(address);
    write_all(fd, frame.encode());
    ::close(fd);
  } catch (const Error&) {
    // Fire-and-forget: an unreachable peer is an availability loss only.
  }
}

TcpNet::TcpNet(uint16_t listen_port) : port_(listen_port) {
  listen_fd_ = listen_on(port_);
  if (port_ == 0) {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  accept_thread_ = std::thread([this] { accept_loop(); });
}

TcpNet::~TcpNet() {
  stop_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (accept_thread_.joinable()) accept_thread_.join();
}

void TcpNet::accept_loop() {
  while (!stop_) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stop_) return;
      continue;
    }
    auto frame = read_frame(fd);
    ::close(fd);
    if (!frame || frame->op != net::Op::RemoteEvent) continue;
    try {
      ByteReader r(frame->body);
      r.u16();  // module id slot is unused on the deployer endpoint
      uint16_t conn_id = r.u16();
      Bytes sealed = r.rest();
      std::lock_guard lock(mu_);
      replies_[conn_id] = std::move(sealed);
      cv_.notify_all();
    } catch (const std::exception&) {
      // Hostile bytes; drop.
    }
  }
}

std::string TcpNet::reply_address() { return "tcp://127.0.0.1:" + std::to_string(port_); }

std::optional<Bytes> TcpNet::wait_reply(uint16_t conn_id, uint64_t timeout_ms) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                    [&] { return replies_.count(conn_id) != 0; }))
    return std::nullopt;
  Bytes out = std::move(replies_.at(conn_id));
  replies_.erase(conn_id);
  return out;
}

uint64_t TcpNet::now_ms() {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now().time_since_epoch())
                                   .count());
}

NodeServer::NodeServer(const tee::NodeConfig& config,
                       const std::vector<std::pair<std::string, io::DeviceKind>>& devices)
    : config_(config) {
  node_ = std::make_unique<tee::Node>(config_);
  manager_ = std::make_unique<net::EventManager>(*node_, transport_);
  bus_ = std::make_unique<io::DeviceBus>(*node_, [] {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                     std::chrono::steady_clock::now().time_since_epoch())
                                     .count());
  });
  node_->set_host_transport([this](const std::string& addr, BytesView raw) {
    return tcp_request(addr, net::Frame::decode(raw)).encode();
  });
  for (const auto& [device, kind] : devices) bus_->attach_device(device, kind);
}

void NodeServer::serve() {
  auto [host, port] = parse_tcp_address(config_.address);
  (void)host;
  int fd = listen_on(port);
  std::fprintf(stderr, "node %s (%s) listening on %s\n", config_.node_id.c_str(),
               tee::flavor_to_string(config_.flavor).c_str(), config_.address.c_str());
  while (true) {
    int client = ::accept(fd, nullptr, nullptr);
    if (client < 0) continue;
    std::thread([this, client] { handle_connection(client); }).detach();
  }
}

void NodeServer::handle_connection(int fd) {
  auto frame = read_frame(fd);
  if (frame) {
    std::optional<net::Frame> resp;
    {
      std::lock_guard lock(mu_);
      try {
        resp = manager_->process(*frame);
      } catch (const std::exception& e) {
        resp = net::Frame::error(e.what());
      }
      flush_physical_log();
    }
    if (resp) {
      try {
        write_all(fd, resp->encode());
      } catch (const Error&) {
        // Client went away; nothing to do.
      }
    }
  }
  ::close(fd);
}

void NodeServer::flush_physical_log() {
  std::vector<std::string> lines = bus_->export_log_lines();
  for (; log_cursor_ < lines.size(); log_cursor_++)
    std::fprintf(stderr, "physical: %s\n", lines[log_cursor_].c_str());
}

}  // namespace authex::tools
