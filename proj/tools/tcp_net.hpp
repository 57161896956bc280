#pragma once

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "authex/deploy.hpp"
#include "authex/event_manager.hpp"
#include "authex/secure_io.hpp"

namespace authex::tools {

/// "tcp://host:port" -> {host, port}. Throws on any other scheme.
std::pair<std::string, uint16_t> parse_tcp_address(const std::string& address);

/// Sends one frame to a tcp:// address and, for request ops, reads the
/// response frame. One frame per connection.
net::Frame tcp_request(const std::string& address, const net::Frame& frame);
void tcp_post(const std::string& address, const net::Frame& frame);

/// Dialing transport used by node servers to forward events to their peers.
class TcpTransport : public net::Transport {
 public:
  net::Frame request(const std::string& address, const net::Frame& frame) override {
    return tcp_request(address, frame);
  }
  void post(const std::string& address, const net::Frame& frame) override {
    tcp_post(address, frame);
  }
};

/// Deployer-side network: dials node managers and listens on a fixed local
/// port for sealed replies on direct request connections.
class TcpNet : public deploy::DeployerNet {
 public:
  explicit TcpNet(uint16_t listen_port);
  ~TcpNet() override;

  net::Frame request(const std::string& address, const net::Frame& frame) override {
    return tcp_request(address, frame);
  }
  void post(const std::string& address, const net::Frame& frame) override {
    tcp_post(address, frame);
  }
  std::string reply_address() override;
  std::optional<Bytes> wait_reply(uint16_t conn_id, uint64_t timeout_ms) override;
  uint64_t now_ms() override;

 private:
  void accept_loop();

  int listen_fd_ = -1;
  uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread accept_thread_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::map<uint16_t, Bytes> replies_;
};

/// One simulated node behind a real TCP listener: event manager, device bus,
/// and outbound links to peer managers. Blocks in serve().
class NodeServer {
 public:
  NodeServer(const tee::NodeConfig& config,
             const std::vector<std::pair<std::string, io::DeviceKind>>& devices);

  /// Accepts connections on the node's tcp:// address until the process dies.
  void serve();

  tee::Node& node() { return *node_; }

 private:
  void handle_connection(int fd);
  void flush_physical_log();

  tee::NodeConfig config_;
  TcpTransport transport_;
  std::unique_ptr<tee::Node> node_;
  std::unique_ptr<net::EventManager> manager_;
  std::unique_ptr<io::DeviceBus> bus_;
  std::mutex mu_;
  size_t log_cursor_ = 0;
};

}  // namespace authex::tools
