#include "agentstepper/server.hpp"

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <spdlog/spdlog.h>

#include <deque>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace agentstepper {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

constexpr std::size_t kMaxMessageBytes = 256U * 1024U * 1024U;

constexpr const char* kPlaceholderIndex = R"(<!doctype html>
<html>
<head><meta charset="utf-8"><title>AgentStepper</title></head>
<body>
<h1>AgentStepper debug server</h1>
<p>No web UI bundle is installed. Start the server with <code>--ui-dir</code> pointing at a built UI,
or connect a client to the WebSocket endpoint at <code>/ws</code>.</p>
</body>
</html>
)";

std::string random_session_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream out;
  out << std::hex << rng();
  return out.str();
}

std::string_view mime_type(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".woff2") return "font/woff2";
  return "application/octet-stream";
}

class Registry;

class WsSession final : public Connection, public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, DebugHub& hub, Registry& registry)
      : ws_(std::move(socket)), hub_(hub), registry_(registry), session_id_(random_session_id()) {}

  void run(http::request<http::string_body> request);

  void send(Envelope envelope) override {
    net::post(ws_.get_executor(), [self = shared_from_this(), env = std::move(envelope)]() mutable {
      if (self->finished_) {
        return;
      }
      env.session = self->session_id_;
      env.seq = self->next_seq_++;
      self->outbox_.push_back(encode(env));
      if (self->outbox_.size() == 1) {
        self->write_next();
      }
    });
  }

  void close() override {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      self->close_requested_ = true;
      if (self->outbox_.empty()) {
        self->close_now();
      }
    });
  }

  [[nodiscard]] std::string describe() const override { return "session " + session_id_ + " (" + peer_ + ")"; }

 private:
  void read_next() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->finish();
        return;
      }
      const auto frame = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->hub_.on_message(self, frame);
      self->read_next();
    });
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->outbox_.clear();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) {
        self->write_next();
      } else if (self->close_requested_) {
        self->close_now();
      }
    });
  }

  void close_now() {
    if (closing_) {
      return;
    }
    closing_ = true;
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

  void finish();

  websocket::stream<beast::tcp_stream> ws_;
  DebugHub& hub_;
  Registry& registry_;
  std::string session_id_;
  std::string peer_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::int64_t next_seq_ = 0;
  bool close_requested_ = false;
  bool closing_ = false;
  bool finished_ = false;
};

// Live WebSocket sessions, so stop() can close them.
class Registry {
 public:
  void add(const std::shared_ptr<WsSession>& s) {
    std::lock_guard lock(mu_);
    sessions_[s.get()] = s;
  }
  void remove(const WsSession* s) {
    std::lock_guard lock(mu_);
    sessions_.erase(s);
  }
  std::vector<std::shared_ptr<WsSession>> snapshot() {
    std::lock_guard lock(mu_);
    std::vector<std::shared_ptr<WsSession>> out;
    for (auto& [_, weak] : sessions_) {
      if (auto s = weak.lock()) {
        out.push_back(std::move(s));
      }
    }
    return out;
  }

 private:
  std::mutex mu_;
  std::map<const WsSession*, std::weak_ptr<WsSession>> sessions_;
};

void WsSession::run(http::request<http::string_body> request) {
  beast::error_code ec;
  const auto endpoint = beast::get_lowest_layer(ws_).socket().remote_endpoint(ec);
  peer_ = ec ? "unknown peer" : endpoint.address().to_string() + ":" + std::to_string(endpoint.port());
  beast::get_lowest_layer(ws_).expires_never();
  websocket::stream_base::timeout timeouts{};
  timeouts.handshake_timeout = std::chrono::seconds(5);
  timeouts.idle_timeout = websocket::stream_base::none();
  timeouts.keep_alive_pings = false;
  ws_.set_option(timeouts);
  ws_.read_message_max(kMaxMessageBytes);
  ws_.async_accept(request, [self = shared_from_this()](beast::error_code accept_ec) {
    if (accept_ec) {
      spdlog::debug("websocket handshake failed: {}", accept_ec.message());
      return;
    }
    self->registry_.add(self);
    self->hub_.on_open(self);
    self->read_next();
  });
}

void WsSession::finish() {
  if (finished_) {
    return;
  }
  finished_ = true;
  outbox_.clear();
  registry_.remove(this);
  hub_.on_close(shared_from_this());
}

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, DebugHub& hub, Registry& registry, std::optional<std::filesystem::path> ui_dir)
      : stream_(std::move(socket)), hub_(hub), registry_(registry), ui_dir_(std::move(ui_dir)) {}

  void run() { read_request(); }

 private:
  void read_request() {
    request_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, request_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      if (websocket::is_upgrade(self->request_)) {
        std::make_shared<WsSession>(self->stream_.release_socket(), self->hub_, self->registry_)
            ->run(std::move(self->request_));
        return;
      }
      self->respond();
    });
  }

  void respond() {
    auto response = std::make_shared<http::response<http::string_body>>(make_response());
    response->keep_alive(request_.keep_alive());
    response->prepare_payload();
    http::async_write(stream_, *response, [self = shared_from_this(), response](beast::error_code ec, std::size_t) {
      if (ec || !response->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read_request();
    });
  }

  http::response<http::string_body> make_response() {
    auto reply = [&](http::status status, std::string_view type, std::string body) {
      http::response<http::string_body> res{status, request_.version()};
      res.set(http::field::server, "agentstepper");
      res.set(http::field::content_type, std::string(type));
      res.body() = std::move(body);
      return res;
    };
    if (request_.method() != http::verb::get && request_.method() != http::verb::head) {
      return reply(http::status::method_not_allowed, "text/plain", "method not allowed\n");
    }
    std::string target(request_.target());
    target = target.substr(0, target.find('?'));
    if (target == "/healthz") {
      return reply(http::status::ok, "text/plain", "ok\n");
    }
    if (target.empty() || target.front() != '/' || target.find("..") != std::string::npos) {
      return reply(http::status::bad_request, "text/plain", "bad request\n");
    }
    if (target == "/") {
      target = "/index.html";
    }
    if (!ui_dir_) {
      if (target == "/index.html") {
        return reply(http::status::ok, "text/html; charset=utf-8", kPlaceholderIndex);
      }
      return reply(http::status::not_found, "text/plain", "not found\n");
    }
    const auto file = *ui_dir_ / target.substr(1);
    std::ifstream in(file, std::ios::binary);
    if (!in || std::filesystem::is_directory(file)) {
      return reply(http::status::not_found, "text/plain", "not found\n");
    }
    std::ostringstream body;
    body << in.rdbuf();
    return reply(http::status::ok, mime_type(file), body.str());
  }

  beast::tcp_stream stream_;
  DebugHub& hub_;
  Registry& registry_;
  std::optional<std::filesystem::path> ui_dir_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
};

}  // namespace

struct Server::Impl {
  explicit Impl(ServerConfig config) : hub(config), acceptor(ioc) {}

  void accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec != net::error::operation_aborted) {
          spdlog::warn("accept failed: {}", ec.message());
          accept();
        }
        return;
      }
      std::make_shared<HttpSession>(std::move(socket), hub, registry, hub.config().ui_dir)->run();
      accept();
    });
  }

  DebugHub hub;
  net::io_context ioc;
  std::optional<net::executor_work_guard<net::io_context::executor_type>> guard;
  tcp::acceptor acceptor;
  Registry registry;
  std::vector<std::thread> threads;
  int port = 0;
  bool running = false;
};

Server::Server(ServerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Server::~Server() { stop(); }

void Server::start() {
  auto& im = *impl_;
  im.hub.load_runs();
  const auto& config = im.hub.config();
  const tcp::endpoint endpoint{net::ip::make_address(config.bind_address),
                               static_cast<unsigned short>(config.port)};
  im.acceptor.open(endpoint.protocol());
  im.acceptor.set_option(net::socket_base::reuse_address(true));
  im.acceptor.bind(endpoint);
  im.acceptor.listen(net::socket_base::max_listen_connections);
  im.port = im.acceptor.local_endpoint().port();
  im.guard.emplace(im.ioc.get_executor());
  im.accept();
  for (int i = 0; i < 4; ++i) {
    im.threads.emplace_back([&im] { im.ioc.run(); });
  }
  im.running = true;
  spdlog::info("listening on http://{}:{} (WebSocket endpoint /ws)", config.bind_address, im.port);
}

void Server::stop() {
  auto& im = *impl_;
  if (!im.running) {
    im.hub.shutdown();
    return;
  }
  im.running = false;
  im.hub.shutdown();
  net::post(im.ioc, [&im] {
    beast::error_code ignored;
    im.acceptor.close(ignored);
  });
  for (const auto& session : im.registry.snapshot()) {
    session->close();
  }
  im.guard.reset();
  // Give closing handshakes a moment, then cut whatever is left.
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(3);
  while (!im.registry.snapshot().empty() && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  im.ioc.stop();
  for (auto& t : im.threads) {
    t.join();
  }
  im.threads.clear();
  spdlog::info("server stopped");
}

int Server::port() const { return impl_->port; }

DebugHub& Server::hub() { return impl_->hub; }

}  // namespace agentstepper
