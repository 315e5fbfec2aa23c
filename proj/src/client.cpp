#include "agentstepper/client.hpp"

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

#include "agentstepper/errors.hpp"

namespace agentstepper {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct WireClient::Impl {
  net::io_context ioc;
  websocket::stream<beast::tcp_stream> ws{ioc};
  beast::flat_buffer buffer;
  std::thread io_thread;
  std::string address;

  // io thread only
  std::deque<std::string> outbox;
  bool closing = false;
  std::int64_t next_seq = 0;
  std::string session;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> inbox;
  bool closed = false;
  std::string close_reason;

  void read_next() {
    ws.async_read(buffer, [this](beast::error_code ec, std::size_t) {
      if (ec) {
        std::lock_guard lock(mu);
        closed = true;
        close_reason = ec == websocket::error::closed ? "connection closed by server" : ec.message();
        cv.notify_all();
        return;
      }
      auto frame = beast::buffers_to_string(buffer.data());
      buffer.consume(buffer.size());
      {
        std::lock_guard lock(mu);
        inbox.push_back(std::move(frame));
      }
      cv.notify_all();
      read_next();
    });
  }

  void enqueue(std::string frame) {
    outbox.push_back(std::move(frame));
    if (outbox.size() == 1) {
      write_next();
    }
  }

  void write_next() {
    ws.async_write(net::buffer(outbox.front()), [this](beast::error_code ec, std::size_t) {
      if (ec) {
        outbox.clear();
        return;
      }
      outbox.pop_front();
      if (!outbox.empty()) {
        write_next();
      } else if (closing) {
        close_now();
      }
    });
  }

  void close_now() {
    ws.async_close(websocket::close_code::normal, [](beast::error_code) {});
  }
};

WireClient::WireClient(const std::string& host, int port, const std::string& target)
    : impl_(std::make_unique<Impl>()) {
  auto& im = *impl_;
  im.address = host + ":" + std::to_string(port);
  try {
    tcp::resolver resolver(im.ioc);
    auto results = resolver.resolve(host, std::to_string(port));
    beast::get_lowest_layer(im.ws).expires_after(std::chrono::seconds(10));
    beast::get_lowest_layer(im.ws).connect(results);
    beast::get_lowest_layer(im.ws).expires_never();
    im.ws.read_message_max(256U * 1024U * 1024U);
    im.ws.handshake(host + ":" + std::to_string(port), target);
    im.ws.text(true);
  } catch (const std::exception& ex) {
    throw ConnectionError("cannot connect to debug server at " + im.address + ": " + ex.what());
  }
  im.read_next();
  im.io_thread = std::thread([&im] { im.ioc.run(); });
}

WireClient::~WireClient() {
  close();
  wait_closed(Millis(2000));
  impl_->ioc.stop();
  if (impl_->io_thread.joinable()) {
    impl_->io_thread.join();
  }
}

void WireClient::send(Envelope envelope) {
  net::post(impl_->ioc, [im = impl_.get(), env = std::move(envelope)]() mutable {
    env.session = im->session;
    env.seq = im->next_seq++;
    im->enqueue(encode(env));
  });
}

void WireClient::send_raw(std::string frame) {
  net::post(impl_->ioc, [im = impl_.get(), frame = std::move(frame)]() mutable { im->enqueue(std::move(frame)); });
}

std::optional<Envelope> WireClient::receive(std::optional<Millis> timeout) {
  auto& im = *impl_;
  std::unique_lock lock(im.mu);
  auto ready = [&] { return !im.inbox.empty() || im.closed; };
  if (timeout) {
    if (!im.cv.wait_for(lock, *timeout, ready)) {
      return std::nullopt;
    }
  } else {
    im.cv.wait(lock, ready);
  }
  if (im.inbox.empty()) {
    throw ConnectionError(im.close_reason + " (" + im.address + ")");
  }
  auto frame = std::move(im.inbox.front());
  im.inbox.pop_front();
  lock.unlock();
  auto env = decode(frame);
  if (!env.session.empty()) {
    net::post(im.ioc, [imp = &im, session = env.session] { imp->session = session; });
  }
  return env;
}

bool WireClient::wait_closed(Millis timeout) {
  std::unique_lock lock(impl_->mu);
  return impl_->cv.wait_for(lock, timeout, [&] { return impl_->closed; });
}

bool WireClient::is_open() const {
  std::lock_guard lock(impl_->mu);
  return !impl_->closed;
}

void WireClient::close() {
  net::post(impl_->ioc, [im = impl_.get()] {
    if (im->closing) {
      return;
    }
    im->closing = true;
    if (im->outbox.empty()) {
      im->close_now();
    }
  });
}

// ---------------------------------------------------------------------------

AgentStepper::AgentStepper(std::string agent_name, const std::string& host, int port,
                           std::optional<std::filesystem::path> workspace_path)
    : AgentStepper(std::move(agent_name), host, port, std::move(workspace_path), Options{}) {}

AgentStepper::AgentStepper(std::string agent_name, const std::string& host, int port,
                           std::optional<std::filesystem::path> workspace_path, Options options)
    : wire_(std::make_unique<WireClient>(host, port)),
      reply_timeout_(options.reply_timeout),
      uncaught_at_start_(std::uncaught_exceptions()) {
  Value payload{{"agent_name", std::move(agent_name)}};
  if (workspace_path) {
    payload["workspace_path"] = std::filesystem::absolute(*workspace_path).string();
  }
  (void)protocol_.accept(msg::hello_agent);
  wire_->send(Envelope{kProtocolVersion, std::string(msg::hello_agent), {}, {}, 0, std::move(payload)});
  auto ack = expect(msg::hello_ack);
  run_id_ = ack.payload.value("run_id", ack.run_id);
  if (ack.payload.contains("workspace_error")) {
    workspace_error_ = ack.payload["workspace_error"].get<std::string>();
  }
}

AgentStepper::~AgentStepper() {
  if (done_) {
    return;
  }
  try {
    if (std::uncaught_exceptions() > uncaught_at_start_) {
      abort();
    } else {
      finish();
    }
  } catch (...) {
    // Destructors must not throw; the server sees the dropped connection.
  }
}

Value AgentStepper::begin_llm_query_breakpoint(Value prompt, bool holdable) {
  return breakpoint(msg::event_begin, EventKind::llm_query, std::move(prompt), holdable, std::nullopt);
}

Value AgentStepper::end_llm_query_breakpoint(Value response, bool holdable) {
  return breakpoint(msg::event_end, EventKind::llm_query, std::move(response), holdable, std::nullopt);
}

std::pair<std::string, Value> AgentStepper::begin_tool_invocation_breakpoint(std::string tool, Value args,
                                                                             bool holdable) {
  Value call{{"tool", tool}, {"args", std::move(args)}};
  auto body = breakpoint(msg::event_begin, EventKind::tool_invocation, std::move(call), holdable, tool);
  return {body["tool"].get<std::string>(), body["args"]};
}

Value AgentStepper::end_tool_invocation_breakpoint(Value results, bool holdable) {
  return breakpoint(msg::event_end, EventKind::tool_invocation, std::move(results), holdable, std::nullopt);
}

bool AgentStepper::commit_agent_changes(std::optional<std::string> summary,
                                        std::optional<std::string> description) {
  require_open();
  Value payload = Value::object();
  if (summary) {
    payload["summary"] = *summary;
  }
  if (description) {
    payload["description"] = *description;
  }
  (void)protocol_.accept(msg::commit_request);
  wire_->send(Envelope{kProtocolVersion, std::string(msg::commit_request), {}, run_id_, 0, std::move(payload)});
  return expect(msg::commit_ack).payload.value("committed", false);
}

void AgentStepper::post_debug_message(const std::string& message) {
  require_open();
  (void)protocol_.accept(msg::debug_message);
  wire_->send(Envelope{kProtocolVersion, std::string(msg::debug_message), {}, run_id_, 0, Value{{"text", message}}});
}

void AgentStepper::finish() {
  if (done_) {
    return;
  }
  if (auto verdict = protocol_.accept(msg::goodbye); !verdict) {
    throw UsageError("cannot finish the run: " + verdict.reason);
  }
  done_ = true;
  wire_->send(Envelope{kProtocolVersion, std::string(msg::goodbye), {}, run_id_, 0, Value::object()});
  // The server closes the connection once the run is persisted.
  while (true) {
    try {
      if (!wire_->receive(reply_timeout_.value_or(Millis(30000)))) {
        break;
      }
    } catch (const ConnectionError&) {
      break;
    }
  }
}

void AgentStepper::abort() {
  done_ = true;
  wire_->close();
}

Value AgentStepper::breakpoint(std::string_view type, EventKind wire_kind, Value body, bool holdable,
                               std::optional<std::string> tool_name) {
  require_open();
  if (auto verdict = protocol_.accept(type, wire_kind); !verdict) {
    throw UsageError(std::string(type) + " rejected: " + verdict.reason);
  }
  Value payload{{"event_kind", to_string(wire_kind)}, {"body", body}, {"holdable", holdable}};
  if (tool_name) {
    payload["tool_name"] = *tool_name;
  }
  wire_->send(Envelope{kProtocolVersion, std::string(type), {}, run_id_, 0, std::move(payload)});
  auto decision = resume_from_json(expect(msg::resume).payload);
  return decision.edited ? std::move(*decision.body) : std::move(body);
}

Envelope AgentStepper::expect(std::string_view type) {
  for (;;) {
    auto env = wire_->receive(reply_timeout_);
    if (!env) {
      throw ConnectionError("timed out waiting for " + std::string(type));
    }
    if (env->type == msg::fatal) {
      done_ = true;
      throw FatalError(env->payload.value("reason", "unknown"), env->payload.value("message", ""));
    }
    if (env->type == type) {
      return std::move(*env);
    }
  }
}

void AgentStepper::require_open() const {
  if (done_) {
    throw UsageError("the debugger session has ended");
  }
}

// ---------------------------------------------------------------------------

UiClient::UiClient(const std::string& host, int port) : wire_(host, port) {}

void UiClient::send(std::string_view type, Value payload, const std::string& run_id) {
  wire_.send(Envelope{kProtocolVersion, std::string(type), {}, run_id, 0, std::move(payload)});
}

void UiClient::drain() {
  for (;;) {
    std::optional<Envelope> env;
    try {
      env = wire_.receive(Millis(0));
    } catch (const ConnectionError&) {
      return;
    }
    if (!env) {
      return;
    }
    history_.push_back(std::move(*env));
    consumed_.push_back(false);
  }
}

std::optional<Envelope> UiClient::wait_for(const std::function<bool(const Envelope&)>& pred, Millis timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::size_t scanned = 0;
  for (;;) {
    for (; scanned < history_.size(); ++scanned) {
      if (!consumed_[scanned] && pred(history_[scanned])) {
        consumed_[scanned] = true;
        return history_[scanned];
      }
    }
    const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      return std::nullopt;
    }
    std::optional<Envelope> env;
    try {
      env = wire_.receive(left);
    } catch (const ConnectionError&) {
      return std::nullopt;
    }
    if (!env) {
      return std::nullopt;
    }
    history_.push_back(std::move(*env));
    consumed_.push_back(false);
  }
}

std::optional<Envelope> UiClient::wait_for_type(std::string_view type, Millis timeout) {
  return wait_for([type](const Envelope& e) { return e.type == type; }, timeout);
}

}  // namespace agentstepper
