#include "neurosem/stub_endpoint.hpp"

#include "neurosem/app.hpp"
#include "neurosem/metrics.hpp"

// After Eigen: resolv.h defines a _res macro.
#include "httplib.h"

#include <thread>

namespace neurosem {

struct StubEndpoint::Impl {
  httplib::Server server;
  std::thread thread;
};

StubEndpoint::StubEndpoint(std::string fail_marker) : impl_(std::make_unique<Impl>()), fail_marker_(std::move(fail_marker)) {
  impl_->server.Post(R"(/.*)", [this](const httplib::Request& req, httplib::Response& res) {
    Request r;
    r.path = req.path;
    try {
      const auto body = nlohmann::json::parse(req.body);
      r.prompt = body.at("prompt").get<std::string>();
      if (body.contains("seed")) {
        r.has_seed = true;
        r.seed = body.at("seed").get<std::uint64_t>();
      }
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(std::string("bad request: ") + e.what(), "text/plain");
      return;
    }
    {
      std::lock_guard<std::mutex> lock(mutex_);
      requests_.push_back(r);
    }
    if (!fail_marker_.empty() && r.prompt.find(fail_marker_) != std::string::npos) {
      res.status = 503;
      res.set_content("stub refused", "text/plain");
      return;
    }
    res.set_content(stub_image(r.prompt, r.seed), "image/png");
  });
}

StubEndpoint::~StubEndpoint() { stop(); }

void StubEndpoint::start(int port) {
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port("127.0.0.1");
  } else if (impl_->server.bind_to_port("127.0.0.1", port)) {
    port_ = port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) throw TransportError("stub endpoint: cannot bind port " + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void StubEndpoint::listen(int port) {
  port_ = port;
  if (!impl_->server.listen("127.0.0.1", port)) throw TransportError("stub endpoint: cannot listen on port " + std::to_string(port));
}

void StubEndpoint::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string StubEndpoint::url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/generate"; }

std::vector<StubEndpoint::Request> StubEndpoint::requests() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return requests_;
}

std::string stub_image(const std::string& prompt, std::uint64_t seed) {
  const std::string h = fnv1a_hex(prompt + "#" + std::to_string(seed));
  Image img;
  img.width = img.height = 16;
  img.rgb.resize(16 * 16 * 3);
  const auto byte = [&](int i) { return static_cast<std::uint8_t>(std::stoi(h.substr(static_cast<std::size_t>(2 * i), 2), nullptr, 16)); };
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const std::size_t p = (static_cast<std::size_t>(y) * 16 + static_cast<std::size_t>(x)) * 3;
      img.rgb[p] = static_cast<std::uint8_t>(byte(0) + 8 * x);
      img.rgb[p + 1] = static_cast<std::uint8_t>(byte(1) + 8 * y);
      img.rgb[p + 2] = byte(2 + (x + y) % 6);
    }
  }
  return encode_png(img);
}

}  // namespace neurosem
