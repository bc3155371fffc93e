#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace neurosem {

/// Local stand-in for an image generation endpoint. Accepts POST
/// {"prompt", "seed"?} on any path and answers with a small PNG whose colors
/// are a hash of the request. Prompts containing `fail_marker` get HTTP 503.
class StubEndpoint {
 public:
  struct Request {
    std::string path;
    std::string prompt;
    bool has_seed = false;
    std::uint64_t seed = 0;
  };

  explicit StubEndpoint(std::string fail_marker = "FAIL");
  ~StubEndpoint();
  StubEndpoint(const StubEndpoint&) = delete;
  StubEndpoint& operator=(const StubEndpoint&) = delete;

  /// Binds 127.0.0.1:`port` (0 picks a free port) and serves on a thread.
  void start(int port = 0);
  /// Serves on the calling thread until stop().
  void listen(int port);
  void stop();

  int port() const { return port_; }
  std::string url() const;
  std::vector<Request> requests() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string fail_marker_;
  int port_ = 0;
  mutable std::mutex mutex_;
  std::vector<Request> requests_;
};

/// The PNG the stub returns for a request.
std::string stub_image(const std::string& prompt, std::uint64_t seed);

}  // namespace neurosem
