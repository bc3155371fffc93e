#include "neurosem/retrieval.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace neurosem {

namespace {

constexpr std::string_view kPngSignature("\x89PNG\r\n\x1a\n", 8);

struct Url {
  std::string base;  // scheme://host:port
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0) {
    throw TransportError("unsupported endpoint URL '" + url + "' (expected http://host[:port]/path)");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

}  // namespace

std::string resolve_endpoint(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("NEUROSEM_ENDPOINT"); env != nullptr && *env != '\0') return env;
  throw ConfigError("no endpoint given: pass --endpoint or set NEUROSEM_ENDPOINT");
}

std::string dispatch_prompt(const PromptBundle& bundle, const std::string& endpoint_url, double timeout_seconds,
                            std::optional<std::uint64_t> seed) {
  const auto url = split_url(endpoint_url);
  httplib::Client client(url.base);
  const auto sec = static_cast<time_t>(timeout_seconds);
  const auto usec = static_cast<time_t>(std::round((timeout_seconds - static_cast<double>(sec)) * 1e6));
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);

  nlohmann::ordered_json body;
  body["prompt"] = bundle.prompt;
  if (seed) body["seed"] = *seed;
  auto res = client.Post(url.path, body.dump(), "application/json");
  if (!res) {
    throw TransportError("POST " + endpoint_url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("POST " + endpoint_url + " returned HTTP " + std::to_string(res->status) + ": " +
                         excerpt(res->body));
  }
  if (res->body.compare(0, kPngSignature.size(), kPngSignature) != 0) {
    throw TransportError("POST " + endpoint_url + " returned a non-PNG payload: " + excerpt(res->body));
  }
  return res->body;
}

std::vector<DispatchOutcome> dispatch_all(const std::vector<PromptBundle>& bundles, const DispatchOptions& options) {
  std::vector<DispatchOutcome> outcomes(bundles.size());
  if (bundles.empty()) return outcomes;
  std::filesystem::create_directories(options.out_dir);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < bundles.size(); i = next++) {
      auto& out = outcomes[i];
      out.epoch_index = bundles[i].epoch_index;
      try {
        const auto png = dispatch_prompt(bundles[i], options.endpoint, options.timeout_seconds, options.seed);
        out.image_path = options.out_dir / ("epoch_" + std::to_string(bundles[i].epoch_index) + ".png");
        std::ofstream f(out.image_path, std::ios::binary);
        if (!f.write(png.data(), static_cast<std::streamsize>(png.size()))) {
          throw FileError("cannot write " + out.image_path.string());
        }
        out.ok = true;
      } catch (const std::exception& e) {
        out.ok = false;
        out.image_path.clear();
        out.error = e.what();
      }
    }
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, options.concurrency)), bundles.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return outcomes;
}

}  // namespace neurosem
