#include "qkf/providers.hpp"

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <thread>

// httplib drags in <resolv.h>, whose _res macro mangles Eigen if it is seen
// first; keep it after every Eigen-bearing header.
#include "httplib.h"
#include "json.hpp"
#include "qkf/common.hpp"

namespace qkf::providers {

using nlohmann::json;

namespace {

constexpr int kMaxAttempts = 3;
constexpr int kBackoffStartMs = 100;

class Semaphore {
 public:
  explicit Semaphore(int count) : count_(count) {}

  void acquire() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return count_ > 0; });
    --count_;
  }
  void release() {
    {
      std::lock_guard lk(mu_);
      ++count_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int count_;
};

struct SemaphoreGuard {
  explicit SemaphoreGuard(Semaphore& s) : sem(s) { sem.acquire(); }
  ~SemaphoreGuard() { sem.release(); }
  Semaphore& sem;
};

class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(const ProviderConfig& cfg) : cfg_(cfg), inflight_(cfg.max_inflight) {
    const std::size_t scheme_end = cfg.endpoint.find("://");
    if (scheme_end == std::string::npos) {
      throw std::invalid_argument("endpoint must look like http://host:port[/path]");
    }
    const std::size_t path_start = cfg.endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base_ = cfg.endpoint;
      path_ = "/";
    } else {
      base_ = cfg.endpoint.substr(0, path_start);
      path_ = cfg.endpoint.substr(path_start);
    }
  }

  int dim() const override { return cfg_.dim; }

  std::string describe() const override { return "http:" + cfg_.endpoint; }

  Vec embed_text(const std::string& text) const override {
    return embed_text_batch({text}).at(0);
  }

  std::vector<Vec> embed_text_batch(const std::vector<std::string>& texts) const override {
    std::vector<Vec> out;
    out.reserve(texts.size());
    for_each_batch(texts.size(), [&](std::size_t lo, std::size_t hi) {
      json inputs = json::array();
      for (std::size_t i = lo; i < hi; ++i) inputs.push_back(texts[i]);
      const json outputs = call("embed_text", inputs, hi - lo);
      for (const auto& o : outputs) out.push_back(parse_embedding(o));
    });
    return out;
  }

  Vec embed_image(const corpus::ImageInput& image) const override {
    json input;
    if (image.vec) {
      input["vec"] = *image.vec;
    } else if (image.ref) {
      input["ref"] = *image.ref;
    } else {
      throw std::invalid_argument("embed_image: no image supplied");
    }
    const json outputs = call("embed_image", json::array({input}), 1);
    return parse_embedding(outputs.at(0));
  }

  double rerank(const std::string& question, const std::string& chunk_text) const override {
    return rerank_batch(question, {chunk_text}).at(0);
  }

  std::vector<double> rerank_batch(const std::string& question,
                                   const std::vector<std::string>& chunk_texts) const override {
    std::vector<double> out;
    out.reserve(chunk_texts.size());
    for_each_batch(chunk_texts.size(), [&](std::size_t lo, std::size_t hi) {
      json inputs = json::array();
      for (std::size_t i = lo; i < hi; ++i) {
        inputs.push_back({{"question", question}, {"text", chunk_texts[i]}});
      }
      const json outputs = call("rerank", inputs, hi - lo);
      for (const auto& o : outputs) {
        if (!o.is_number()) throw std::runtime_error("rerank output is not a number");
        out.push_back(o.get<double>());
      }
    });
    return out;
  }

  std::string generate(const std::string& prompt,
                       const std::optional<std::string>& image_ref) const override {
    json input{{"prompt", prompt}};
    if (image_ref) input["image"] = *image_ref;
    const json outputs = call("generate", json::array({input}), 1);
    if (!outputs.at(0).is_string()) throw std::runtime_error("generate output is not a string");
    return outputs.at(0).get<std::string>();
  }

 private:
  template <typename Fn>
  void for_each_batch(std::size_t n, Fn&& fn) const {
    const auto step = static_cast<std::size_t>(cfg_.max_batch);
    for (std::size_t lo = 0; lo < n; lo += step) {
      fn(lo, std::min(n, lo + step));
    }
  }

  Vec parse_embedding(const json& o) const {
    if (!o.is_array()) throw std::runtime_error("embedding output is not an array");
    if (static_cast<int>(o.size()) != cfg_.dim) {
      throw std::runtime_error("embedding output has dim " + std::to_string(o.size()) +
                               ", expected " + std::to_string(cfg_.dim));
    }
    Vec v(cfg_.dim);
    for (int i = 0; i < cfg_.dim; ++i) v[i] = o.at(i).get<double>();
    const double norm = v.norm();
    if (norm < kZeroNormEps) throw std::runtime_error("embedding output has zero norm");
    return v / norm;
  }

  /// One wire call with retries; the in-flight cap is held for the duration
  /// of each HTTP request only, not across backoff sleeps.
  json call(const std::string& task, const json& inputs, std::size_t expected) const {
    const json request{{"task", task}, {"inputs", inputs}};
    const std::string body = request.dump();
    std::string last_error;

    for (int attempt = 1; attempt <= kMaxAttempts; ++attempt) {
      if (attempt > 1) {
        const int backoff = kBackoffStartMs << (attempt - 2);
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      }
      httplib::Result res = [&] {
        SemaphoreGuard guard(inflight_);
        httplib::Client cli(base_);
        cli.set_connection_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
        cli.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
        return cli.Post(path_, body, "application/json");
      }();
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "status " + std::to_string(res->status);
        continue;
      }
      json reply;
      try {
        reply = json::parse(res->body);
      } catch (const json::parse_error& e) {
        last_error = std::string("bad reply JSON: ") + e.what();
        continue;
      }
      if (!reply.contains("outputs") || !reply["outputs"].is_array() ||
          reply["outputs"].size() != expected) {
        throw std::runtime_error("provider reply lacks a matching outputs array (task " +
                                 task + ")");
      }
      return reply["outputs"];
    }
    throw TransportError("task " + task + " failed after " + std::to_string(kMaxAttempts) +
                             " attempts: " + last_error,
                         kMaxAttempts);
  }

  ProviderConfig cfg_;
  std::string base_;
  std::string path_;
  mutable Semaphore inflight_;
};

}  // namespace

std::shared_ptr<Provider> make_provider(const ProviderConfig& config) {
  config.validate();
  switch (config.kind) {
    case ProviderKind::kToy:
      return std::make_shared<ToyProvider>(config.dim, config.seed);
    case ProviderKind::kHttp:
      return std::make_shared<HttpProvider>(config);
  }
  throw std::invalid_argument("unknown provider kind");
}

}  // namespace qkf::providers
