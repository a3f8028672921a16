#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkf/corpus.hpp"

namespace qkf::providers {

using Vec = Eigen::VectorXd;

enum class ProviderKind { kToy, kHttp };

struct ProviderConfig {
  ProviderKind kind = ProviderKind::kToy;
  int dim = 64;
  std::uint64_t seed = 7;
  // http-only
  std::string endpoint;
  int timeout_ms = 5000;
  int max_inflight = 4;
  int max_batch = 16;

  void validate() const;
};

/// Thrown when the remote endpoint stays unreachable after all retries.
class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& what, int attempts)
      : std::runtime_error(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_ = 0;
};

/// Hashed bag-of-words embedding: each token lands in a sign-hashed bucket,
/// the result is unit-normalized. Token-less (or fully cancelling) input
/// maps to the first basis vector.
Vec toy_hash_embed(const std::string& text, int dim, std::uint64_t seed);

/// Model backend: text/image embedders, a chunk reranker, and a generator.
/// Implementations must be safe to share across threads.
class Provider {
 public:
  virtual ~Provider() = default;

  virtual int dim() const = 0;
  virtual std::string describe() const = 0;

  /// Unit-norm embedding, deterministic per (provider, text).
  virtual Vec embed_text(const std::string& text) const = 0;

  /// A supplied vector of matching dimension is normalized and passed
  /// through; an opaque reference is resolved by the backend.
  virtual Vec embed_image(const corpus::ImageInput& image) const = 0;

  /// Relevance of chunk_text to question, in [0, 1].
  virtual double rerank(const std::string& question,
                        const std::string& chunk_text) const = 0;

  virtual std::string generate(const std::string& prompt,
                               const std::optional<std::string>& image_ref) const = 0;

  // Batch variants; the default loops, remote backends batch on the wire.
  virtual std::vector<Vec> embed_text_batch(const std::vector<std::string>& texts) const;
  virtual std::vector<double> rerank_batch(
      const std::string& question, const std::vector<std::string>& chunk_texts) const;
};

std::shared_ptr<Provider> make_provider(const ProviderConfig& config);

/// Deterministic hashed-feature backend used for tests and desk-scale runs.
class ToyProvider final : public Provider {
 public:
  ToyProvider(int dim, std::uint64_t seed);

  int dim() const override { return dim_; }
  std::string describe() const override;
  Vec embed_text(const std::string& text) const override;
  Vec embed_image(const corpus::ImageInput& image) const override;
  double rerank(const std::string& question, const std::string& chunk_text) const override;
  std::string generate(const std::string& prompt,
                       const std::optional<std::string>& image_ref) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Extractive scan used by ToyProvider::generate, exposed for testing:
/// picks the fixed-width token window of the context with the largest
/// distinct-token overlap with the question; earliest window wins ties.
std::string extractive_answer(const std::string& prompt, int max_window_tokens);

}  // namespace qkf::providers
