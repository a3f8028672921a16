#include "qkf/providers.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "qkf/common.hpp"

namespace qkf::providers {

void ProviderConfig::validate() const {
  if (dim < 1) throw std::invalid_argument("provider dim must be >= 1");
  if (kind == ProviderKind::kHttp) {
    if (endpoint.empty()) throw std::invalid_argument("http provider needs an endpoint");
    if (timeout_ms <= 0) throw std::invalid_argument("http timeout must be > 0");
    if (max_inflight < 1) throw std::invalid_argument("max in-flight must be >= 1");
    if (max_batch < 1) throw std::invalid_argument("max batch must be >= 1");
  }
}

Vec toy_hash_embed(const std::string& text, int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("toy_hash_embed: dim must be >= 1");
  Vec v = Vec::Zero(dim);
  for (const std::string& tok : split_whitespace(text)) {
    const std::uint64_t h = hash64(tok, seed);
    const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim));
    const double sign = ((h >> 32) & 1u) ? 1.0 : -1.0;
    v[bucket] += sign;
  }
  const double norm = v.norm();
  if (norm < kZeroNormEps) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

std::vector<Vec> Provider::embed_text_batch(const std::vector<std::string>& texts) const {
  std::vector<Vec> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_text(t));
  return out;
}

std::vector<double> Provider::rerank_batch(const std::string& question,
                                           const std::vector<std::string>& chunk_texts) const {
  std::vector<double> out;
  out.reserve(chunk_texts.size());
  for (const auto& c : chunk_texts) out.push_back(rerank(question, c));
  return out;
}

ToyProvider::ToyProvider(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw std::invalid_argument("ToyProvider: dim must be >= 1");
}

std::string ToyProvider::describe() const {
  return "toy:d=" + std::to_string(dim_) + ":seed=" + std::to_string(seed_);
}

Vec ToyProvider::embed_text(const std::string& text) const {
  return toy_hash_embed(text, dim_, seed_);
}

Vec ToyProvider::embed_image(const corpus::ImageInput& image) const {
  if (image.vec) {
    const auto& raw = *image.vec;
    if (static_cast<int>(raw.size()) != dim_) {
      throw std::invalid_argument("embed_image: expected dim " + std::to_string(dim_) +
                                  ", got " + std::to_string(raw.size()));
    }
    Vec v = Eigen::Map<const Vec>(raw.data(), static_cast<Eigen::Index>(raw.size()));
    const double norm = v.norm();
    if (norm < kZeroNormEps) throw std::invalid_argument("embed_image: zero vector");
    return v / norm;
  }
  if (image.ref) return toy_hash_embed(*image.ref, dim_, seed_);
  throw std::invalid_argument("embed_image: no image supplied");
}

double ToyProvider::rerank(const std::string& question, const std::string& chunk_text) const {
  const auto q_tokens = split_whitespace(question);
  if (q_tokens.empty()) return 0.0;
  std::unordered_set<std::string> q_set(q_tokens.begin(), q_tokens.end());
  std::unordered_set<std::string> c_set;
  for (const auto& t : split_whitespace(chunk_text)) c_set.insert(t);
  std::size_t shared = 0;
  for (const auto& t : q_set) {
    if (c_set.count(t)) ++shared;
  }
  const double score = static_cast<double>(shared) / static_cast<double>(q_set.size());
  return std::clamp(score, 0.0, 1.0);
}

std::string ToyProvider::generate(const std::string& prompt,
                                  const std::optional<std::string>& /*image_ref*/) const {
  return extractive_answer(prompt, 8);
}

std::string extractive_answer(const std::string& prompt, int max_window_tokens) {
  static const std::string kContextMarker = "- Context:";
  static const std::string kQuestionMarker = "- Question:";

  const std::size_t q_pos = prompt.rfind(kQuestionMarker);
  if (q_pos == std::string::npos) return "";
  const std::size_t c_pos = prompt.rfind(kContextMarker, q_pos);
  if (c_pos == std::string::npos) return "";

  const std::size_t ctx_begin = c_pos + kContextMarker.size();
  const std::string context = prompt.substr(ctx_begin, q_pos - ctx_begin);

  std::size_t q_begin = q_pos + kQuestionMarker.size();
  std::size_t q_end = prompt.find('\n', q_begin);
  if (q_end == std::string::npos) q_end = prompt.size();
  const std::string question = prompt.substr(q_begin, q_end - q_begin);

  const std::vector<std::string> ctx_tokens = split_whitespace(context);
  if (ctx_tokens.empty()) return "";
  const auto q_tokens = split_whitespace(question);
  std::unordered_set<std::string> q_set(q_tokens.begin(), q_tokens.end());

  const std::size_t window =
      std::min<std::size_t>(static_cast<std::size_t>(max_window_tokens), ctx_tokens.size());
  std::size_t best_start = 0;
  std::size_t best_score = 0;
  for (std::size_t start = 0; start + window <= ctx_tokens.size(); ++start) {
    std::unordered_set<std::string> seen;
    std::size_t score = 0;
    for (std::size_t i = start; i < start + window; ++i) {
      if (q_set.count(ctx_tokens[i]) && seen.insert(ctx_tokens[i]).second) ++score;
    }
    if (score > best_score) {  // strict: earliest window wins ties
      best_score = score;
      best_start = start;
    }
  }
  return join_tokens(ctx_tokens, best_start, best_start + window);
}

}  // namespace qkf::providers
