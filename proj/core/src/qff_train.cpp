#include "qkf/qff_train.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace qkf::qff {

void TrainConfig::validate() const {
  if (lr < 0) throw std::invalid_argument("lr must be >= 0");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (tau <= 0) throw std::invalid_argument("tau must be > 0");
  if (m_negatives < 1) throw std::invalid_argument("m_negatives must be >= 1");
  if (max_hard < 0) throw std::invalid_argument("max_hard must be >= 0");
}

namespace {

void accumulate(QffGradients& into, const QffGradients& g) {
  into.token_embedding += g.token_embedding;
  into.image_projection += g.image_projection;
  into.queries += g.queries;
  into.enc_query_w += g.enc_query_w;
  into.enc_key_w += g.enc_key_w;
  into.enc_value_w += g.enc_value_w;
  into.fuse_query_w += g.fuse_query_w;
  into.fuse_key_w += g.fuse_key_w;
  into.fuse_value_w += g.fuse_value_w;
}

void apply_step(QffParams& p, const QffGradients& g, double scale) {
  p.token_embedding += scale * g.token_embedding;
  p.image_projection += scale * g.image_projection;
  p.queries += scale * g.queries;
  p.enc_query_w += scale * g.enc_query_w;
  p.enc_key_w += scale * g.enc_key_w;
  p.enc_value_w += scale * g.enc_value_w;
  p.fuse_query_w += scale * g.fuse_query_w;
  p.fuse_key_w += scale * g.fuse_key_w;
  p.fuse_value_w += scale * g.fuse_value_w;
}

QffGradients zeros_like(const QffParams& p) {
  QffGradients g;
  g.token_embedding = Mat::Zero(p.dims.vocab, p.dims.dim);
  g.image_projection = Mat::Zero(p.dims.image_dim, p.dims.dim);
  g.queries = Mat::Zero(p.dims.num_queries, p.dims.dim);
  g.enc_query_w = Mat::Zero(p.dims.dim, p.dims.dim);
  g.enc_key_w = Mat::Zero(p.dims.dim, p.dims.dim);
  g.enc_value_w = Mat::Zero(p.dims.dim, p.dims.dim);
  g.fuse_query_w = Mat::Zero(p.dims.dim, p.dims.dim);
  g.fuse_key_w = Mat::Zero(p.dims.dim, p.dims.dim);
  g.fuse_value_w = Mat::Zero(p.dims.dim, p.dims.dim);
  return g;
}

}  // namespace

TrainResult train(QffParams params, const std::vector<TrainExample>& dataset,
                  const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");

  DetRng rng(config.seed ^ 0xa5a5a5a5a5a5a5a5ull);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::size_t cursor = 0;

  TrainResult result;
  result.step_losses.reserve(static_cast<std::size_t>(config.steps));

  for (int step = 0; step < config.steps; ++step) {
    QffGradients batch_grads = zeros_like(params);
    double batch_loss = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const TrainExample& ex = dataset[order[cursor++]];
      LossInfo info = loss_gradients(params, ex, config.tau);
      batch_loss += info.loss;
      accumulate(batch_grads, info.grads);
    }
    batch_loss /= config.batch;
    if (!std::isfinite(batch_loss)) {
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    }
    apply_step(params, batch_grads, -config.lr / config.batch);
    result.step_losses.push_back(batch_loss);
  }
  result.params = std::move(params);
  return result;
}

double mean_loss(const QffParams& params, const std::vector<TrainExample>& dataset, double tau) {
  if (dataset.empty()) throw std::invalid_argument("mean_loss: dataset is empty");
  double total = 0.0;
  for (const auto& ex : dataset) total += example_loss(params, ex, tau);
  return total / static_cast<double>(dataset.size());
}

std::vector<TrainExample> build_train_examples(
    const corpus::Corpus& kb, const retrieval::RetrievalIndex& index,
    const providers::Provider& provider, std::span<const corpus::Query> queries, int k, int m,
    int max_hard, std::uint64_t seed, std::vector<std::string>* skipped) {
  DetRng rng(seed ^ 0x5bd1e995);
  std::unordered_map<std::string, std::optional<Vec>> image_cache;
  auto article_image = [&](const std::string& article_id) -> std::optional<Vec> {
    auto it = image_cache.find(article_id);
    if (it != image_cache.end()) return it->second;
    const corpus::Article& a = kb.at(article_id);
    std::optional<Vec> img;
    if (!a.image.empty()) img = provider.embed_image(a.image);
    image_cache.emplace(article_id, img);
    return img;
  };
  auto skip = [&](const corpus::Query& q, const std::string& reason) {
    if (skipped) skipped->push_back(q.qid + ": " + reason);
  };

  std::vector<TrainExample> examples;
  for (const corpus::Query& q : queries) {
    if (!q.evidence_article_id || !q.evidence_section_index) {
      skip(q, "no evidence annotation");
      continue;
    }
    const corpus::Article* evidence = kb.find(*q.evidence_article_id);
    if (!evidence) {
      skip(q, "evidence article not in corpus");
      continue;
    }
    const int sec = *q.evidence_section_index;
    if (sec < 0 || sec >= static_cast<int>(evidence->sections.size())) {
      skip(q, "evidence section out of range");
      continue;
    }
    if (q.image.empty()) {
      skip(q, "no query image");
      continue;
    }

    TrainExample ex;
    ex.question = q.question;
    ex.query_image = provider.embed_image(q.image);
    ex.positive = evidence->sections[static_cast<std::size_t>(sec)];
    ex.positive_image = article_image(evidence->id);

    const auto candidates = retrieval::retrieve_topk(index, ex.query_image, k);
    try {
      ex.negatives = sample_negatives(kb, candidates, ex.positive, m, max_hard, rng);
    } catch (const std::invalid_argument& e) {
      skip(q, e.what());
      continue;
    }
    ex.negative_images.reserve(ex.negatives.size());
    for (const auto& neg : ex.negatives) {
      ex.negative_images.push_back(article_image(neg.article_id));
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

}  // namespace qkf::qff
