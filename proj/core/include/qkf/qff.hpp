#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qkf/common.hpp"
#include "qkf/corpus.hpp"
#include "qkf/retrieval.hpp"

namespace qkf::qff {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct QffDims {
  int num_queries = 8;  // learnable query rows
  int dim = 32;         // feature dimension
  int vocab = 4096;     // hashed token vocabulary
  int image_dim = 64;   // provider embedding dimension

  void validate() const;
};

/// Every learnable tensor of the filter. One residual cross-attention block
/// is shared between question and section encoding; the fusion block that
/// injects question semantics into the queries has its own weights.
struct QffParams {
  QffDims dims;
  std::uint64_t seed = 7;  // keys the token hashing

  Mat token_embedding;   // vocab × dim
  Mat image_projection;  // image_dim × dim
  Mat queries;           // num_queries × dim

  Mat enc_query_w, enc_key_w, enc_value_w;     // dim × dim, shared encoder block
  Mat fuse_query_w, fuse_key_w, fuse_value_w;  // dim × dim, question fusion block
};

/// Uniform init in [-1/sqrt(dim), 1/sqrt(dim)], bit-reproducible per seed.
QffParams init_params(const QffDims& dims, std::uint64_t seed);

/// Hashed vocabulary id of a token under the params' seed.
int token_id(const QffParams& params, std::string_view token);

struct AttendCache {
  Mat queries_in, context;
  Mat q_proj, k_proj, v_proj;
  Mat weights;  // row-softmax attention weights
};

/// Residual cross-attention: queries_in + Softmax(QK^T / sqrt(d)) V with
/// Q = queries_in Wq, K = context Wk, V = context Wv.
Mat attend(const Mat& queries_in, const Mat& context, const Mat& wq, const Mat& wk,
           const Mat& wv, AttendCache* cache = nullptr);

/// Fused question representation: the learnable queries attending over
/// [projected query image; embedded question tokens].
Mat encode_question(const QffParams& params, const std::string& question,
                    const std::optional<Vec>& image);

/// Question-focused queries: the learnable queries attending over the
/// encoded question tokens through the fusion block.
Mat fuse_queries(const QffParams& params, const Mat& q_tokens);

/// Section features: the fused queries attending over
/// [projected article image; embedded title tokens; embedded passage tokens].
Mat encode_section(const QffParams& params, const Mat& f_queries,
                   const corpus::Section& section, const std::optional<Vec>& image);

/// Late-interaction score: mean over rows of `h` of the max cosine
/// similarity against any row of `q_tokens`. Rows with zero norm throw.
double maxsim(const Mat& h, const Mat& q_tokens);

struct ArticleScore {
  double article_score = 0.0;
  std::vector<double> section_scores;
  int best_section = -1;  // lowest index wins ties
};

ArticleScore score_article(const QffParams& params, const Mat& q_tokens, const Mat& f_queries,
                           const corpus::Article& article, const std::optional<Vec>& image);

/// alpha * retrieval + (1 - alpha) * filter score, alpha in [0, 1].
double fuse_scores(double retrieval_score, double qff_score, double alpha);

using ArticleImageFn = std::function<std::optional<Vec>(const corpus::Article&)>;

/// Scores every candidate with the filter, fuses with the retrieval score,
/// sorts by fused score (ties keep retrieval rank) and returns the first
/// min(top_u, len) entries with all score fields populated.
std::vector<retrieval::ScoredArticle> rerank_articles(
    const QffParams& params, const std::string& question, const Vec& query_image,
    std::vector<retrieval::ScoredArticle> candidates, const corpus::Corpus& kb,
    const ArticleImageFn& image_of, int top_u, double alpha);

/// Temperature-scaled InfoNCE over one positive and M negative scores,
/// computed in log-sum-exp form. Zero negatives give exactly zero.
double contrastive_loss(double positive_score, std::span<const double> negative_scores,
                        double tau);

struct TrainExample {
  std::string question;
  Vec query_image;  // image_dim
  corpus::Section positive;
  std::optional<Vec> positive_image;
  std::vector<corpus::Section> negatives;
  std::vector<std::optional<Vec>> negative_images;  // parallel to negatives
};

struct QffGradients {
  Mat token_embedding, image_projection, queries;
  Mat enc_query_w, enc_key_w, enc_value_w;
  Mat fuse_query_w, fuse_key_w, fuse_value_w;
};

struct LossInfo {
  double loss = 0.0;
  double positive_score = 0.0;
  std::vector<double> negative_scores;
  /// Smallest top1-top2 cosine gap over all maxsim rows in the example;
  /// near-zero means the loss sits next to an argmax tie.
  double min_argmax_gap = 0.0;
  QffGradients grads;
};

/// Forward loss only (no gradients); shares the exact computation path.
double example_loss(const QffParams& params, const TrainExample& example, double tau);

/// Analytic gradients of the contrastive loss through the full
/// encode -> fuse -> score pipeline, for every parameter tensor.
LossInfo loss_gradients(const QffParams& params, const TrainExample& example, double tau);

/// Draws up to `max_hard` non-evidence sections of the positive article,
/// fills the rest uniformly without replacement from sections of the other
/// candidate articles, and resamples with replacement only once the pool is
/// exhausted. Never returns the positive section.
std::vector<corpus::Section> sample_negatives(
    const corpus::Corpus& kb, std::span<const retrieval::ScoredArticle> candidates,
    const corpus::Section& positive, int m, int max_hard, DetRng& rng);

}  // namespace qkf::qff
