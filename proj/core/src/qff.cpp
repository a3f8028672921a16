#include "qkf/qff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qkf::qff {

void QffDims::validate() const {
  if (num_queries < 1) throw std::invalid_argument("num_queries must be >= 1");
  if (dim < 1) throw std::invalid_argument("dim must be >= 1");
  if (vocab < 1) throw std::invalid_argument("vocab must be >= 1");
  if (image_dim < 1) throw std::invalid_argument("image_dim must be >= 1");
}

namespace {

void fill_uniform(Mat& m, double bound, DetRng& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = rng.uniform(-bound, bound);
    }
  }
}

/// Inputs that fed one attention context, kept for the backward pass.
struct ContextCache {
  Mat rows;
  std::vector<int> token_ids;  // vocab ids of the token rows, in row order
  bool has_image = false;
  Vec image;  // raw image vector (image_dim), when present
};

Mat build_context(const QffParams& p, const std::optional<Vec>& image,
                  std::initializer_list<std::string_view> texts, ContextCache* cache) {
  std::vector<int> ids;
  for (std::string_view text : texts) {
    for (const std::string& tok : split_whitespace(text)) {
      ids.push_back(token_id(p, tok));
    }
  }
  const bool has_image = image.has_value();
  if (has_image && image->size() != p.dims.image_dim) {
    throw std::invalid_argument("image vector has dim " + std::to_string(image->size()) +
                                ", expected " + std::to_string(p.dims.image_dim));
  }

  const Eigen::Index rows = static_cast<Eigen::Index>(ids.size()) + (has_image ? 1 : 0);
  Mat ctx(rows, p.dims.dim);
  Eigen::Index r = 0;
  if (has_image) ctx.row(r++) = image->transpose() * p.image_projection;
  for (int id : ids) ctx.row(r++) = p.token_embedding.row(id);

  if (cache) {
    cache->rows = ctx;
    cache->token_ids = std::move(ids);
    cache->has_image = has_image;
    if (has_image) cache->image = *image;
  }
  return ctx;
}

/// Scatters d(context rows) into the embedding table and image projection.
void context_backward(const ContextCache& ctx, const Mat& d_rows, QffGradients& g) {
  Eigen::Index r = 0;
  if (ctx.has_image) {
    g.image_projection.noalias() += ctx.image * d_rows.row(r);
    ++r;
  }
  for (int id : ctx.token_ids) {
    g.token_embedding.row(id) += d_rows.row(r++);
  }
}

struct AttendGrads {
  Mat d_queries_in, d_context, d_wq, d_wk, d_wv;
};

AttendGrads attend_backward(const AttendCache& c, const Mat& wq, const Mat& wk, const Mat& wv,
                            const Mat& d_out) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(c.queries_in.cols()));

  Mat d_weights = d_out * c.v_proj.transpose();        // N×C
  Mat d_v = c.weights.transpose() * d_out;             // C×d
  Mat d_scores(d_weights.rows(), d_weights.cols());    // softmax backward, row-wise
  for (Eigen::Index i = 0; i < d_weights.rows(); ++i) {
    const double dot = d_weights.row(i).dot(c.weights.row(i));
    d_scores.row(i) =
        c.weights.row(i).cwiseProduct(d_weights.row(i) - Mat::Constant(1, d_weights.cols(), dot));
  }
  Mat d_q = scale * d_scores * c.k_proj;               // N×d
  Mat d_k = scale * d_scores.transpose() * c.q_proj;   // C×d

  AttendGrads g;
  g.d_queries_in = d_out + d_q * wq.transpose();
  g.d_context = d_k * wk.transpose() + d_v * wv.transpose();
  g.d_wq = c.queries_in.transpose() * d_q;
  g.d_wk = c.context.transpose() * d_k;
  g.d_wv = c.context.transpose() * d_v;
  return g;
}

struct MaxsimCache {
  Mat h, q;
  std::vector<double> h_norms, q_norms;
  std::vector<int> argmax;     // best q row per h row
  std::vector<double> best;    // cosine at the argmax
  double min_gap = std::numeric_limits<double>::infinity();
  double value = 0.0;
};

void check_rows_nonzero(const Mat& m, std::vector<double>& norms, const char* name) {
  norms.resize(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (n < kZeroNormEps) {
      throw std::invalid_argument(std::string("maxsim: zero row ") + std::to_string(i) +
                                  " in " + name + " matrix");
    }
    norms[static_cast<std::size_t>(i)] = n;
  }
}

double maxsim_forward(const Mat& h, const Mat& q, MaxsimCache* cache) {
  if (h.rows() == 0 || q.rows() == 0) throw std::invalid_argument("maxsim: empty matrix");
  if (h.cols() != q.cols()) throw std::invalid_argument("maxsim: dimension mismatch");

  MaxsimCache local;
  MaxsimCache& c = cache ? *cache : local;
  c.h = h;
  c.q = q;
  check_rows_nonzero(h, c.h_norms, "section");
  check_rows_nonzero(q, c.q_norms, "question");

  c.argmax.assign(static_cast<std::size_t>(h.rows()), 0);
  c.best.assign(static_cast<std::size_t>(h.rows()), 0.0);
  double total = 0.0;
  for (Eigen::Index t = 0; t < h.rows(); ++t) {
    double best = -std::numeric_limits<double>::infinity();
    double second = -std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (Eigen::Index j = 0; j < q.rows(); ++j) {
      const double cos = std::clamp(h.row(t).dot(q.row(j)) /
                                        (c.h_norms[static_cast<std::size_t>(t)] *
                                         c.q_norms[static_cast<std::size_t>(j)]),
                                    -1.0, 1.0);
      if (cos > best) {  // strict: earliest maximizer wins ties
        second = best;
        best = cos;
        best_j = static_cast<int>(j);
      } else if (cos > second) {
        second = cos;
      }
    }
    c.argmax[static_cast<std::size_t>(t)] = best_j;
    c.best[static_cast<std::size_t>(t)] = best;
    if (q.rows() > 1) c.min_gap = std::min(c.min_gap, best - second);
    total += best;
  }
  c.value = total / static_cast<double>(h.rows());
  return c.value;
}

/// Accumulates d(value)/d(h) into d_h and d(value)/d(q) into d_q through the
/// argmax pairs (subgradient: the recorded lowest-index maximizer).
void maxsim_backward(const MaxsimCache& c, double d_value, Mat& d_h, Mat& d_q) {
  const double coef = d_value / static_cast<double>(c.h.rows());
  for (Eigen::Index t = 0; t < c.h.rows(); ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const int j = c.argmax[ti];
    const auto ji = static_cast<std::size_t>(j);
    const double hn = c.h_norms[ti];
    const double qn = c.q_norms[ji];
    const double cos = c.best[ti];
    d_h.row(t) += coef * (c.q.row(j) / qn - cos * c.h.row(t) / hn) / hn;
    d_q.row(j) += coef * (c.h.row(t) / hn - cos * c.q.row(j) / qn) / qn;
  }
}

QffGradients zero_gradients(const QffParams& p) {
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

struct SectionForward {
  ContextCache ctx;
  AttendCache attend;
  MaxsimCache sim;
  double score = 0.0;
};

struct ExampleForward {
  ContextCache question_ctx;
  AttendCache question_attend;
  Mat q_tokens;
  AttendCache fuse_attend;
  Mat f_queries;
  SectionForward positive;
  std::vector<SectionForward> negatives;
  double loss = 0.0;
  double min_gap = std::numeric_limits<double>::infinity();
  std::vector<double> logits_grad;  // d(loss)/d(score), positive first
};

void forward_section(const QffParams& p, const Mat& f_queries, const corpus::Section& s,
                     const std::optional<Vec>& image, const Mat& q_tokens, SectionForward& out) {
  Mat ctx = build_context(p, image, {s.article_title, s.section_title, s.passage}, &out.ctx);
  Mat h = attend(f_queries, ctx, p.enc_query_w, p.enc_key_w, p.enc_value_w, &out.attend);
  out.score = maxsim_forward(h, q_tokens, &out.sim);
}

ExampleForward forward_example(const QffParams& p, const TrainExample& ex, double tau) {
  if (tau <= 0) throw std::invalid_argument("tau must be > 0");
  if (ex.negatives.empty()) throw std::invalid_argument("training example needs negatives");
  if (ex.negatives.size() != ex.negative_images.size()) {
    throw std::invalid_argument("negatives and negative_images differ in length");
  }

  ExampleForward f;
  Mat qctx = build_context(p, ex.query_image, {ex.question}, &f.question_ctx);
  f.q_tokens = attend(p.queries, qctx, p.enc_query_w, p.enc_key_w, p.enc_value_w,
                      &f.question_attend);
  f.f_queries = attend(p.queries, f.q_tokens, p.fuse_query_w, p.fuse_key_w, p.fuse_value_w,
                       &f.fuse_attend);

  forward_section(p, f.f_queries, ex.positive, ex.positive_image, f.q_tokens, f.positive);
  f.min_gap = std::min(f.min_gap, f.positive.sim.min_gap);
  f.negatives.resize(ex.negatives.size());
  std::vector<double> neg_scores(ex.negatives.size());
  for (std::size_t i = 0; i < ex.negatives.size(); ++i) {
    forward_section(p, f.f_queries, ex.negatives[i], ex.negative_images[i], f.q_tokens,
                    f.negatives[i]);
    neg_scores[i] = f.negatives[i].score;
    f.min_gap = std::min(f.min_gap, f.negatives[i].sim.min_gap);
  }
  f.loss = contrastive_loss(f.positive.score, neg_scores, tau);

  // softmax over scaled scores, positive first
  std::vector<double> z;
  z.reserve(1 + neg_scores.size());
  z.push_back(f.positive.score / tau);
  for (double s : neg_scores) z.push_back(s / tau);
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  std::vector<double> e(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i] - zmax);
    total += e[i];
  }
  f.logits_grad.resize(z.size());
  f.logits_grad[0] = (e[0] / total - 1.0) / tau;
  for (std::size_t i = 1; i < z.size(); ++i) f.logits_grad[i] = (e[i] / total) / tau;
  return f;
}

}  // namespace

QffParams init_params(const QffDims& dims, std::uint64_t seed) {
  dims.validate();
  QffParams p;
  p.dims = dims;
  p.seed = seed;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.dim));
  DetRng rng(seed);

  p.token_embedding.resize(dims.vocab, dims.dim);
  p.image_projection.resize(dims.image_dim, dims.dim);
  p.queries.resize(dims.num_queries, dims.dim);
  p.enc_query_w.resize(dims.dim, dims.dim);
  p.enc_key_w.resize(dims.dim, dims.dim);
  p.enc_value_w.resize(dims.dim, dims.dim);
  p.fuse_query_w.resize(dims.dim, dims.dim);
  p.fuse_key_w.resize(dims.dim, dims.dim);
  p.fuse_value_w.resize(dims.dim, dims.dim);

  fill_uniform(p.token_embedding, bound, rng);
  fill_uniform(p.image_projection, bound, rng);
  fill_uniform(p.queries, bound, rng);
  fill_uniform(p.enc_query_w, bound, rng);
  fill_uniform(p.enc_key_w, bound, rng);
  fill_uniform(p.enc_value_w, bound, rng);
  fill_uniform(p.fuse_query_w, bound, rng);
  fill_uniform(p.fuse_key_w, bound, rng);
  fill_uniform(p.fuse_value_w, bound, rng);
  return p;
}

int token_id(const QffParams& params, std::string_view token) {
  return static_cast<int>(hash64(token, params.seed) %
                          static_cast<std::uint64_t>(params.dims.vocab));
}

Mat attend(const Mat& queries_in, const Mat& context, const Mat& wq, const Mat& wk,
           const Mat& wv, AttendCache* cache) {
  if (context.rows() == 0) throw std::invalid_argument("attend: empty context");
  const Eigen::Index d = queries_in.cols();
  if (context.cols() != d || wq.rows() != d || wq.cols() != d || wk.rows() != d ||
      wk.cols() != d || wv.rows() != d || wv.cols() != d) {
    throw std::invalid_argument("attend: inconsistent dimensions");
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Mat q_proj = queries_in * wq;
  Mat k_proj = context * wk;
  Mat v_proj = context * wv;
  Mat scores = scale * (q_proj * k_proj.transpose());

  Mat weights(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double row_max = scores.row(i).maxCoeff();
    Eigen::ArrayXd e = (scores.row(i).array() - row_max).exp();
    weights.row(i) = (e / e.sum()).matrix();
  }
  Mat out = queries_in + weights * v_proj;

  if (cache) {
    cache->queries_in = queries_in;
    cache->context = context;
    cache->q_proj = std::move(q_proj);
    cache->k_proj = std::move(k_proj);
    cache->v_proj = std::move(v_proj);
    cache->weights = std::move(weights);
  }
  return out;
}

Mat encode_question(const QffParams& params, const std::string& question,
                    const std::optional<Vec>& image) {
  Mat ctx = build_context(params, image, {question}, nullptr);
  return attend(params.queries, ctx, params.enc_query_w, params.enc_key_w, params.enc_value_w);
}

Mat fuse_queries(const QffParams& params, const Mat& q_tokens) {
  if (q_tokens.rows() != params.dims.num_queries) {
    throw std::invalid_argument("fuse_queries: q_tokens must have num_queries rows");
  }
  return attend(params.queries, q_tokens, params.fuse_query_w, params.fuse_key_w,
                params.fuse_value_w);
}

Mat encode_section(const QffParams& params, const Mat& f_queries,
                   const corpus::Section& section, const std::optional<Vec>& image) {
  Mat ctx = build_context(params, image,
                          {section.article_title, section.section_title, section.passage},
                          nullptr);
  return attend(f_queries, ctx, params.enc_query_w, params.enc_key_w, params.enc_value_w);
}

double maxsim(const Mat& h, const Mat& q_tokens) { return maxsim_forward(h, q_tokens, nullptr); }

ArticleScore score_article(const QffParams& params, const Mat& q_tokens, const Mat& f_queries,
                           const corpus::Article& article, const std::optional<Vec>& image) {
  if (article.sections.empty()) {
    throw std::invalid_argument("score_article: article " + article.id + " has no sections");
  }
  ArticleScore out;
  out.section_scores.reserve(article.sections.size());
  for (const corpus::Section& s : article.sections) {
    Mat h = encode_section(params, f_queries, s, image);
    out.section_scores.push_back(maxsim(h, q_tokens));
  }
  out.best_section = 0;
  out.article_score = out.section_scores[0];
  for (std::size_t i = 1; i < out.section_scores.size(); ++i) {
    if (out.section_scores[i] > out.article_score) {  // strict: lowest index on ties
      out.article_score = out.section_scores[i];
      out.best_section = static_cast<int>(i);
    }
  }
  return out;
}

double fuse_scores(double retrieval_score, double qff_score, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must lie in [0, 1]");
  return alpha * retrieval_score + (1.0 - alpha) * qff_score;
}

std::vector<retrieval::ScoredArticle> rerank_articles(
    const QffParams& params, const std::string& question, const Vec& query_image,
    std::vector<retrieval::ScoredArticle> candidates, const corpus::Corpus& kb,
    const ArticleImageFn& image_of, int top_u, double alpha) {
  if (candidates.empty()) throw std::invalid_argument("rerank_articles: no candidates");
  if (top_u < 1) throw std::invalid_argument("rerank_articles: top_u must be >= 1");

  const Mat q_tokens = encode_question(params, question, query_image);
  const Mat f_queries = fuse_queries(params, q_tokens);

  for (auto& cand : candidates) {
    const corpus::Article& article = kb.at(cand.article_id);
    const ArticleScore sc =
        score_article(params, q_tokens, f_queries, article, image_of(article));
    cand.qff_score = sc.article_score;
    cand.section_scores = sc.section_scores;
    cand.best_section = sc.best_section;
    cand.fused_score = fuse_scores(cand.retrieval_score, cand.qff_score, alpha);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const retrieval::ScoredArticle& a, const retrieval::ScoredArticle& b) {
                     if (a.fused_score != b.fused_score) return a.fused_score > b.fused_score;
                     return a.retrieval_rank < b.retrieval_rank;
                   });
  if (candidates.size() > static_cast<std::size_t>(top_u)) {
    candidates.resize(static_cast<std::size_t>(top_u));
  }
  return candidates;
}

double contrastive_loss(double positive_score, std::span<const double> negative_scores,
                        double tau) {
  if (tau <= 0) throw std::invalid_argument("contrastive_loss: tau must be > 0");
  if (negative_scores.empty()) return 0.0;
  // -pos/tau + logsumexp(pos/tau, negs/tau)
  double zmax = positive_score / tau;
  for (double s : negative_scores) zmax = std::max(zmax, s / tau);
  double total = std::exp(positive_score / tau - zmax);
  for (double s : negative_scores) total += std::exp(s / tau - zmax);
  return -positive_score / tau + zmax + std::log(total);
}

double example_loss(const QffParams& params, const TrainExample& example, double tau) {
  return forward_example(params, example, tau).loss;
}

LossInfo loss_gradients(const QffParams& params, const TrainExample& example, double tau) {
  ExampleForward f = forward_example(params, example, tau);

  LossInfo info;
  info.loss = f.loss;
  info.positive_score = f.positive.score;
  for (const auto& n : f.negatives) info.negative_scores.push_back(n.score);
  info.min_argmax_gap = f.min_gap;
  info.grads = zero_gradients(params);
  QffGradients& g = info.grads;

  Mat d_q_tokens = Mat::Zero(params.dims.num_queries, params.dims.dim);
  Mat d_f_queries = Mat::Zero(params.dims.num_queries, params.dims.dim);

  auto backward_section = [&](const SectionForward& sf, double d_score) {
    Mat d_h = Mat::Zero(sf.sim.h.rows(), sf.sim.h.cols());
    maxsim_backward(sf.sim, d_score, d_h, d_q_tokens);
    AttendGrads ag = attend_backward(sf.attend, params.enc_query_w, params.enc_key_w,
                                     params.enc_value_w, d_h);
    d_f_queries += ag.d_queries_in;
    g.enc_query_w += ag.d_wq;
    g.enc_key_w += ag.d_wk;
    g.enc_value_w += ag.d_wv;
    context_backward(sf.ctx, ag.d_context, g);
  };

  backward_section(f.positive, f.logits_grad[0]);
  for (std::size_t i = 0; i < f.negatives.size(); ++i) {
    backward_section(f.negatives[i], f.logits_grad[i + 1]);
  }

  // fusion block: queries_in = learnable queries, context = q_tokens
  AttendGrads fg = attend_backward(f.fuse_attend, params.fuse_query_w, params.fuse_key_w,
                                   params.fuse_value_w, d_f_queries);
  g.queries += fg.d_queries_in;
  g.fuse_query_w += fg.d_wq;
  g.fuse_key_w += fg.d_wk;
  g.fuse_value_w += fg.d_wv;
  d_q_tokens += fg.d_context;

  // question encoder: queries_in = learnable queries, context = question tokens
  AttendGrads qg = attend_backward(f.question_attend, params.enc_query_w, params.enc_key_w,
                                   params.enc_value_w, d_q_tokens);
  g.queries += qg.d_queries_in;
  g.enc_query_w += qg.d_wq;
  g.enc_key_w += qg.d_wk;
  g.enc_value_w += qg.d_wv;
  context_backward(f.question_ctx, qg.d_context, g);

  return info;
}

std::vector<corpus::Section> sample_negatives(
    const corpus::Corpus& kb, std::span<const retrieval::ScoredArticle> candidates,
    const corpus::Section& positive, int m, int max_hard, DetRng& rng) {
  if (m < 1) throw std::invalid_argument("sample_negatives: m must be >= 1");
  if (max_hard < 0) throw std::invalid_argument("sample_negatives: max_hard must be >= 0");
  if (candidates.empty()) throw std::invalid_argument("sample_negatives: no candidates");

  const corpus::Article* positive_article = kb.find(positive.article_id);
  std::vector<const corpus::Section*> hard_pool;
  if (positive_article) {
    for (const auto& s : positive_article->sections) {
      if (s.section_index != positive.section_index) hard_pool.push_back(&s);
    }
  }
  std::vector<const corpus::Section*> other_pool;
  for (const auto& cand : candidates) {
    if (cand.article_id == positive.article_id) continue;
    const corpus::Article* a = kb.find(cand.article_id);
    if (!a) throw std::invalid_argument("sample_negatives: unknown article " + cand.article_id);
    for (const auto& s : a->sections) other_pool.push_back(&s);
  }
  if (hard_pool.empty() && other_pool.empty()) {
    throw std::invalid_argument("sample_negatives: no negative sections available");
  }

  std::vector<corpus::Section> out;
  out.reserve(static_cast<std::size_t>(m));

  rng.shuffle(hard_pool);
  const std::size_t hard_take =
      std::min<std::size_t>(static_cast<std::size_t>(max_hard),
                            std::min<std::size_t>(hard_pool.size(), static_cast<std::size_t>(m)));
  for (std::size_t i = 0; i < hard_take; ++i) out.push_back(*hard_pool[i]);

  rng.shuffle(other_pool);
  for (std::size_t i = 0; i < other_pool.size() && out.size() < static_cast<std::size_t>(m);
       ++i) {
    out.push_back(*other_pool[i]);
  }

  // pool exhausted: pad with replacement from everything that is not the positive
  std::vector<const corpus::Section*> all_pool = hard_pool;
  all_pool.insert(all_pool.end(), other_pool.begin(), other_pool.end());
  while (out.size() < static_cast<std::size_t>(m)) {
    out.push_back(*all_pool[rng.next_index(all_pool.size())]);
  }
  return out;
}

}  // namespace qkf::qff
