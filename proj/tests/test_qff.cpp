#include "qkf/qff.hpp"

#include <cmath>

#include "doctest.h"
#include "qkf/checkpoint.hpp"
#include "support/oracles.hpp"

#include <sstream>

using namespace qkf;
using namespace qkf::qff;
using qkf_test::oracle_attend;
using qkf_test::oracle_maxsim;
using qkf_test::random_matrix;

namespace {

QffDims small_dims() {
  QffDims d;
  d.num_queries = 3;
  d.dim = 4;
  d.vocab = 32;
  d.image_dim = 5;
  return d;
}

Vec unit_image(int dim, int axis) {
  Vec v = Vec::Zero(dim);
  v[axis % dim] = 1.0;
  return v;
}

corpus::Section make_section(const std::string& article_id, int index,
                             const std::string& passage) {
  corpus::Section s;
  s.article_id = article_id;
  s.section_index = index;
  s.article_title = "Title " + article_id;
  s.section_title = "Sec " + std::to_string(index);
  s.passage = passage;
  return s;
}

}  // namespace

TEST_CASE("init_params is deterministic, seed-sensitive and shape-correct") {
  const auto dims = small_dims();
  const QffParams a = init_params(dims, 9);
  const QffParams b = init_params(dims, 9);
  const QffParams c = init_params(dims, 10);
  CHECK(a.token_embedding == b.token_embedding);
  CHECK(a.queries == b.queries);
  CHECK(a.fuse_value_w == b.fuse_value_w);
  CHECK(a.token_embedding != c.token_embedding);

  CHECK(a.token_embedding.rows() == 32);
  CHECK(a.token_embedding.cols() == 4);
  CHECK(a.image_projection.rows() == 5);
  CHECK(a.queries.rows() == 3);
  const double bound = 1.0 / std::sqrt(4.0);
  CHECK(a.token_embedding.cwiseAbs().maxCoeff() <= bound);

  SUBCASE("1x1 shapes") {
    QffDims tiny;
    tiny.num_queries = 1;
    tiny.dim = 1;
    tiny.vocab = 2;
    tiny.image_dim = 1;
    const QffParams t = init_params(tiny, 1);
    CHECK(t.queries.rows() == 1);
    CHECK(t.queries.cols() == 1);
    CHECK(t.enc_query_w.rows() == 1);
  }
}

TEST_CASE("attend: zero payload is the identity on queries") {
  DetRng rng(3);
  const Mat queries = random_matrix(3, 4, rng);
  const Mat context = random_matrix(5, 4, rng);
  const Mat wq = random_matrix(4, 4, rng);
  const Mat zero = Mat::Zero(4, 4);
  CHECK(attend(queries, context, wq, zero, zero) == queries);
}

TEST_CASE("attend: single key gives softmax weight one") {
  Mat queries(1, 1), context(1, 1), w(1, 1);
  queries << 2.0;
  context << 3.0;
  w << 1.0;
  const Mat out = attend(queries, context, w, w, w);
  CHECK(out(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("attend matches the dense oracle") {
  DetRng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng.next_index(4));
    const auto c = static_cast<Eigen::Index>(1 + rng.next_index(6));
    const auto d = static_cast<Eigen::Index>(1 + rng.next_index(6));
    const Mat queries = random_matrix(n, d, rng);
    const Mat context = random_matrix(c, d, rng);
    const Mat wq = random_matrix(d, d, rng);
    const Mat wk = random_matrix(d, d, rng);
    const Mat wv = random_matrix(d, d, rng);
    const Mat got = attend(queries, context, wq, wk, wv);
    const Mat want = oracle_attend(queries, context, wq, wk, wv);
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const Mat q = Mat::Ones(2, 3);
  CHECK_THROWS_AS(attend(q, Mat(0, 3), Mat::Identity(3, 3), Mat::Identity(3, 3),
                         Mat::Identity(3, 3)),
                  std::invalid_argument);
}

TEST_CASE("encode_question shapes and degenerate payloads") {
  QffParams p = init_params(small_dims(), 21);
  const Vec img = unit_image(5, 2);

  SUBCASE("empty question works off the image token alone") {
    const Mat out = encode_question(p, "", img);
    CHECK(out.rows() == 3);
    CHECK(out.cols() == 4);
  }
  SUBCASE("zero key/value payload returns the learnable queries") {
    p.enc_key_w.setZero();
    p.enc_value_w.setZero();
    CHECK(encode_question(p, "what is this", img) == p.queries);
  }
  SUBCASE("deterministic re-evaluation") {
    const Mat a = encode_question(p, "same question", img);
    const Mat b = encode_question(p, "same question", img);
    CHECK(a == b);
  }
  SUBCASE("matches composing the context by hand through the oracle") {
    const std::string question = "pale rock formations";
    std::vector<int> ids;
    for (const auto& tok : split_whitespace(question)) ids.push_back(token_id(p, tok));
    Mat ctx(1 + ids.size(), 4);
    ctx.row(0) = img.transpose() * p.image_projection;
    for (std::size_t i = 0; i < ids.size(); ++i) ctx.row(1 + i) = p.token_embedding.row(ids[i]);
    const Mat want = oracle_attend(p.queries, ctx, p.enc_query_w, p.enc_key_w, p.enc_value_w);
    const Mat got = encode_question(p, question, img);
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("fuse_queries") {
  QffParams p = init_params(small_dims(), 33);
  SUBCASE("all-zero question tokens leave the queries unchanged") {
    CHECK(fuse_queries(p, Mat::Zero(3, 4)) == p.queries);
  }
  SUBCASE("row count is enforced") {
    CHECK_THROWS_AS(fuse_queries(p, Mat::Zero(2, 4)), std::invalid_argument);
  }
  SUBCASE("random case equals the oracle") {
    DetRng rng(4);
    const Mat q_tokens = random_matrix(3, 4, rng);
    const Mat want =
        oracle_attend(p.queries, q_tokens, p.fuse_query_w, p.fuse_key_w, p.fuse_value_w);
    CHECK((fuse_queries(p, q_tokens) - want).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("encode_section") {
  QffParams p = init_params(small_dims(), 5);
  const Vec img = unit_image(5, 1);
  const Mat q_tokens = encode_question(p, "a question", unit_image(5, 0));
  const Mat f_queries = fuse_queries(p, q_tokens);
  const auto section = make_section("a1", 0, "body words here");

  SUBCASE("zero payload returns the fused queries") {
    QffParams z = p;
    z.enc_key_w.setZero();
    z.enc_value_w.setZero();
    CHECK(encode_section(z, f_queries, section, img) == f_queries);
  }
  SUBCASE("purity: identical inputs give identical features") {
    CHECK(encode_section(p, f_queries, section, img) ==
          encode_section(p, f_queries, section, img));
  }
  SUBCASE("sections without an image still encode") {
    const Mat h = encode_section(p, f_queries, section, std::nullopt);
    CHECK(h.rows() == 3);
  }
}

TEST_CASE("maxsim basics and oracle equivalence") {
  SUBCASE("orthonormal rows") {
    Mat h(2, 2), q(1, 2);
    h << 1, 0, 0, 1;
    q << 1, 0;
    CHECK(maxsim(h, q) == doctest::Approx(0.5));
  }
  SUBCASE("identical matrices score one") {
    DetRng rng(8);
    const Mat h = random_matrix(4, 6, rng);
    CHECK(maxsim(h, h) == doctest::Approx(1.0));
  }
  SUBCASE("zero rows are rejected by name") {
    Mat h = Mat::Zero(2, 2);
    h(0, 0) = 1.0;  // row 1 stays zero
    Mat q(1, 2);
    q << 1, 0;
    CHECK_THROWS_WITH_AS(maxsim(h, q), doctest::Contains("row 1"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(maxsim(q, h), doctest::Contains("question"), std::invalid_argument);
  }
  SUBCASE("random cases match the double loop within 1e-9") {
    DetRng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      const auto hr = static_cast<Eigen::Index>(1 + rng.next_index(6));
      const auto qr = static_cast<Eigen::Index>(1 + rng.next_index(4));
      const auto d = static_cast<Eigen::Index>(2 + rng.next_index(8));
      const Mat h = random_matrix(hr, d, rng);
      const Mat q = random_matrix(qr, d, rng);
      if (h.rowwise().norm().minCoeff() < 1e-6 || q.rowwise().norm().minCoeff() < 1e-6) continue;
      CHECK(maxsim(h, q) == doctest::Approx(oracle_maxsim(h, q)).epsilon(1e-9));
    }
  }
  SUBCASE("positive row scaling does not change the score") {
    DetRng rng(13);
    Mat h = random_matrix(3, 5, rng);
    Mat q = random_matrix(2, 5, rng);
    const double before = maxsim(h, q);
    h.row(1) *= 7.5;
    q.row(0) *= 0.03;
    CHECK(maxsim(h, q) == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("score_article") {
  QffParams p = init_params(small_dims(), 44);
  const Vec qimg = unit_image(5, 0);
  const Mat q_tokens = encode_question(p, "which section matches", qimg);
  const Mat f_queries = fuse_queries(p, q_tokens);

  corpus::Article a;
  a.id = "art";
  a.title = "Title art";
  a.sections = {make_section("art", 0, "first passage words"),
                make_section("art", 1, "second passage words"),
                make_section("art", 2, "third passage words")};

  const auto sc = score_article(p, q_tokens, f_queries, a, unit_image(5, 3));
  REQUIRE(sc.section_scores.size() == 3);
  // oracle: recompute each section independently and take the max
  double best = -2.0;
  int best_i = -1;
  for (int i = 0; i < 3; ++i) {
    const double s = maxsim(
        encode_section(p, f_queries, a.sections[static_cast<std::size_t>(i)], unit_image(5, 3)),
        q_tokens);
    CHECK(sc.section_scores[static_cast<std::size_t>(i)] == doctest::Approx(s).epsilon(1e-12));
    if (s > best) {
      best = s;
      best_i = i;
    }
  }
  CHECK(sc.article_score == doctest::Approx(best));
  CHECK(sc.best_section == best_i);

  SUBCASE("single-section article score equals that section") {
    corpus::Article solo;
    solo.id = "solo";
    solo.title = "T";
    solo.sections = {make_section("solo", 0, "only passage")};
    const auto s = score_article(p, q_tokens, f_queries, solo, std::nullopt);
    CHECK(s.article_score == s.section_scores[0]);
    CHECK(s.best_section == 0);
  }
  SUBCASE("ties keep the lowest section index") {
    corpus::Article dup;
    dup.id = "dup";
    dup.title = "T";
    dup.sections = {make_section("dup", 0, "low score text zzz"),
                    make_section("dup", 1, "identical passage"),
                    make_section("dup", 2, "identical passage")};
    dup.sections[2].section_title = dup.sections[1].section_title;  // make 1 and 2 identical
    const auto s = score_article(p, q_tokens, f_queries, dup, std::nullopt);
    CHECK(s.section_scores[1] == s.section_scores[2]);
    if (s.section_scores[1] >= s.section_scores[0]) CHECK(s.best_section <= 1);
  }
  SUBCASE("no sections is an error") {
    corpus::Article empty;
    empty.id = "none";
    empty.title = "T";
    CHECK_THROWS_AS(score_article(p, q_tokens, f_queries, empty, std::nullopt),
                    std::invalid_argument);
  }
}

TEST_CASE("fuse_scores") {
  CHECK(fuse_scores(0.5, 0.8, 1.0) == 0.5);
  CHECK(fuse_scores(0.5, 0.8, 0.0) == 0.8);
  CHECK(fuse_scores(0.5, 0.8, 0.9) == doctest::Approx(0.53));
  CHECK_THROWS_AS(fuse_scores(0.5, 0.8, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(fuse_scores(0.5, 0.8, 1.1), std::invalid_argument);
}

namespace {

struct RerankFixture {
  corpus::Corpus kb;
  std::vector<retrieval::ScoredArticle> candidates;
  QffParams params;
  Vec query_image;
  ArticleImageFn image_of;

  explicit RerankFixture(int n_articles) : params(init_params(small_dims(), 77)) {
    std::vector<corpus::Article> articles;
    DetRng rng(55);
    for (int i = 0; i < n_articles; ++i) {
      corpus::Article a;
      a.id = "a" + std::to_string(i);
      a.title = "Title " + std::to_string(i);
      a.abstract = "abstract " + std::to_string(i);
      const int sections = 1 + static_cast<int>(rng.next_index(3));
      for (int s = 0; s < sections; ++s) {
        a.sections.push_back(make_section(a.id, s,
                                          "passage " + std::to_string(i) + " " +
                                              std::to_string(s) + " filler words"));
      }
      articles.push_back(std::move(a));

      retrieval::ScoredArticle cand;
      cand.article_id = "a" + std::to_string(i);
      cand.retrieval_score = 1.0 - 0.01 * i;
      cand.retrieval_rank = i + 1;
      candidates.push_back(cand);
    }
    kb = corpus::Corpus(std::move(articles));
    query_image = unit_image(5, 0);
    image_of = [](const corpus::Article&) -> std::optional<Vec> { return std::nullopt; };
  }
};

}  // namespace

TEST_CASE("rerank_articles boundaries and oracle") {
  RerankFixture fx(20);

  SUBCASE("alpha = 1 preserves retrieval order") {
    const auto out = rerank_articles(fx.params, "some question", fx.query_image, fx.candidates,
                                     fx.kb, fx.image_of, 20, 1.0);
    REQUIRE(out.size() == 20);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i].retrieval_rank == static_cast<int>(i + 1));
      CHECK(out[i].fused_score == doctest::Approx(out[i].retrieval_score));
    }
  }
  SUBCASE("alpha = 0 orders by the filter score alone") {
    const auto out = rerank_articles(fx.params, "some question", fx.query_image, fx.candidates,
                                     fx.kb, fx.image_of, 20, 0.0);
    for (std::size_t i = 1; i < out.size(); ++i) {
      CHECK(out[i - 1].qff_score >= out[i].qff_score);
      CHECK(out[i].fused_score == doctest::Approx(out[i].qff_score));
    }
  }
  SUBCASE("matches a full recompute-and-sort oracle and fills every field") {
    const double alpha = 0.7;
    const auto out = rerank_articles(fx.params, "the question text", fx.query_image,
                                     fx.candidates, fx.kb, fx.image_of, 5, alpha);
    REQUIRE(out.size() == 5);

    const Mat q_tokens = encode_question(fx.params, "the question text", fx.query_image);
    const Mat f_queries = fuse_queries(fx.params, q_tokens);
    struct Row {
      std::string id;
      double fused;
      int rank;
    };
    std::vector<Row> oracle;
    for (const auto& cand : fx.candidates) {
      const auto sc = score_article(fx.params, q_tokens, f_queries, fx.kb.at(cand.article_id),
                                    std::nullopt);
      oracle.push_back(
          {cand.article_id, alpha * cand.retrieval_score + (1 - alpha) * sc.article_score,
           cand.retrieval_rank});
    }
    std::stable_sort(oracle.begin(), oracle.end(), [](const Row& a, const Row& b) {
      if (a.fused != b.fused) return a.fused > b.fused;
      return a.rank < b.rank;
    });
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i].article_id == oracle[i].id);
      CHECK(out[i].fused_score == doctest::Approx(oracle[i].fused).epsilon(1e-12));
      CHECK_FALSE(out[i].section_scores.empty());
      CHECK(out[i].best_section >= 0);
    }
  }
  SUBCASE("empty candidate list is an error") {
    CHECK_THROWS_AS(rerank_articles(fx.params, "q", fx.query_image, {}, fx.kb, fx.image_of, 3,
                                    0.5),
                    std::invalid_argument);
  }
}

TEST_CASE("contrastive_loss closed forms and invariances") {
  CHECK(contrastive_loss(0.7, {}, 0.07) == 0.0);

  const std::vector<double> one_equal{0.4};
  CHECK(contrastive_loss(0.4, one_equal, 0.31) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // direct high-precision evaluation of the definition, no log-sum-exp
  const std::vector<double> negs{0.0, 0.0, 0.0};
  const double tau = 0.07;
  const long double z = expl(1.0L / 0.07L);
  const long double expected = -logl(z / (z + 3.0L));
  CHECK(contrastive_loss(1.0, negs, tau) ==
        doctest::Approx(static_cast<double>(expected)).epsilon(1e-9));
  CHECK(contrastive_loss(1.0, negs, tau) == doctest::Approx(1.875e-6).epsilon(1e-3));

  SUBCASE("shift and permutation invariance") {
    DetRng rng(91);
    std::vector<double> raw{0.3, -0.2, 0.11, 0.02};
    const double pos = 0.4;
    const double base = contrastive_loss(pos, raw, 0.21);
    std::vector<double> shifted;
    for (double v : raw) shifted.push_back(v + 5.0);
    CHECK(contrastive_loss(pos + 5.0, shifted, 0.21) == doctest::Approx(base).epsilon(1e-12));
    std::vector<double> permuted{0.11, 0.3, 0.02, -0.2};
    CHECK(contrastive_loss(pos, permuted, 0.21) == doctest::Approx(base).epsilon(1e-12));
  }
  CHECK_THROWS_AS(contrastive_loss(1.0, {}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(contrastive_loss(1.0, {}, -1.0), std::invalid_argument);
}

TEST_CASE("checkpoint round trip preserves params bit-exactly") {
  const QffParams p = init_params(small_dims(), 123);
  std::ostringstream out;
  save_checkpoint(p, out);
  std::istringstream in(out.str());
  const QffParams q = load_checkpoint(in);
  CHECK(q.seed == p.seed);
  CHECK(q.dims.vocab == p.dims.vocab);
  CHECK(q.token_embedding == p.token_embedding);
  CHECK(q.fuse_value_w == p.fuse_value_w);

  std::istringstream junk("not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(junk), std::runtime_error);
}

namespace {

corpus::Corpus negatives_corpus() {
  std::vector<corpus::Article> articles;
  for (int i = 0; i < 4; ++i) {
    corpus::Article a;
    a.id = "n" + std::to_string(i);
    a.title = "T";
    const int sections = (i == 0) ? 5 : 2;  // n0 is the positive article
    for (int s = 0; s < sections; ++s) {
      a.sections.push_back(make_section(a.id, s, "text " + std::to_string(i * 10 + s)));
    }
    articles.push_back(std::move(a));
  }
  return corpus::Corpus(std::move(articles));
}

std::vector<retrieval::ScoredArticle> candidates_for(const corpus::Corpus& kb) {
  std::vector<retrieval::ScoredArticle> out;
  int rank = 1;
  for (const auto& a : kb.articles()) {
    retrieval::ScoredArticle s;
    s.article_id = a.id;
    s.retrieval_rank = rank++;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("sample_negatives") {
  const auto kb = negatives_corpus();
  const auto candidates = candidates_for(kb);
  const corpus::Section positive = kb.at("n0").sections[2];

  SUBCASE("takes exactly max_hard hard negatives when available") {
    DetRng rng(1);
    const auto negs = sample_negatives(kb, candidates, positive, 10, 3, rng);
    REQUIRE(negs.size() == 10);
    int hard = 0;
    for (const auto& n : negs) {
      CHECK_FALSE((n.article_id == "n0" && n.section_index == 2));
      if (n.article_id == "n0") ++hard;
    }
    CHECK(hard == 3);
  }
  SUBCASE("single-section positive article draws everything from the others") {
    std::vector<corpus::Article> arts;
    corpus::Article solo;
    solo.id = "solo";
    solo.title = "T";
    solo.sections = {make_section("solo", 0, "only")};
    arts.push_back(solo);
    corpus::Article other;
    other.id = "other";
    other.title = "T";
    other.sections = {make_section("other", 0, "x"), make_section("other", 1, "y")};
    arts.push_back(other);
    const corpus::Corpus kb2(std::move(arts));
    DetRng rng(2);
    const auto negs =
        sample_negatives(kb2, candidates_for(kb2), kb2.at("solo").sections[0], 4, 3, rng);
    REQUIRE(negs.size() == 4);
    for (const auto& n : negs) CHECK(n.article_id == "other");
  }
  SUBCASE("fixed seed reproduces the sample") {
    DetRng r1(42), r2(42);
    const auto a = sample_negatives(kb, candidates, positive, 6, 3, r1);
    const auto b = sample_negatives(kb, candidates, positive, 6, 3, r2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].article_id == b[i].article_id);
      CHECK(a[i].section_index == b[i].section_index);
    }
  }
  SUBCASE("pads with replacement once the pool is exhausted") {
    DetRng rng(3);
    // pool: 4 hard + 6 other = 10 unique; ask for more
    const auto negs = sample_negatives(kb, candidates, positive, 14, 3, rng);
    CHECK(negs.size() == 14);
  }
  SUBCASE("empty pool errors") {
    std::vector<corpus::Article> arts;
    corpus::Article solo;
    solo.id = "solo";
    solo.title = "T";
    solo.sections = {make_section("solo", 0, "only")};
    arts.push_back(solo);
    const corpus::Corpus kb3(std::move(arts));
    DetRng rng(4);
    CHECK_THROWS_AS(
        sample_negatives(kb3, candidates_for(kb3), kb3.at("solo").sections[0], 2, 3, rng),
        std::invalid_argument);
  }
}
