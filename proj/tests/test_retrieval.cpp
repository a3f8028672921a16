#include "qkf/retrieval.hpp"

#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "qkf/common.hpp"

using namespace qkf;
using namespace qkf::retrieval;

namespace {

Vec make_vec(std::initializer_list<double> vals) {
  Vec v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v[i++] = x;
  return v;
}

corpus::Corpus toy_corpus(int n) {
  std::vector<corpus::Article> articles;
  for (int i = 0; i < n; ++i) {
    corpus::Article a;
    a.id = "a" + std::to_string(i);
    a.title = "T" + std::to_string(i);
    // three id-bearing tokens so sign-hash collisions cannot alias abstracts
    a.abstract = "alpha" + std::to_string(i) + " beta" + std::to_string(i) + " gamma" +
                 std::to_string(i) + " abstract body";
    corpus::Section s;
    s.article_id = a.id;
    s.article_title = a.title;
    s.passage = "body " + std::to_string(i);
    a.sections.push_back(s);
    articles.push_back(std::move(a));
  }
  return corpus::Corpus(std::move(articles));
}

}  // namespace

TEST_CASE("cosine basics") {
  CHECK(cosine(make_vec({2, 0}), make_vec({2, 0})) == doctest::Approx(1.0));
  CHECK(cosine(make_vec({1, 0}), make_vec({0, 1})) == doctest::Approx(0.0));
  CHECK(cosine(make_vec({1, 0}), make_vec({1, 1})) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK_THROWS_AS(cosine(make_vec({0, 0}), make_vec({1, 0})), std::invalid_argument);
  CHECK_THROWS_AS(cosine(make_vec({1, 0}), make_vec({1, 0, 0})), std::invalid_argument);
}

TEST_CASE("cosine is invariant under positive scaling") {
  DetRng rng(5);
  for (int t = 0; t < 50; ++t) {
    Vec u(6), v(6);
    for (int i = 0; i < 6; ++i) {
      u[i] = rng.uniform(-1, 1);
      v[i] = rng.uniform(-1, 1);
    }
    if (u.norm() < 1e-6 || v.norm() < 1e-6) continue;
    const double a = 0.01 + 10 * rng.next_double();
    CHECK(cosine(a * u, v) == doctest::Approx(cosine(u, v)).epsilon(1e-12));
  }
}

TEST_CASE("build_index keeps ingestion order and is deterministic") {
  const auto kb = toy_corpus(3);
  providers::ToyProvider provider(32, 7);
  const auto index = build_index(kb, provider);
  REQUIRE(index.size() == 3);
  CHECK(index.entries()[0].article_id == "a0");
  CHECK(index.entries()[2].article_id == "a2");

  std::ostringstream a, b;
  index.save(a);
  build_index(kb, provider).save(b);
  CHECK(a.str() == b.str());  // identical bytes on rebuild
}

TEST_CASE("index persistence round-trips bit-exactly and rejects bad input") {
  const auto kb = toy_corpus(5);
  providers::ToyProvider provider(8, 3);
  const auto index = build_index(kb, provider);

  std::ostringstream out;
  index.save(out);
  std::istringstream in(out.str());
  const auto loaded = RetrievalIndex::load(in);
  CHECK(loaded.dim() == index.dim());
  CHECK(loaded.corpus_hash() == index.corpus_hash());
  CHECK(loaded.provider() == index.provider());
  std::ostringstream out2;
  loaded.save(out2);
  CHECK(out.str() == out2.str());

  std::istringstream junk("definitely not an index");
  CHECK_THROWS_AS(RetrievalIndex::load(junk), std::runtime_error);

  std::string bad_version = out.str();
  bad_version[8] = 9;  // bump the version field
  std::istringstream bv(bad_version);
  CHECK_THROWS_WITH_AS(RetrievalIndex::load(bv), doctest::Contains("version"),
                       std::runtime_error);
}

TEST_CASE("build_index rejects empty abstracts") {
  auto articles = std::vector<corpus::Article>{};
  corpus::Article a;
  a.id = "solo";
  a.title = "T";
  a.abstract = "  ";
  corpus::Section s;
  s.article_id = a.id;
  s.passage = "text";
  a.sections.push_back(s);
  articles.push_back(a);
  providers::ToyProvider provider(8, 7);
  CHECK_THROWS_WITH_AS(build_index(corpus::Corpus(std::move(articles)), provider),
                       doctest::Contains("solo"), std::runtime_error);
}

TEST_CASE("retrieve_topk basics") {
  const auto kb = toy_corpus(5);
  providers::ToyProvider provider(32, 7);
  const auto index = build_index(kb, provider);
  const Vec q = provider.embed_text(kb.articles()[2].abstract);

  SUBCASE("k larger than the corpus truncates") {
    const auto hits = retrieve_topk(index, q, 50);
    CHECK(hits.size() == 5);
    CHECK(hits[0].article_id == "a2");
    CHECK(hits[0].retrieval_score == doctest::Approx(1.0));
    for (std::size_t i = 0; i < hits.size(); ++i) {
      CHECK(hits[i].retrieval_rank == static_cast<int>(i + 1));
      CHECK(hits[i].retrieval_score >= -1.0);
      CHECK(hits[i].retrieval_score <= 1.0);
    }
  }
  SUBCASE("k must be positive, index non-empty") {
    CHECK_THROWS_AS(retrieve_topk(index, q, 0), std::invalid_argument);
    RetrievalIndex empty;
    CHECK_THROWS_AS(retrieve_topk(empty, q, 3), std::invalid_argument);
  }
}

TEST_CASE("identical vectors tie-break by ingestion order") {
  std::vector<RetrievalIndex::Entry> entries;
  for (int i = 0; i < 3; ++i) {
    entries.push_back({"dup" + std::to_string(i), make_vec({1, 0})});
  }
  const RetrievalIndex index(2, 0, "test", std::move(entries));
  const auto hits = retrieve_topk(index, make_vec({1, 0}), 3);
  CHECK(hits[0].article_id == "dup0");
  CHECK(hits[1].article_id == "dup1");
  CHECK(hits[2].article_id == "dup2");
}

TEST_CASE("retrieve_topk matches the full-sort oracle on a random corpus") {
  const auto kb = toy_corpus(50);
  providers::ToyProvider provider(24, 11);
  const auto index = build_index(kb, provider);

  DetRng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Vec q(24);
    for (int i = 0; i < 24; ++i) q[i] = rng.uniform(-1, 1);
    if (q.norm() < 1e-9) continue;

    // oracle: score everything, stable full sort, take a prefix
    struct Row {
      double score;
      std::size_t order;
    };
    std::vector<Row> rows;
    for (std::size_t i = 0; i < index.size(); ++i) {
      rows.push_back({cosine(q, index.entries()[i].abstract_vec), i});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.order < b.order;
    });

    const int k = 1 + static_cast<int>(rng.next_index(50));
    const auto hits = retrieve_topk(index, q, k);
    REQUIRE(hits.size() == static_cast<std::size_t>(std::min(k, 50)));
    for (std::size_t i = 0; i < hits.size(); ++i) {
      CHECK(hits[i].article_id == index.entries()[rows[i].order].article_id);
      CHECK(hits[i].retrieval_score == doctest::Approx(rows[i].score).epsilon(1e-15));
    }
  }
}
