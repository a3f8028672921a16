#include "qkf/qff_train.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support/planted.hpp"

using namespace qkf;
using namespace qkf::qff;

namespace {

struct TrainFixture {
  qkf_test::PlantedFixture planted;
  providers::ToyProvider provider;
  retrieval::RetrievalIndex index;
  std::vector<TrainExample> examples;
  QffDims dims;

  explicit TrainFixture(int n_queries = 12)
      : planted(qkf_test::make_planted_fixture({.n_articles = 6,
                                                .sections_per_article = 3,
                                                .n_queries = n_queries,
                                                .group_size = 1,
                                                .dim = 16,
                                                .seed = 7})),
        provider(16, 7),
        index(retrieval::build_index(planted.kb, provider)) {
    dims.num_queries = 4;
    dims.dim = 12;
    dims.vocab = 512;
    dims.image_dim = 16;
    examples = build_train_examples(planted.kb, index, provider, planted.queries,
                                    /*k=*/6, /*m=*/5, /*max_hard=*/2, /*seed=*/7);
  }
};

}  // namespace

TEST_CASE("build_train_examples assembles positives and negatives") {
  TrainFixture fx;
  REQUIRE(fx.examples.size() == fx.planted.queries.size());
  for (std::size_t i = 0; i < fx.examples.size(); ++i) {
    const auto& ex = fx.examples[i];
    const auto& q = fx.planted.queries[i];
    CHECK(ex.positive.article_id == *q.evidence_article_id);
    CHECK(ex.positive.section_index == *q.evidence_section_index);
    CHECK(ex.negatives.size() == 5);
    CHECK(ex.negative_images.size() == 5);
    for (const auto& neg : ex.negatives) {
      CHECK_FALSE((neg.article_id == ex.positive.article_id &&
                   neg.section_index == ex.positive.section_index));
    }
  }
}

TEST_CASE("build_train_examples skips queries without usable evidence") {
  TrainFixture fx(4);
  auto queries = fx.planted.queries;
  queries[0].evidence_article_id.reset();
  queries[1].evidence_section_index = 99;
  queries.push_back(queries[2]);
  queries.back().qid = "missing-article";
  queries.back().evidence_article_id = "absent";

  std::vector<std::string> skipped;
  const auto examples = build_train_examples(fx.planted.kb, fx.index, fx.provider, queries, 6, 5,
                                             2, 7, &skipped);
  CHECK(examples.size() == 2);
  CHECK(skipped.size() == 3);
}

TEST_CASE("train with lr=0 keeps params and repeats the loss trace per epoch") {
  TrainFixture fx(3);
  QffParams params = init_params(fx.dims, 5);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.steps = 6;
  cfg.batch = 1;
  cfg.tau = 0.07;
  cfg.seed = 9;
  const auto before = params.token_embedding;
  const auto result = train(std::move(params), fx.examples, cfg);
  CHECK(result.params.token_embedding == before);
  REQUIRE(result.step_losses.size() == 6);
  // epochs reshuffle, so compare the per-example losses as multisets
  std::vector<double> first(result.step_losses.begin(), result.step_losses.begin() + 3);
  std::vector<double> second(result.step_losses.begin() + 3, result.step_losses.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  CHECK(first == second);
}

TEST_CASE("train is deterministic per seed") {
  TrainFixture fx(8);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.steps = 10;
  cfg.batch = 4;
  cfg.seed = 21;
  const auto a = train(init_params(fx.dims, 3), fx.examples, cfg);
  const auto b = train(init_params(fx.dims, 3), fx.examples, cfg);
  CHECK(a.params.token_embedding == b.params.token_embedding);
  CHECK(a.params.fuse_key_w == b.params.fuse_key_w);
  CHECK(a.step_losses == b.step_losses);
}

TEST_CASE("a short run of SGD reduces the planted-evidence loss") {
  TrainFixture fx(12);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.steps = 60;
  cfg.batch = 4;
  cfg.seed = 13;
  QffParams params = init_params(fx.dims, 2);
  const double initial = mean_loss(params, fx.examples, cfg.tau);
  const auto result = train(std::move(params), fx.examples, cfg);
  const double final_loss = mean_loss(result.params, fx.examples, cfg.tau);
  CHECK(final_loss < initial);
}

TEST_CASE("train aborts on non-finite loss naming the step") {
  TrainFixture fx(3);
  QffParams params = init_params(fx.dims, 5);
  params.queries(0, 0) = std::nan("");
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch = 1;
  CHECK_THROWS_WITH_AS(train(std::move(params), fx.examples, cfg),
                       doctest::Contains("step 0"), std::runtime_error);
}

TEST_CASE("train validates config and dataset") {
  TrainFixture fx(3);
  TrainConfig cfg;
  cfg.batch = 0;
  CHECK_THROWS_AS(train(init_params(fx.dims, 1), fx.examples, cfg), std::invalid_argument);
  TrainConfig ok;
  CHECK_THROWS_AS(train(init_params(fx.dims, 1), {}, ok), std::invalid_argument);
}
