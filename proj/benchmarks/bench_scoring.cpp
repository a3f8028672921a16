#include <benchmark/benchmark.h>

#include "qkf/common.hpp"
#include "qkf/qff.hpp"

using namespace qkf;
using qff::Mat;

namespace {

Mat random_matrix(Eigen::Index rows, Eigen::Index cols, DetRng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-1, 1);
  }
  return m;
}

}  // namespace

static void BM_maxsim(benchmark::State& state) {
  DetRng rng(1);
  const auto rows = static_cast<Eigen::Index>(state.range(0));
  const Mat h = random_matrix(rows, 32, rng);
  const Mat q = random_matrix(8, 32, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(qff::maxsim(h, q));
  }
  state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(BM_maxsim)->Arg(8)->Arg(64)->Arg(512);

static void BM_attend(benchmark::State& state) {
  DetRng rng(2);
  const auto ctx = static_cast<Eigen::Index>(state.range(0));
  const Mat queries = random_matrix(8, 32, rng);
  const Mat context = random_matrix(ctx, 32, rng);
  const Mat wq = random_matrix(32, 32, rng);
  const Mat wk = random_matrix(32, 32, rng);
  const Mat wv = random_matrix(32, 32, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(qff::attend(queries, context, wq, wk, wv));
  }
}
BENCHMARK(BM_attend)->Arg(16)->Arg(128)->Arg(512);

static void BM_loss_gradients(benchmark::State& state) {
  qff::QffDims dims;
  dims.num_queries = 8;
  dims.dim = 32;
  dims.vocab = 4096;
  dims.image_dim = 64;
  const auto params = qff::init_params(dims, 3);

  qff::TrainExample ex;
  ex.question = "what is the tallest structure on the northern ridge";
  ex.query_image = qff::Vec::Ones(64) / 8.0;
  ex.positive.article_id = "pos";
  ex.positive.article_title = "Northern Ridge";
  ex.positive.section_title = "Structures";
  ex.positive.passage =
      "the tallest structure on the northern ridge is the relay mast built on the old quarry "
      "road and it is visible from the valley floor on clear days";
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
    qkf::corpus::Section neg;
    neg.article_id = "neg" + std::to_string(i);
    neg.article_title = "Other";
    neg.passage = "entirely unrelated passage number " + std::to_string(i) +
                  " about meadows orchards and rivers with no ridge at all";
    ex.negatives.push_back(neg);
    ex.negative_images.emplace_back();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(qff::loss_gradients(params, ex, 0.07));
  }
}
BENCHMARK(BM_loss_gradients)->Arg(3)->Arg(15);
