#include <benchmark/benchmark.h>

#include "qkf/common.hpp"
#include "qkf/corpus.hpp"
#include "qkf/providers.hpp"
#include "qkf/retrieval.hpp"

using namespace qkf;

namespace {

retrieval::RetrievalIndex make_index(int n, int dim) {
  DetRng rng(5);
  std::vector<retrieval::RetrievalIndex::Entry> entries;
  entries.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    retrieval::Vec v(dim);
    for (int d = 0; d < dim; ++d) v[d] = rng.uniform(-1, 1);
    entries.push_back({"a" + std::to_string(i), v / v.norm()});
  }
  return retrieval::RetrievalIndex(dim, 0, "bench", std::move(entries));
}

}  // namespace

static void BM_retrieve_topk(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto index = make_index(n, 64);
  DetRng rng(6);
  retrieval::Vec q(64);
  for (int d = 0; d < 64; ++d) q[d] = rng.uniform(-1, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(retrieval::retrieve_topk(index, q, 20));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_retrieve_topk)->Arg(1000)->Arg(10000)->Arg(100000);

static void BM_chunk_section(benchmark::State& state) {
  corpus::WhitespaceTokenizer tok;
  corpus::Section s;
  s.article_id = "a";
  s.article_title = "T";
  s.section_title = "S";
  std::string text;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
    text += "token" + std::to_string(i) + " ";
  }
  s.passage = text;
  for (auto _ : state) {
    benchmark::DoNotOptimize(corpus::chunk_section(s, 512, tok));
  }
}
BENCHMARK(BM_chunk_section)->Arg(1000)->Arg(10000);

static void BM_toy_embed(benchmark::State& state) {
  providers::ToyProvider provider(64, 7);
  const std::string text =
      "a mid sized abstract with a couple dozen tokens describing a landmark its region and "
      "the roads that lead to it across the valley";
  for (auto _ : state) {
    benchmark::DoNotOptimize(provider.embed_text(text));
  }
}
BENCHMARK(BM_toy_embed);

BENCHMARK_MAIN();
