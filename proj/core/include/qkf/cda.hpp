#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qkf/corpus.hpp"
#include "qkf/retrieval.hpp"

namespace qkf::cda {

/// One chunk with its component and fused scores plus the rank of the
/// retained article it came from.
struct ScoredChunk {
  corpus::Chunk chunk;
  double section_score = 0.0;  // filter score of the parent section
  double chunk_score = 0.0;    // reranker score of the rendered chunk
  double final_score = 0.0;    // lambda * section + (1 - lambda) * chunk
  int article_rank = 0;        // 1-based rank among the retained articles
};

struct SelectionConfig {
  int top_u = 3;
  double theta = 0.02;
  int chunk_len = 512;
  double lambda = 0.2;
  int quota_first = 3;  // chunks taken from the top article
  int quota_rest = 1;   // chunks taken from each remaining article
  std::string tokenizer = "whitespace";

  void validate() const;
};

/// Keeps the first min(top_u, len) articles whose filter score trails the
/// leader by at most theta. The leader is always retained.
std::vector<retrieval::ScoredArticle> select_articles(
    std::span<const retrieval::ScoredArticle> ranked, int top_u, double theta);

using RerankFn = std::function<double(const std::string& question, const std::string& chunk)>;

/// Chunks every section of every retained article, scores the rendered chunk
/// against the question text and fuses with the parent section score.
std::vector<ScoredChunk> score_chunks(std::span<const retrieval::ScoredArticle> retained,
                                      const corpus::Corpus& kb, const std::string& question,
                                      const RerankFn& rerank, double lambda, int chunk_len,
                                      const corpus::Tokenizer& tok);

/// Per-article quota selection: top quota_first chunks of the rank-1 article,
/// top quota_rest of each other retained article, ordered by article rank
/// then final score. Ties fall back to (section_index, chunk_index).
std::vector<ScoredChunk> select_chunks(std::span<const ScoredChunk> scored, int retained_count,
                                       int quota_first, int quota_rest);

}  // namespace qkf::cda
