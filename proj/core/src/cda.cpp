#include "qkf/cda.hpp"

#include <algorithm>
#include <iostream>
#include <mutex>
#include <stdexcept>

namespace qkf::cda {

void SelectionConfig::validate() const {
  if (top_u < 1) throw std::invalid_argument("u must be >= 1");
  if (theta < 0) throw std::invalid_argument("theta must be >= 0");
  if (chunk_len < 1) throw std::invalid_argument("chunk length must be >= 1");
  if (lambda < 0 || lambda > 1) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (quota_rest < 1) throw std::invalid_argument("k2 must be >= 1");
  if (quota_first < quota_rest) throw std::invalid_argument("k1 must be >= k2");
}

std::vector<retrieval::ScoredArticle> select_articles(
    std::span<const retrieval::ScoredArticle> ranked, int top_u, double theta) {
  if (ranked.empty()) throw std::invalid_argument("select_articles: empty ranking");
  if (top_u < 1) throw std::invalid_argument("select_articles: u must be >= 1");
  if (theta < 0) throw std::invalid_argument("select_articles: theta must be >= 0");

  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(top_u), ranked.size());
  const double leader = ranked[0].qff_score;
  std::vector<retrieval::ScoredArticle> retained;
  retained.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    if (leader - ranked[i].qff_score <= theta) retained.push_back(ranked[i]);
  }
  return retained;
}

std::vector<ScoredChunk> score_chunks(std::span<const retrieval::ScoredArticle> retained,
                                      const corpus::Corpus& kb, const std::string& question,
                                      const RerankFn& rerank, double lambda, int chunk_len,
                                      const corpus::Tokenizer& tok) {
  if (retained.empty()) throw std::invalid_argument("score_chunks: no retained articles");
  if (lambda < 0 || lambda > 1) throw std::invalid_argument("score_chunks: lambda out of range");

  std::vector<ScoredChunk> out;
  for (std::size_t r = 0; r < retained.size(); ++r) {
    const auto& cand = retained[r];
    const corpus::Article& article = kb.at(cand.article_id);
    for (const corpus::Section& section : article.sections) {
      const auto si = static_cast<std::size_t>(section.section_index);
      if (si >= cand.section_scores.size()) {
        throw std::invalid_argument("score_chunks: article " + cand.article_id +
                                    " is missing a score for section " +
                                    std::to_string(section.section_index));
      }
      const double section_score = cand.section_scores[si];
      for (corpus::Chunk& chunk : corpus::chunk_section(section, chunk_len, tok)) {
        ScoredChunk sc;
        double chunk_score = 0.0;
        try {
          chunk_score = rerank(question, corpus::render_chunk(chunk));
        } catch (const std::exception& e) {
          throw std::runtime_error("score_chunks: reranker failed on " + chunk.article_id + "/" +
                                   std::to_string(chunk.section_index) + "/" +
                                   std::to_string(chunk.chunk_index) + ": " + e.what());
        }
        sc.chunk = std::move(chunk);
        sc.section_score = section_score;
        sc.chunk_score = chunk_score;
        sc.final_score = lambda * section_score + (1.0 - lambda) * chunk_score;
        sc.article_rank = static_cast<int>(r + 1);
        out.push_back(std::move(sc));
      }
    }
  }
  return out;
}

namespace {

bool better_chunk(const ScoredChunk& a, const ScoredChunk& b) {
  if (a.final_score != b.final_score) return a.final_score > b.final_score;
  if (a.chunk.section_index != b.chunk.section_index) {
    return a.chunk.section_index < b.chunk.section_index;
  }
  return a.chunk.chunk_index < b.chunk.chunk_index;
}

}  // namespace

std::vector<ScoredChunk> select_chunks(std::span<const ScoredChunk> scored, int retained_count,
                                       int quota_first, int quota_rest) {
  if (retained_count < 1) throw std::invalid_argument("select_chunks: no retained articles");
  if (quota_rest < 1) throw std::invalid_argument("select_chunks: k2 must be >= 1");
  if (quota_first < quota_rest) throw std::invalid_argument("select_chunks: k1 must be >= k2");
  if (quota_first == quota_rest) {
    static std::once_flag warned;
    std::call_once(warned,
                   [] { std::cerr << "warning: k1 == k2, the top article gets no larger quota\n"; });
  }

  std::vector<ScoredChunk> out;
  for (int rank = 1; rank <= retained_count; ++rank) {
    std::vector<ScoredChunk> mine;
    for (const auto& sc : scored) {
      if (sc.article_rank == rank) mine.push_back(sc);
    }
    const auto quota = static_cast<std::size_t>(rank == 1 ? quota_first : quota_rest);
    const std::size_t take = std::min(quota, mine.size());
    std::partial_sort(mine.begin(), mine.begin() + static_cast<std::ptrdiff_t>(take), mine.end(),
                      better_chunk);
    mine.resize(take);
    out.insert(out.end(), std::make_move_iterator(mine.begin()),
               std::make_move_iterator(mine.end()));
  }
  return out;
}

}  // namespace qkf::cda
