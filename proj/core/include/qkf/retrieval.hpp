#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "qkf/corpus.hpp"
#include "qkf/providers.hpp"

namespace qkf::retrieval {

using Vec = Eigen::VectorXd;

double cosine(const Vec& u, const Vec& v);

/// Candidate article with every score the pipeline attaches along the way.
/// Retrieval fills id/score/rank; the filter fills the rest.
struct ScoredArticle {
  std::string article_id;
  double retrieval_score = 0.0;
  int retrieval_rank = 0;  // 1-based

  double qff_score = 0.0;
  double fused_score = 0.0;
  std::vector<double> section_scores;  // filter score per section
  int best_section = -1;               // argmax section (lowest index on ties)
};

/// Flat exact-search index over article abstract embeddings.
/// Entry order equals corpus ingestion order; immutable after build.
class RetrievalIndex {
 public:
  struct Entry {
    std::string article_id;
    Vec abstract_vec;
  };

  RetrievalIndex() = default;
  RetrievalIndex(int dim, std::uint64_t corpus_hash, std::string provider,
                 std::vector<Entry> entries);

  int dim() const { return dim_; }
  std::uint64_t corpus_hash() const { return corpus_hash_; }
  const std::string& provider() const { return provider_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void save(std::ostream& out) const;
  static RetrievalIndex load(std::istream& in);

 private:
  int dim_ = 0;
  std::uint64_t corpus_hash_ = 0;
  std::string provider_;
  std::vector<Entry> entries_;
};

/// Hash over (id, abstract) pairs in ingestion order; ties an index file to
/// the corpus it was built from.
std::uint64_t corpus_hash(const corpus::Corpus& corpus);

RetrievalIndex build_index(const corpus::Corpus& corpus, const providers::Provider& provider);

/// Top-K by cosine against the query image embedding, descending; ties keep
/// ingestion order. Ranks are assigned 1..len.
std::vector<ScoredArticle> retrieve_topk(const RetrievalIndex& index, const Vec& query_vec,
                                         int k);

}  // namespace qkf::retrieval
