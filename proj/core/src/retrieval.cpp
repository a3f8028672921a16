#include "qkf/retrieval.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "qkf/common.hpp"

namespace qkf::retrieval {

namespace {

constexpr char kMagic[8] = {'Q', 'K', 'F', 'I', 'N', 'D', 'X', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("index file truncated");
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw std::runtime_error("index file truncated");
  return s;
}

}  // namespace

double cosine(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) {
    throw std::invalid_argument("cosine: dimension mismatch (" + std::to_string(u.size()) +
                                " vs " + std::to_string(v.size()) + ")");
  }
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu < kZeroNormEps || nv < kZeroNormEps) {
    throw std::invalid_argument("cosine: zero vector");
  }
  // rounding can push u.u fractionally past 1; keep the contract exact
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

RetrievalIndex::RetrievalIndex(int dim, std::uint64_t corpus_hash, std::string provider,
                               std::vector<Entry> entries)
    : dim_(dim), corpus_hash_(corpus_hash), provider_(std::move(provider)),
      entries_(std::move(entries)) {
  for (const Entry& e : entries_) {
    if (e.abstract_vec.size() != dim_) {
      throw std::invalid_argument("index entry dim mismatch for article " + e.article_id);
    }
  }
}

void RetrievalIndex::save(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  write_pod<std::uint64_t>(out, entries_.size());
  write_pod(out, corpus_hash_);
  write_string(out, provider_);
  for (const Entry& e : entries_) {
    write_string(out, e.article_id);
    out.write(reinterpret_cast<const char*>(e.abstract_vec.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(dim_)));
  }
  if (!out) throw std::runtime_error("index write failed");
}

RetrievalIndex RetrievalIndex::load(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    throw std::runtime_error("not an index file (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw std::runtime_error("unsupported index version " + std::to_string(version));
  }
  const auto dim = read_pod<std::uint32_t>(in);
  const auto count = read_pod<std::uint64_t>(in);
  const auto hash = read_pod<std::uint64_t>(in);
  std::string provider = read_string(in);

  std::vector<Entry> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.article_id = read_string(in);
    e.abstract_vec.resize(dim);
    in.read(reinterpret_cast<char*>(e.abstract_vec.data()),
            static_cast<std::streamsize>(sizeof(double) * dim));
    if (!in) throw std::runtime_error("index file truncated");
    entries.push_back(std::move(e));
  }
  return RetrievalIndex(static_cast<int>(dim), hash, std::move(provider), std::move(entries));
}

std::uint64_t corpus_hash(const corpus::Corpus& corpus) {
  std::uint64_t h = 0x9ae16a3b2f90404full;
  for (const auto& a : corpus.articles()) {
    h = hash64(a.id, h);
    h = hash64(a.abstract, h);
  }
  return h;
}

RetrievalIndex build_index(const corpus::Corpus& corpus, const providers::Provider& provider) {
  std::vector<std::string> abstracts;
  abstracts.reserve(corpus.size());
  for (const auto& a : corpus.articles()) {
    if (split_whitespace(a.abstract).empty()) {
      throw std::runtime_error("build_index: article " + a.id + " has an empty abstract");
    }
    abstracts.push_back(a.abstract);
  }

  std::vector<Vec> vecs;
  try {
    vecs = provider.embed_text_batch(abstracts);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("build_index: abstract embedding failed: ") + e.what());
  }

  std::vector<RetrievalIndex::Entry> entries;
  entries.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    entries.push_back({corpus.articles()[i].id, std::move(vecs[i])});
  }
  return RetrievalIndex(provider.dim(), corpus_hash(corpus), provider.describe(),
                        std::move(entries));
}

std::vector<ScoredArticle> retrieve_topk(const RetrievalIndex& index, const Vec& query_vec,
                                         int k) {
  if (k < 1) throw std::invalid_argument("retrieve_topk: k must be >= 1");
  if (index.size() == 0) throw std::invalid_argument("retrieve_topk: empty index");

  struct Scored {
    double score;
    std::size_t order;  // ingestion order, the tie-break
  };
  std::vector<Scored> scored;
  scored.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    scored.push_back({cosine(query_vec, index.entries()[i].abstract_vec), i});
  }

  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end(), [](const Scored& a, const Scored& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.order < b.order;
                    });

  std::vector<ScoredArticle> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    ScoredArticle s;
    s.article_id = index.entries()[scored[r].order].article_id;
    s.retrieval_score = scored[r].score;
    s.retrieval_rank = static_cast<int>(r + 1);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace qkf::retrieval
