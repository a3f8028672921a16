#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qkf::corpus {

/// Image attached to an article or query: either a precomputed vector in
/// provider space or an opaque reference resolved by the image embedder.
struct ImageInput {
  std::optional<std::vector<double>> vec;
  std::optional<std::string> ref;

  bool empty() const { return !vec && !ref; }
};

/// A titled passage plus the metadata it inherits from its article.
struct Section {
  std::string article_id;
  int section_index = 0;
  std::string article_title;
  std::string section_title;
  std::string passage;
};

struct Article {
  std::string id;
  std::string title;
  std::string abstract;
  ImageInput image;
  std::vector<Section> sections;
};

/// A contiguous token slice of one section. Carries the section metadata so
/// rendered chunks keep their structural context.
struct Chunk {
  std::string article_id;
  int section_index = 0;
  int chunk_index = 0;
  std::size_t token_begin = 0;  // half-open span over the section tokens
  std::size_t token_end = 0;
  std::string text;
  std::string article_title;
  std::string section_title;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual const std::string& name() const = 0;
  virtual std::vector<std::string> tokenize(std::string_view text) const = 0;
  /// Inverse of tokenize for canonical single-spaced text.
  virtual std::string detokenize(const std::vector<std::string>& tokens,
                                 std::size_t begin, std::size_t end) const = 0;
};

/// Deterministic whitespace tokenizer, the built-in default.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  const std::string& name() const override;
  std::vector<std::string> tokenize(std::string_view text) const override;
  std::string detokenize(const std::vector<std::string>& tokens,
                         std::size_t begin, std::size_t end) const override;
};

/// Factory by name ("whitespace"). Unknown names throw.
std::unique_ptr<Tokenizer> make_tokenizer(const std::string& name);

/// Immutable article store preserving ingestion order.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Article> articles);

  const std::vector<Article>& articles() const { return articles_; }
  std::size_t size() const { return articles_.size(); }
  bool empty() const { return articles_.empty(); }

  const Article* find(std::string_view id) const;
  const Article& at(std::string_view id) const;  // throws if absent

 private:
  std::vector<Article> articles_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

struct ParseResult {
  Corpus corpus;
  std::size_t dropped_sections = 0;  // empty-passage sections removed
  std::vector<std::string> warnings;
};

/// Parses line-delimited JSON articles. Malformed records and duplicate ids
/// throw std::runtime_error naming the offending line / id. Sections whose
/// passage has no tokens are dropped and counted.
ParseResult parse_kb(std::istream& in);

/// Writes the corpus back out in the same line-delimited format.
/// parse_kb(serialize_kb(c)) is structurally equal to c.
void serialize_kb(const Corpus& corpus, std::ostream& out);

/// One evaluation query; doubles as the ground-truth record for eval.
struct Query {
  std::string qid;
  std::string question;
  ImageInput image;
  std::vector<std::string> answers;
  std::optional<double> numeric_answer;
  std::optional<std::string> evidence_article_id;
  std::optional<int> evidence_section_index;
};

std::vector<Query> parse_queries(std::istream& in);

/// Splits a section into ceil(n/L) chunks with balanced token counts
/// (sizes differ by at most one). Spans are contiguous and cover [0, n).
std::vector<Chunk> chunk_section(const Section& s, int max_tokens,
                                 const Tokenizer& tok);

/// "# Wiki Article: {title}\n## Section Title: {title}\n{text}"
std::string render_chunk(const Chunk& c);

}  // namespace qkf::corpus
