#include "qkf/corpus.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "qkf/common.hpp"

namespace qkf::corpus {

using nlohmann::json;

const std::string& WhitespaceTokenizer::name() const {
  static const std::string kName = "whitespace";
  return kName;
}

std::vector<std::string> WhitespaceTokenizer::tokenize(std::string_view text) const {
  return split_whitespace(text);
}

std::string WhitespaceTokenizer::detokenize(const std::vector<std::string>& tokens,
                                            std::size_t begin, std::size_t end) const {
  return join_tokens(tokens, begin, end);
}

std::unique_ptr<Tokenizer> make_tokenizer(const std::string& name) {
  if (name == "whitespace") return std::make_unique<WhitespaceTokenizer>();
  throw std::invalid_argument("unknown tokenizer: " + name);
}

Corpus::Corpus(std::vector<Article> articles) : articles_(std::move(articles)) {
  by_id_.reserve(articles_.size());
  for (std::size_t i = 0; i < articles_.size(); ++i) {
    auto [it, inserted] = by_id_.emplace(articles_[i].id, i);
    if (!inserted) {
      throw std::runtime_error("duplicate article id: " + articles_[i].id);
    }
  }
}

const Article* Corpus::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &articles_[it->second];
}

const Article& Corpus::at(std::string_view id) const {
  const Article* a = find(id);
  if (!a) throw std::out_of_range("no such article: " + std::string(id));
  return *a;
}

namespace {

ImageInput parse_image_fields(const json& rec, const std::string& where) {
  ImageInput img;
  const bool has_vec = rec.contains("image_vec") && !rec["image_vec"].is_null();
  const bool has_ref = rec.contains("image_path") && !rec["image_path"].is_null();
  if (has_vec && has_ref) {
    throw std::runtime_error(where + ": record carries both image_vec and image_path");
  }
  if (has_vec) {
    const auto& arr = rec["image_vec"];
    if (!arr.is_array()) throw std::runtime_error(where + ": image_vec must be an array");
    std::vector<double> v;
    v.reserve(arr.size());
    for (const auto& x : arr) {
      if (!x.is_number()) throw std::runtime_error(where + ": image_vec entries must be numbers");
      double d = x.get<double>();
      if (!std::isfinite(d)) throw std::runtime_error(where + ": image_vec entry not finite");
      v.push_back(d);
    }
    img.vec = std::move(v);
  }
  if (has_ref) {
    if (!rec["image_path"].is_string())
      throw std::runtime_error(where + ": image_path must be a string");
    img.ref = rec["image_path"].get<std::string>();
  }
  return img;
}

std::string required_string(const json& rec, const char* key, const std::string& where) {
  if (!rec.contains(key) || !rec[key].is_string()) {
    throw std::runtime_error(where + ": missing or non-string field \"" + key + "\"");
  }
  return rec[key].get<std::string>();
}

}  // namespace

ParseResult parse_kb(std::istream& in) {
  ParseResult result;
  std::vector<Article> articles;
  std::string line;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;  // skip blank lines
    const std::string where = "kb line " + std::to_string(line_no);

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(where + ": malformed JSON: " + e.what());
    }
    if (!rec.is_object()) throw std::runtime_error(where + ": record is not an object");

    Article a;
    a.id = required_string(rec, "id", where);
    a.title = required_string(rec, "title", where);
    if (a.title.empty()) throw std::runtime_error(where + ": empty title (id " + a.id + ")");
    a.abstract = rec.contains("abstract") && rec["abstract"].is_string()
                     ? rec["abstract"].get<std::string>()
                     : std::string();
    a.image = parse_image_fields(rec, where);

    if (rec.contains("sections")) {
      if (!rec["sections"].is_array())
        throw std::runtime_error(where + ": sections must be an array");
      int out_index = 0;
      for (const auto& s : rec["sections"]) {
        if (!s.is_object()) throw std::runtime_error(where + ": section is not an object");
        std::string stitle = s.contains("title") && s["title"].is_string()
                                 ? s["title"].get<std::string>()
                                 : std::string();
        std::string text = required_string(s, "text", where);
        if (split_whitespace(text).empty()) {
          ++result.dropped_sections;
          result.warnings.push_back(where + ": dropped empty-passage section of article " +
                                    a.id);
          continue;
        }
        Section sec;
        sec.article_id = a.id;
        sec.section_index = out_index++;
        sec.article_title = a.title;
        sec.section_title = std::move(stitle);
        sec.passage = std::move(text);
        a.sections.push_back(std::move(sec));
      }
    }

    if (a.sections.empty() && split_whitespace(a.abstract).empty()) {
      throw std::runtime_error(where + ": article " + a.id +
                               " has no usable sections and an empty abstract");
    }
    articles.push_back(std::move(a));
  }

  try {
    result.corpus = Corpus(std::move(articles));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string("kb: ") + e.what());
  }
  return result;
}

void serialize_kb(const Corpus& corpus, std::ostream& out) {
  for (const Article& a : corpus.articles()) {
    json rec;
    rec["id"] = a.id;
    rec["title"] = a.title;
    rec["abstract"] = a.abstract;
    if (a.image.vec) rec["image_vec"] = *a.image.vec;
    if (a.image.ref) rec["image_path"] = *a.image.ref;
    json sections = json::array();
    for (const Section& s : a.sections) {
      sections.push_back({{"title", s.section_title}, {"text", s.passage}});
    }
    rec["sections"] = std::move(sections);
    out << rec.dump() << '\n';
  }
}

std::vector<Query> parse_queries(std::istream& in) {
  std::vector<Query> queries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty()) continue;
    const std::string where = "query line " + std::to_string(line_no);

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(where + ": malformed JSON: " + e.what());
    }
    if (!rec.is_object()) throw std::runtime_error(where + ": record is not an object");

    Query q;
    q.qid = required_string(rec, "qid", where);
    q.question = required_string(rec, "question", where);
    q.image = parse_image_fields(rec, where);
    if (rec.contains("answers")) {
      if (!rec["answers"].is_array())
        throw std::runtime_error(where + ": answers must be an array");
      for (const auto& ans : rec["answers"]) {
        if (!ans.is_string()) throw std::runtime_error(where + ": answers must be strings");
        q.answers.push_back(ans.get<std::string>());
      }
    }
    if (rec.contains("numeric_answer") && !rec["numeric_answer"].is_null()) {
      if (!rec["numeric_answer"].is_number())
        throw std::runtime_error(where + ": numeric_answer must be a number");
      q.numeric_answer = rec["numeric_answer"].get<double>();
    }
    if (rec.contains("evidence_article_id") && !rec["evidence_article_id"].is_null()) {
      q.evidence_article_id = required_string(rec, "evidence_article_id", where);
    }
    if (rec.contains("evidence_section_index") && !rec["evidence_section_index"].is_null()) {
      if (!rec["evidence_section_index"].is_number_integer())
        throw std::runtime_error(where + ": evidence_section_index must be an integer");
      q.evidence_section_index = rec["evidence_section_index"].get<int>();
    }
    queries.push_back(std::move(q));
  }
  return queries;
}

std::vector<Chunk> chunk_section(const Section& s, int max_tokens, const Tokenizer& tok) {
  if (max_tokens < 1) throw std::invalid_argument("chunk_section: chunk length must be >= 1");
  const std::vector<std::string> tokens = tok.tokenize(s.passage);
  const std::size_t n = tokens.size();
  if (n == 0) throw std::invalid_argument("chunk_section: section has no tokens");

  const std::size_t parts =
      (n + static_cast<std::size_t>(max_tokens) - 1) / static_cast<std::size_t>(max_tokens);
  const std::size_t base = n / parts;
  const std::size_t extra = n % parts;  // first `extra` chunks take one more token

  std::vector<Chunk> chunks;
  chunks.reserve(parts);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    Chunk c;
    c.article_id = s.article_id;
    c.section_index = s.section_index;
    c.chunk_index = static_cast<int>(i);
    c.token_begin = pos;
    c.token_end = pos + len;
    c.text = tok.detokenize(tokens, pos, pos + len);
    c.article_title = s.article_title;
    c.section_title = s.section_title;
    chunks.push_back(std::move(c));
    pos += len;
  }
  return chunks;
}

std::string render_chunk(const Chunk& c) {
  std::string out;
  out.reserve(c.text.size() + c.article_title.size() + c.section_title.size() + 40);
  out += "# Wiki Article: ";
  out += c.article_title;
  out += "\n## Section Title: ";
  out += c.section_title;
  out += "\n";
  out += c.text;
  return out;
}

}  // namespace qkf::corpus
