#pragma once

#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "qkf/cda.hpp"
#include "qkf/config.hpp"
#include "qkf/corpus.hpp"
#include "qkf/providers.hpp"
#include "qkf/qff.hpp"
#include "qkf/retrieval.hpp"

namespace qkf::pipeline {

struct StageTimings {
  double retrieve_ms = 0.0;
  double filter_ms = 0.0;
  double select_ms = 0.0;
  double generate_ms = 0.0;
  double total_ms = 0.0;
};

/// Full per-query trace: every candidate list with its scores, the selected
/// chunks, the prompt and the generated answer. A failed stage leaves
/// error_stage/error_message set and the later fields empty.
struct AnswerRecord {
  std::string qid;
  std::string question;
  std::vector<retrieval::ScoredArticle> retrieved;  // top-k, retrieval scores
  std::vector<retrieval::ScoredArticle> filtered;   // all candidates in fused order
  std::vector<std::string> retained;                // ids kept by the threshold gate
  std::vector<cda::ScoredChunk> chunks;
  std::string prompt;
  std::string answer;
  StageTimings timings;
  std::optional<std::string> error_stage;
  std::optional<std::string> error_message;
};

/// Assembles the generator prompt for the given template id ("evqa" or
/// "infoseek"): system preamble, context block with the rendered chunks
/// joined by blank lines, question line and the template's closing line.
std::string build_prompt(const std::string& question, std::span<const cda::ScoredChunk> chunks,
                         const std::string& template_id);

std::string answer_record_to_json(const AnswerRecord& record);
AnswerRecord answer_record_from_json(const std::string& line);

/// Read-only bundle of corpus, index, filter params and provider; safe for
/// concurrent answer() calls.
class Engine {
 public:
  Engine(corpus::Corpus corpus, retrieval::RetrievalIndex index, qff::QffParams params,
         std::shared_ptr<providers::Provider> provider, PipelineConfig config);

  /// Runs retrieve -> filter -> select (-> prompt -> generate unless
  /// with_generation is false). Stage failures produce an error record
  /// rather than throwing.
  AnswerRecord answer(const corpus::Query& query, bool with_generation = true) const;

  const corpus::Corpus& kb() const { return corpus_; }
  const PipelineConfig& config() const { return config_; }
  const qff::QffParams& params() const { return params_; }

 private:
  std::optional<qff::Vec> article_image(const corpus::Article& article) const;

  corpus::Corpus corpus_;
  retrieval::RetrievalIndex index_;
  qff::QffParams params_;
  std::shared_ptr<providers::Provider> provider_;
  PipelineConfig config_;
  std::unique_ptr<corpus::Tokenizer> tokenizer_;
  mutable std::unordered_map<std::string, std::optional<qff::Vec>> image_cache_;
  mutable std::mutex image_mutex_;
};

struct BatchSummary {
  std::size_t queries = 0;
  std::size_t answered = 0;
  std::size_t errors = 0;
  StageTimings mean_timings;
};

/// One record line per query in input order, then a closing line keyed
/// "summary" with counts, mean stage timings and the resolved config.
/// Queries run on up to `workers` threads.
BatchSummary run_batch(const Engine& engine, std::span<const corpus::Query> queries,
                       std::ostream& out, bool with_generation, int workers);

}  // namespace qkf::pipeline
