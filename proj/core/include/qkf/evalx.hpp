#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qkf/pipeline.hpp"

namespace qkf::evalx {

struct GroundTruth {
  std::string qid;
  std::vector<std::string> answers;
  std::optional<double> numeric_answer;
  std::optional<std::string> evidence_article_id;
};

GroundTruth truth_from_query(const corpus::Query& q);

/// Case, surrounding-whitespace and terminal-punctuation insensitive match
/// against any acceptable answer.
bool vqa_accuracy(const std::string& prediction, std::span<const std::string> answers);

/// Parses the first numeric literal of the prediction; correct when within
/// tol * |truth| of the truth (exact match required for truth == 0).
bool relaxed_accuracy(const std::string& prediction, double truth, double tol);

/// Token-level F1 against the best acceptable answer (auxiliary score).
double token_f1(const std::string& prediction, std::span<const std::string> answers);

/// Crosses "evidence article ranked first in the fused ordering" with
/// "final answer correct".
enum class Outcome { kFirstCorrect, kLaterCorrect, kFirstWrong, kLaterWrong };
const char* outcome_name(Outcome o);

Outcome four_way_classify(const pipeline::AnswerRecord& record, const GroundTruth& truth,
                          double numeric_tol);

/// Fraction of evidence-annotated queries whose evidence article appears in
/// the first k entries of the chosen candidate list.
enum class CandidateList { kRetrieved, kFiltered };
double recall_at_k(std::span<const pipeline::AnswerRecord> records,
                   std::span<const GroundTruth> truths, int k, CandidateList which);

struct EvalReport {
  std::vector<int> ks;
  std::map<int, double> recall_retrieved;
  std::map<int, double> recall_filtered;
  std::optional<double> vqa_accuracy;      // over queries with string answers
  std::optional<double> relaxed_accuracy;  // over queries with numeric answers
  std::optional<double> mean_token_f1;     // auxiliary, over queries with answers
  std::map<std::string, std::size_t> four_way_counts;
  std::map<std::string, double> four_way_pct;
  std::vector<std::pair<std::string, std::string>> per_query_labels;  // qid -> label
  std::size_t total_records = 0;
  std::size_t evaluable = 0;             // non-error records with evidence annotation
  std::size_t excluded_no_evidence = 0;
  std::size_t error_records = 0;
  double numeric_tol = 0.10;
};

/// Joins records with truths by qid (a record without a truth is an error),
/// accumulates exact integer counts and divides once at the end.
EvalReport evaluate(std::span<const pipeline::AnswerRecord> records,
                    std::span<const GroundTruth> truths, double numeric_tol,
                    std::span<const int> ks);

std::string report_to_json(const EvalReport& report);

/// Aligned text table: one recall row per candidate list, then the accuracy
/// and four-way lines.
std::string report_table(const EvalReport& report);

}  // namespace qkf::evalx
