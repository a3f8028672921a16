#include "qkf/evalx.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "qkf/common.hpp"

namespace qkf::evalx {

using nlohmann::json;

GroundTruth truth_from_query(const corpus::Query& q) {
  GroundTruth t;
  t.qid = q.qid;
  t.answers = q.answers;
  t.numeric_answer = q.numeric_answer;
  t.evidence_article_id = q.evidence_article_id;
  return t;
}

namespace {

std::string normalize_answer(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  while (!out.empty() && (out.back() == '.' || out.back() == ',')) {
    out.pop_back();
    while (!out.empty() && out.back() == ' ') out.pop_back();
  }
  return out;
}

std::optional<double> first_number(const std::string& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    const bool starts_number =
        std::isdigit(static_cast<unsigned char>(c)) ||
        ((c == '-' || c == '+' || c == '.') && i + 1 < s.size() &&
         std::isdigit(static_cast<unsigned char>(s[i + 1])));
    if (!starts_number) continue;
    char* end = nullptr;
    const double v = std::strtod(s.c_str() + i, &end);
    if (end != s.c_str() + i && std::isfinite(v)) return v;
  }
  return std::nullopt;
}

}  // namespace

bool vqa_accuracy(const std::string& prediction, std::span<const std::string> answers) {
  if (answers.empty()) throw std::invalid_argument("vqa_accuracy: no acceptable answers");
  const std::string pred = normalize_answer(prediction);
  for (const auto& a : answers) {
    if (pred == normalize_answer(a)) return true;
  }
  return false;
}

bool relaxed_accuracy(const std::string& prediction, double truth, double tol) {
  if (tol < 0) throw std::invalid_argument("relaxed_accuracy: tol must be >= 0");
  const auto parsed = first_number(prediction);
  if (!parsed) return false;
  if (truth == 0.0) return *parsed == 0.0;
  return std::abs(*parsed - truth) <= tol * std::abs(truth);
}

double token_f1(const std::string& prediction, std::span<const std::string> answers) {
  const auto pred_tokens = split_whitespace(normalize_answer(prediction));
  double best = 0.0;
  for (const auto& a : answers) {
    const auto ans_tokens = split_whitespace(normalize_answer(a));
    if (pred_tokens.empty() && ans_tokens.empty()) {
      best = std::max(best, 1.0);
      continue;
    }
    if (pred_tokens.empty() || ans_tokens.empty()) continue;
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& t : ans_tokens) ++counts[t];
    std::size_t overlap = 0;
    for (const auto& t : pred_tokens) {
      auto it = counts.find(t);
      if (it != counts.end() && it->second > 0) {
        --it->second;
        ++overlap;
      }
    }
    if (overlap == 0) continue;
    const double precision = static_cast<double>(overlap) / pred_tokens.size();
    const double recall = static_cast<double>(overlap) / ans_tokens.size();
    best = std::max(best, 2.0 * precision * recall / (precision + recall));
  }
  return best;
}

const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::kFirstCorrect: return "first_correct";
    case Outcome::kLaterCorrect: return "later_correct";
    case Outcome::kFirstWrong: return "first_wrong";
    case Outcome::kLaterWrong: return "later_wrong";
  }
  return "unknown";
}

namespace {

bool answer_correct(const pipeline::AnswerRecord& record, const GroundTruth& truth,
                    double numeric_tol) {
  if (truth.numeric_answer && relaxed_accuracy(record.answer, *truth.numeric_answer, numeric_tol)) {
    return true;
  }
  if (!truth.answers.empty() && vqa_accuracy(record.answer, truth.answers)) return true;
  return false;
}

}  // namespace

Outcome four_way_classify(const pipeline::AnswerRecord& record, const GroundTruth& truth,
                          double numeric_tol) {
  if (!truth.evidence_article_id) {
    throw std::invalid_argument("four_way_classify: truth " + truth.qid + " has no evidence id");
  }
  if (truth.answers.empty() && !truth.numeric_answer) {
    throw std::invalid_argument("four_way_classify: truth " + truth.qid + " has no answers");
  }
  const bool first = !record.filtered.empty() &&
                     record.filtered.front().article_id == *truth.evidence_article_id;
  const bool correct = answer_correct(record, truth, numeric_tol);
  if (first) return correct ? Outcome::kFirstCorrect : Outcome::kFirstWrong;
  return correct ? Outcome::kLaterCorrect : Outcome::kLaterWrong;
}

namespace {

std::unordered_map<std::string, const GroundTruth*> index_truths(
    std::span<const GroundTruth> truths) {
  std::unordered_map<std::string, const GroundTruth*> by_qid;
  for (const auto& t : truths) {
    if (!by_qid.emplace(t.qid, &t).second) {
      throw std::invalid_argument("duplicate truth qid: " + t.qid);
    }
  }
  return by_qid;
}

const GroundTruth& truth_for(const std::unordered_map<std::string, const GroundTruth*>& by_qid,
                             const std::string& qid) {
  auto it = by_qid.find(qid);
  if (it == by_qid.end()) {
    throw std::invalid_argument("record qid " + qid + " has no matching truth");
  }
  return *it->second;
}

bool evidence_in_top_k(const std::vector<retrieval::ScoredArticle>& list,
                       const std::string& evidence, int k) {
  const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(k), list.size());
  for (std::size_t i = 0; i < limit; ++i) {
    if (list[i].article_id == evidence) return true;
  }
  return false;
}

}  // namespace

double recall_at_k(std::span<const pipeline::AnswerRecord> records,
                   std::span<const GroundTruth> truths, int k, CandidateList which) {
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  const auto by_qid = index_truths(truths);

  std::size_t hits = 0;
  std::size_t denom = 0;
  for (const auto& r : records) {
    const GroundTruth& t = truth_for(by_qid, r.qid);
    if (!t.evidence_article_id) continue;
    ++denom;
    const auto& list = which == CandidateList::kRetrieved ? r.retrieved : r.filtered;
    if (evidence_in_top_k(list, *t.evidence_article_id, k)) ++hits;
  }
  if (denom == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(denom);
}

EvalReport evaluate(std::span<const pipeline::AnswerRecord> records,
                    std::span<const GroundTruth> truths, double numeric_tol,
                    std::span<const int> ks) {
  EvalReport report;
  report.numeric_tol = numeric_tol;
  report.ks.assign(ks.begin(), ks.end());
  report.total_records = records.size();

  const auto by_qid = index_truths(truths);
  for (int k : ks) {
    report.recall_retrieved[k] = recall_at_k(records, truths, k, CandidateList::kRetrieved);
    report.recall_filtered[k] = recall_at_k(records, truths, k, CandidateList::kFiltered);
  }

  std::size_t vqa_hits = 0, vqa_total = 0;
  std::size_t relaxed_hits = 0, relaxed_total = 0;
  double f1_sum = 0.0;
  std::size_t f1_total = 0;
  for (const char* name : {"first_correct", "later_correct", "first_wrong", "later_wrong"}) {
    report.four_way_counts[name] = 0;
  }

  for (const auto& r : records) {
    const GroundTruth& t = truth_for(by_qid, r.qid);
    if (r.error_stage) {
      ++report.error_records;
      continue;
    }
    if (!t.answers.empty()) {
      ++vqa_total;
      if (vqa_accuracy(r.answer, t.answers)) ++vqa_hits;
      f1_sum += token_f1(r.answer, t.answers);
      ++f1_total;
    }
    if (t.numeric_answer) {
      ++relaxed_total;
      if (relaxed_accuracy(r.answer, *t.numeric_answer, numeric_tol)) ++relaxed_hits;
    }
    if (!t.evidence_article_id) {
      ++report.excluded_no_evidence;
      continue;
    }
    ++report.evaluable;
    const Outcome o = four_way_classify(r, t, numeric_tol);
    ++report.four_way_counts[outcome_name(o)];
    report.per_query_labels.emplace_back(r.qid, outcome_name(o));
  }

  if (vqa_total > 0) {
    report.vqa_accuracy = static_cast<double>(vqa_hits) / static_cast<double>(vqa_total);
  }
  if (relaxed_total > 0) {
    report.relaxed_accuracy =
        static_cast<double>(relaxed_hits) / static_cast<double>(relaxed_total);
  }
  if (f1_total > 0) report.mean_token_f1 = f1_sum / static_cast<double>(f1_total);
  for (const auto& [name, count] : report.four_way_counts) {
    report.four_way_pct[name] =
        report.evaluable == 0
            ? 0.0
            : 100.0 * static_cast<double>(count) / static_cast<double>(report.evaluable);
  }
  return report;
}

std::string report_to_json(const EvalReport& r) {
  json j;
  j["numeric_tol"] = r.numeric_tol;
  json rr = json::object(), rf = json::object();
  for (int k : r.ks) {
    rr["r@" + std::to_string(k)] = r.recall_retrieved.at(k);
    rf["r@" + std::to_string(k)] = r.recall_filtered.at(k);
  }
  j["recall"] = json{{"retrieval", rr}, {"fused", rf}};
  j["vqa_accuracy"] = r.vqa_accuracy ? json(*r.vqa_accuracy) : json();
  j["relaxed_accuracy"] = r.relaxed_accuracy ? json(*r.relaxed_accuracy) : json();
  j["mean_token_f1"] = r.mean_token_f1 ? json(*r.mean_token_f1) : json();
  j["four_way_counts"] = r.four_way_counts;
  j["four_way_pct"] = r.four_way_pct;
  j["counts"] = json{{"records", r.total_records},
                     {"evaluable", r.evaluable},
                     {"excluded_no_evidence", r.excluded_no_evidence},
                     {"errors", r.error_records}};
  json labels = json::array();
  for (const auto& [qid, label] : r.per_query_labels) {
    labels.push_back(json{{"qid", qid}, {"label", label}});
  }
  j["per_query"] = std::move(labels);
  return j.dump(2);
}

std::string report_table(const EvalReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << std::setw(12) << std::left << "variant";
  for (int k : r.ks) out << std::setw(10) << std::right << ("R@" + std::to_string(k));
  out << '\n';
  out << std::setw(12) << std::left << "retrieval";
  for (int k : r.ks) out << std::setw(10) << std::right << r.recall_retrieved.at(k);
  out << '\n';
  out << std::setw(12) << std::left << "fused";
  for (int k : r.ks) out << std::setw(10) << std::right << r.recall_filtered.at(k);
  out << '\n';

  auto metric = [&](const char* name, const std::optional<double>& v) {
    out << name << ": ";
    if (v) {
      out << *v;
    } else {
      out << "n/a";
    }
    out << '\n';
  };
  metric("vqa_accuracy", r.vqa_accuracy);
  metric("relaxed_accuracy", r.relaxed_accuracy);
  metric("mean_token_f1 (auxiliary)", r.mean_token_f1);
  out << "numeric tolerance: " << r.numeric_tol << '\n';

  out << "four-way (" << r.evaluable << " evaluable, " << r.excluded_no_evidence
      << " without evidence, " << r.error_records << " errors):\n";
  for (const char* name : {"first_correct", "later_correct", "first_wrong", "later_wrong"}) {
    out << "  " << std::setw(14) << std::left << name << std::setw(8) << std::right
        << r.four_way_counts.at(name) << "  " << std::setprecision(2)
        << r.four_way_pct.at(name) << "%\n"
        << std::setprecision(4);
  }
  return out.str();
}

}  // namespace qkf::evalx
