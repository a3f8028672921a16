#include "qkf/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace qkf::pipeline {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

constexpr const char* kEvqaSystem =
    "Answer the encyclopedic question about the given image. Don't mention the visual content "
    "of image in your output. Directly output the answer of the question according to the "
    "context.\n"
    "You are a helpful assistant for answering encyclopedic questions.\n"
    "If the context does not contain the information required to answer the question, you "
    "should answer the question using internal model knowledge.";

constexpr const char* kEvqaClosing = "The answer is:";

constexpr const char* kInfoseekSystem =
    "Answer the encyclopedic question about the given image. Don't mention the visual content "
    "of image in your output. Directly output the answer of the question according to the "
    "context.\n"
    "You are a helpful assistant for answering encyclopedic questions. Do not answer anything "
    "else.\n"
    "If you need to answer questions about numbers or time, please output the corresponding "
    "numerical format directly. If the context does not contain the information required to "
    "answer the question, you should answer the question using internal model knowledge.\n"
    "There is an example:\n"
    "- Context: # Wiki Article: Dolomites\n"
    "## Section Title: Dolomites\n"
    "The Dolomites, also known as the Dolomite Mountains, Dolomite Alps or Dolomitic Alps, are "
    "a mountain range located in northeastern Italy. The Dolomites are located in the regions "
    "of Veneto, Trentino-Alto Adige/Südtirol and Friuli Venezia Giulia, covering an area "
    "shared between the provinces of Belluno, Vicenza, Verona, Trentino, South Tyrol, Udine "
    "and Pordenone.\n"
    "- Question: Which city or region does this mountain locate in?\n"
    "Just answer the questions, no explanations needed. Short answer is: Province of Belluno";

constexpr const char* kInfoseekClosing =
    "Just answer the questions, no explanations needed. Short answer is:";

json timings_to_json(const StageTimings& t) {
  return json{{"retrieve", t.retrieve_ms},
              {"filter", t.filter_ms},
              {"select", t.select_ms},
              {"generate", t.generate_ms},
              {"total", t.total_ms}};
}

StageTimings timings_from_json(const json& j) {
  StageTimings t;
  t.retrieve_ms = j.value("retrieve", 0.0);
  t.filter_ms = j.value("filter", 0.0);
  t.select_ms = j.value("select", 0.0);
  t.generate_ms = j.value("generate", 0.0);
  t.total_ms = j.value("total", 0.0);
  return t;
}

json scored_article_to_json(const retrieval::ScoredArticle& a, bool with_filter_fields) {
  json j{{"article_id", a.article_id},
         {"retrieval_rank", a.retrieval_rank},
         {"retrieval_score", a.retrieval_score}};
  if (with_filter_fields) {
    j["qff_score"] = a.qff_score;
    j["fused_score"] = a.fused_score;
    j["best_section"] = a.best_section;
    j["section_scores"] = a.section_scores;
  }
  return j;
}

retrieval::ScoredArticle scored_article_from_json(const json& j) {
  retrieval::ScoredArticle a;
  a.article_id = j.at("article_id").get<std::string>();
  a.retrieval_rank = j.at("retrieval_rank").get<int>();
  a.retrieval_score = j.at("retrieval_score").get<double>();
  a.qff_score = j.value("qff_score", 0.0);
  a.fused_score = j.value("fused_score", 0.0);
  a.best_section = j.value("best_section", -1);
  if (j.contains("section_scores")) {
    a.section_scores = j["section_scores"].get<std::vector<double>>();
  }
  return a;
}

json chunk_to_json(const cda::ScoredChunk& c) {
  return json{{"article_id", c.chunk.article_id},
              {"section_index", c.chunk.section_index},
              {"chunk_index", c.chunk.chunk_index},
              {"article_rank", c.article_rank},
              {"section_score", c.section_score},
              {"chunk_score", c.chunk_score},
              {"final_score", c.final_score},
              {"text", c.chunk.text},
              {"article_title", c.chunk.article_title},
              {"section_title", c.chunk.section_title}};
}

cda::ScoredChunk chunk_from_json(const json& j) {
  cda::ScoredChunk c;
  c.chunk.article_id = j.at("article_id").get<std::string>();
  c.chunk.section_index = j.at("section_index").get<int>();
  c.chunk.chunk_index = j.at("chunk_index").get<int>();
  c.chunk.text = j.value("text", "");
  c.chunk.article_title = j.value("article_title", "");
  c.chunk.section_title = j.value("section_title", "");
  c.article_rank = j.at("article_rank").get<int>();
  c.section_score = j.at("section_score").get<double>();
  c.chunk_score = j.at("chunk_score").get<double>();
  c.final_score = j.at("final_score").get<double>();
  return c;
}

}  // namespace

std::string build_prompt(const std::string& question, std::span<const cda::ScoredChunk> chunks,
                         const std::string& template_id) {
  const char* system = nullptr;
  const char* closing = nullptr;
  if (template_id == "evqa") {
    system = kEvqaSystem;
    closing = kEvqaClosing;
  } else if (template_id == "infoseek") {
    system = kInfoseekSystem;
    closing = kInfoseekClosing;
  } else {
    throw std::invalid_argument("unknown prompt template: " + template_id);
  }

  std::string context;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (i > 0) context += "\n\n";
    context += corpus::render_chunk(chunks[i].chunk);
  }

  std::string prompt;
  prompt += system;
  prompt += "\n\n- Context: ";
  prompt += context;
  prompt += "\n- Question: ";
  prompt += question;
  prompt += "\n";
  prompt += closing;
  return prompt;
}

std::string answer_record_to_json(const AnswerRecord& r) {
  json j;
  j["qid"] = r.qid;
  j["question"] = r.question;
  if (r.error_stage) {
    j["error"] = json{{"stage", *r.error_stage}, {"message", r.error_message.value_or("")}};
  }
  json retrieved = json::array();
  for (const auto& a : r.retrieved) retrieved.push_back(scored_article_to_json(a, false));
  j["retrieved"] = std::move(retrieved);
  json filtered = json::array();
  for (const auto& a : r.filtered) filtered.push_back(scored_article_to_json(a, true));
  j["filtered"] = std::move(filtered);
  j["retained"] = r.retained;
  json chunks = json::array();
  for (const auto& c : r.chunks) chunks.push_back(chunk_to_json(c));
  j["chunks"] = std::move(chunks);
  j["prompt"] = r.prompt;
  j["answer"] = r.answer;
  j["timings_ms"] = timings_to_json(r.timings);
  return j.dump();
}

AnswerRecord answer_record_from_json(const std::string& line) {
  json j = json::parse(line);
  AnswerRecord r;
  r.qid = j.at("qid").get<std::string>();
  r.question = j.value("question", "");
  if (j.contains("error")) {
    r.error_stage = j["error"].value("stage", "unknown");
    r.error_message = j["error"].value("message", "");
  }
  for (const auto& a : j.value("retrieved", json::array())) {
    r.retrieved.push_back(scored_article_from_json(a));
  }
  for (const auto& a : j.value("filtered", json::array())) {
    r.filtered.push_back(scored_article_from_json(a));
  }
  r.retained = j.value("retained", std::vector<std::string>{});
  for (const auto& c : j.value("chunks", json::array())) {
    r.chunks.push_back(chunk_from_json(c));
  }
  r.prompt = j.value("prompt", "");
  r.answer = j.value("answer", "");
  if (j.contains("timings_ms")) r.timings = timings_from_json(j["timings_ms"]);
  return r;
}

Engine::Engine(corpus::Corpus corpus, retrieval::RetrievalIndex index, qff::QffParams params,
               std::shared_ptr<providers::Provider> provider, PipelineConfig config)
    : corpus_(std::move(corpus)),
      index_(std::move(index)),
      params_(std::move(params)),
      provider_(std::move(provider)),
      config_(std::move(config)),
      tokenizer_(corpus::make_tokenizer(config_.tokenizer)) {
  config_.validate();
  if (params_.dims.image_dim != provider_->dim()) {
    throw std::invalid_argument("filter image_dim " + std::to_string(params_.dims.image_dim) +
                                " does not match provider dim " +
                                std::to_string(provider_->dim()));
  }
  if (index_.dim() != provider_->dim()) {
    throw std::invalid_argument("index dim " + std::to_string(index_.dim()) +
                                " does not match provider dim " +
                                std::to_string(provider_->dim()));
  }
}

std::optional<qff::Vec> Engine::article_image(const corpus::Article& article) const {
  {
    std::lock_guard lk(image_mutex_);
    auto it = image_cache_.find(article.id);
    if (it != image_cache_.end()) return it->second;
  }
  std::optional<qff::Vec> img;
  if (!article.image.empty()) img = provider_->embed_image(article.image);
  std::lock_guard lk(image_mutex_);
  return image_cache_.emplace(article.id, std::move(img)).first->second;
}

AnswerRecord Engine::answer(const corpus::Query& query, bool with_generation) const {
  AnswerRecord record;
  record.qid = query.qid;
  record.question = query.question;
  const auto total_start = Clock::now();

  std::string stage = "retrieve";
  try {
    auto stage_start = Clock::now();
    const qff::Vec query_image = provider_->embed_image(query.image);
    record.retrieved = retrieval::retrieve_topk(index_, query_image, config_.k);
    record.timings.retrieve_ms = ms_since(stage_start);

    stage = "filter";
    stage_start = Clock::now();
    record.filtered = qff::rerank_articles(
        params_, query.question, query_image, record.retrieved, corpus_,
        [this](const corpus::Article& a) { return article_image(a); },
        static_cast<int>(record.retrieved.size()), config_.alpha);
    record.timings.filter_ms = ms_since(stage_start);

    stage = "select";
    stage_start = Clock::now();
    const auto retained = cda::select_articles(record.filtered, config_.top_u, config_.theta);
    for (const auto& a : retained) record.retained.push_back(a.article_id);
    const auto scored = cda::score_chunks(
        retained, corpus_, query.question,
        [this](const std::string& q, const std::string& c) { return provider_->rerank(q, c); },
        config_.lambda, config_.chunk_len, *tokenizer_);
    record.chunks = cda::select_chunks(scored, static_cast<int>(retained.size()),
                                       config_.quota_first, config_.quota_rest);
    record.timings.select_ms = ms_since(stage_start);

    if (with_generation) {
      stage = "generate";
      stage_start = Clock::now();
      record.prompt = build_prompt(query.question, record.chunks, config_.template_id);
      record.answer = provider_->generate(record.prompt, query.image.ref);
      record.timings.generate_ms = ms_since(stage_start);
    }
  } catch (const std::exception& e) {
    record.error_stage = stage;
    record.error_message = e.what();
  }
  record.timings.total_ms = ms_since(total_start);
  return record;
}

BatchSummary run_batch(const Engine& engine, std::span<const corpus::Query> queries,
                       std::ostream& out, bool with_generation, int workers) {
  if (workers < 1) throw std::invalid_argument("run_batch: workers must be >= 1");

  std::vector<AnswerRecord> records(queries.size());
  if (workers == 1 || queries.size() <= 1) {
    for (std::size_t i = 0; i < queries.size(); ++i) {
      records[i] = engine.answer(queries[i], with_generation);
    }
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < queries.size(); i = next.fetch_add(1)) {
        records[i] = engine.answer(queries[i], with_generation);
      }
    };
    std::vector<std::thread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(workers), queries.size());
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  BatchSummary summary;
  summary.queries = queries.size();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const AnswerRecord& r = records[i];
    out << answer_record_to_json(r) << '\n';
    if (r.error_stage) {
      ++summary.errors;
    } else {
      ++summary.answered;
    }
    summary.mean_timings.retrieve_ms += r.timings.retrieve_ms;
    summary.mean_timings.filter_ms += r.timings.filter_ms;
    summary.mean_timings.select_ms += r.timings.select_ms;
    summary.mean_timings.generate_ms += r.timings.generate_ms;
    summary.mean_timings.total_ms += r.timings.total_ms;
  }
  if (!records.empty()) {
    const auto n = static_cast<double>(records.size());
    summary.mean_timings.retrieve_ms /= n;
    summary.mean_timings.filter_ms /= n;
    summary.mean_timings.select_ms /= n;
    summary.mean_timings.generate_ms /= n;
    summary.mean_timings.total_ms /= n;
  }

  json j;
  j["summary"] = json{{"queries", summary.queries},
                      {"answered", summary.answered},
                      {"errors", summary.errors},
                      {"mean_timings_ms", timings_to_json(summary.mean_timings)},
                      {"config", json::parse(engine.config().to_json_string())}};
  out << j.dump() << '\n';
  return summary;
}

}  // namespace qkf::pipeline
