// Command-line front end for the knowledge-filtering pipeline:
// ingest / index / retrieve / filter / answer / train / eval.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "qkf/checkpoint.hpp"
#include "qkf/config.hpp"
#include "qkf/corpus.hpp"
#include "qkf/evalx.hpp"
#include "qkf/pipeline.hpp"
#include "qkf/providers.hpp"
#include "qkf/qff.hpp"
#include "qkf/qff_train.hpp"
#include "qkf/retrieval.hpp"

namespace {

using nlohmann::json;
using namespace qkf;

struct CommonArgs {
  std::string kb_path;
  std::string queries_path;
  std::string out_path;
  std::string records_path;
  std::string truth_path;
  std::optional<std::string> config_path;
  std::optional<std::string> index_path;
  std::optional<std::string> checkpoint_path;
  double eval_tol = 0.10;
  FlagOverrides flags;
};

void add_config_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat JSON config file");
  cmd->add_option("--provider", args.flags.provider_kind, "model backend: toy or http");
  cmd->add_option("--endpoint", args.flags.endpoint, "http provider endpoint URL");
  cmd->add_option("--de", args.flags.provider_dim, "provider embedding dimension");
  cmd->add_option("--k", args.flags.k, "retrieval candidates");
  cmd->add_option("--u", args.flags.top_u, "articles kept by the filter");
  cmd->add_option("--alpha", args.flags.alpha, "retrieval weight in the fused article score");
  cmd->add_option("--tau", args.flags.tau, "contrastive temperature");
  cmd->add_option("--theta", args.flags.theta, "article retention threshold");
  cmd->add_option("--lambda", args.flags.lambda, "section weight in the fused chunk score");
  cmd->add_option("--k1", args.flags.quota_first, "chunk quota of the top article");
  cmd->add_option("--k2", args.flags.quota_rest, "chunk quota of the other articles");
  cmd->add_option("--chunk-len", args.flags.chunk_len, "tokens per chunk");
  cmd->add_option("--template", args.flags.template_id, "prompt template: evqa or infoseek");
  cmd->add_option("--seed", args.flags.seed, "seed for providers and filter init");
  cmd->add_option("--workers", args.flags.workers, "batch worker threads");
  cmd->add_option("--lr", args.flags.lr, "training learning rate");
  cmd->add_option("--steps", args.flags.steps, "training steps");
  cmd->add_option("--batch", args.flags.batch, "training batch size");
  cmd->add_option("--m", args.flags.m_negatives, "negatives per training example");
  cmd->add_option("--hard", args.flags.max_hard, "hard negatives per training example");
}

PipelineConfig resolve_config(const CommonArgs& args) {
  std::vector<std::string> overrides;
  PipelineConfig cfg = load_config(args.config_path, args.flags, &overrides);
  std::cerr << "resolved config: " << cfg.to_json_string() << '\n';
  for (const auto& line : overrides) std::cerr << "override " << line << '\n';
  return cfg;
}

corpus::ParseResult load_kb(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open kb file: " + path);
  corpus::ParseResult result = corpus::parse_kb(in);
  if (result.dropped_sections > 0) {
    std::cerr << "warning: dropped " << result.dropped_sections << " empty-passage section(s)\n";
  }
  return result;
}

std::vector<corpus::Query> load_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open query file: " + path);
  return corpus::parse_queries(in);
}

retrieval::RetrievalIndex obtain_index(const corpus::Corpus& kb,
                                       const providers::Provider& provider,
                                       const std::optional<std::string>& index_path) {
  if (index_path) {
    std::ifstream in(*index_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open index file: " + *index_path);
    retrieval::RetrievalIndex index = retrieval::RetrievalIndex::load(in);
    if (index.corpus_hash() != retrieval::corpus_hash(kb)) {
      throw std::runtime_error("index " + *index_path + " was built from a different corpus");
    }
    if (index.dim() != provider.dim()) {
      throw std::runtime_error("index dim does not match provider dim");
    }
    return index;
  }
  return retrieval::build_index(kb, provider);
}

qff::QffParams obtain_params(const PipelineConfig& cfg, int provider_dim,
                             const std::optional<std::string>& checkpoint_path) {
  if (checkpoint_path) {
    std::ifstream in(*checkpoint_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + *checkpoint_path);
    return qff::load_checkpoint(in);
  }
  qff::QffDims dims;
  dims.num_queries = cfg.qff_num_queries;
  dims.dim = cfg.qff_dim;
  dims.vocab = cfg.qff_vocab;
  dims.image_dim = provider_dim;
  return qff::init_params(dims, cfg.seed);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  return out;
}

int run_ingest(const CommonArgs& args) {
  auto parsed = load_kb(args.kb_path);
  std::size_t sections = 0;
  for (const auto& a : parsed.corpus.articles()) sections += a.sections.size();
  if (!args.out_path.empty()) {
    auto out = open_out(args.out_path);
    corpus::serialize_kb(parsed.corpus, out);
  }
  std::cout << json{{"articles", parsed.corpus.size()},
                    {"sections", sections},
                    {"dropped_sections", parsed.dropped_sections}}
                   .dump()
            << '\n';
  return 0;
}

int run_index(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  auto parsed = load_kb(args.kb_path);
  auto provider = providers::make_provider(cfg.provider);
  auto index = retrieval::build_index(parsed.corpus, *provider);
  auto out = open_out(args.out_path);
  index.save(out);
  std::cout << json{{"indexed", index.size()},
                    {"dim", index.dim()},
                    {"provider", index.provider()},
                    {"out", args.out_path}}
                   .dump()
            << '\n';
  return 0;
}

int run_retrieve(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  auto parsed = load_kb(args.kb_path);
  auto provider = providers::make_provider(cfg.provider);
  auto index = obtain_index(parsed.corpus, *provider, args.index_path);
  auto queries = load_queries(args.queries_path);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.out_path.empty()) {
    file = open_out(args.out_path);
    out = &file;
  }
  for (const auto& q : queries) {
    json rec{{"qid", q.qid}};
    try {
      const auto vec = provider->embed_image(q.image);
      json list = json::array();
      for (const auto& hit : retrieval::retrieve_topk(index, vec, cfg.k)) {
        list.push_back(json{{"article_id", hit.article_id},
                            {"retrieval_rank", hit.retrieval_rank},
                            {"retrieval_score", hit.retrieval_score}});
      }
      rec["retrieved"] = std::move(list);
    } catch (const std::exception& e) {
      rec["error"] = json{{"stage", "retrieve"}, {"message", e.what()}};
    }
    *out << rec.dump() << '\n';
  }
  return 0;
}

int run_pipeline(const CommonArgs& args, bool with_generation) {
  const PipelineConfig cfg = resolve_config(args);
  auto parsed = load_kb(args.kb_path);
  auto provider = providers::make_provider(cfg.provider);
  auto index = obtain_index(parsed.corpus, *provider, args.index_path);
  auto params = obtain_params(cfg, provider->dim(), args.checkpoint_path);
  auto queries = load_queries(args.queries_path);

  pipeline::Engine engine(std::move(parsed.corpus), std::move(index), std::move(params),
                          provider, cfg);
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!args.out_path.empty()) {
    file = open_out(args.out_path);
    out = &file;
  }
  const auto summary = pipeline::run_batch(engine, queries, *out, with_generation, cfg.workers);
  std::cerr << "processed " << summary.queries << " queries (" << summary.answered
            << " answered, " << summary.errors << " errors)\n";
  return 0;
}

int run_train(const CommonArgs& args) {
  const PipelineConfig cfg = resolve_config(args);
  if (!args.checkpoint_path) {
    throw std::invalid_argument("train needs --checkpoint for the output path");
  }
  auto parsed = load_kb(args.kb_path);
  auto provider = providers::make_provider(cfg.provider);
  auto index = obtain_index(parsed.corpus, *provider, args.index_path);
  auto queries = load_queries(args.queries_path);

  std::vector<std::string> skipped;
  auto examples = qff::build_train_examples(parsed.corpus, index, *provider, queries, cfg.k,
                                            cfg.m_negatives, cfg.max_hard, cfg.seed, &skipped);
  for (const auto& s : skipped) std::cerr << "skipping " << s << '\n';
  if (examples.empty()) throw std::runtime_error("no trainable queries (need evidence fields)");

  qff::QffDims dims;
  dims.num_queries = cfg.qff_num_queries;
  dims.dim = cfg.qff_dim;
  dims.vocab = cfg.qff_vocab;
  dims.image_dim = provider->dim();
  qff::QffParams params = qff::init_params(dims, cfg.seed);

  const double initial = qff::mean_loss(params, examples, cfg.tau);
  qff::TrainConfig tc;
  tc.lr = cfg.lr;
  tc.steps = cfg.steps;
  tc.batch = cfg.batch;
  tc.tau = cfg.tau;
  tc.m_negatives = cfg.m_negatives;
  tc.max_hard = cfg.max_hard;
  tc.seed = cfg.seed;
  auto result = qff::train(std::move(params), examples, tc);
  for (std::size_t i = 0; i < result.step_losses.size(); ++i) {
    std::cerr << "step " << i << " loss " << result.step_losses[i] << '\n';
  }
  const double final_loss = qff::mean_loss(result.params, examples, cfg.tau);

  auto out = open_out(*args.checkpoint_path);
  qff::save_checkpoint(result.params, out);
  std::cout << json{{"examples", examples.size()},
                    {"skipped", skipped.size()},
                    {"steps", cfg.steps},
                    {"initial_mean_loss", initial},
                    {"final_mean_loss", final_loss},
                    {"checkpoint", *args.checkpoint_path}}
                   .dump()
            << '\n';
  return 0;
}

int run_eval(const CommonArgs& args) {
  std::ifstream rec_in(args.records_path);
  if (!rec_in) throw std::runtime_error("cannot open records file: " + args.records_path);
  std::vector<pipeline::AnswerRecord> records;
  std::string line;
  while (std::getline(rec_in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("records file: malformed JSON line");
    if (j.contains("summary")) continue;  // trailing batch summary
    records.push_back(pipeline::answer_record_from_json(line));
  }

  std::ifstream truth_in(args.truth_path);
  if (!truth_in) throw std::runtime_error("cannot open truth file: " + args.truth_path);
  std::vector<evalx::GroundTruth> truths;
  for (const auto& q : corpus::parse_queries(truth_in)) {
    truths.push_back(evalx::truth_from_query(q));
  }

  const std::vector<int> ks{1, 5, 10, 20};
  const auto report = evalx::evaluate(records, truths, args.eval_tol, ks);
  std::cout << evalx::report_table(report);
  const std::string out_path = args.out_path.empty() ? "report.json" : args.out_path;
  auto out = open_out(out_path);
  out << evalx::report_to_json(report) << '\n';
  std::cerr << "report written to " << out_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"question-focused knowledge filtering for retrieval-augmented QA"};
  app.require_subcommand(1);

  CommonArgs args;
  int (*action)(const CommonArgs&) = nullptr;
  bool generate = true;

  auto* ingest = app.add_subcommand("ingest", "validate and normalize a KB file");
  ingest->add_option("--kb", args.kb_path, "KB jsonl file")->required();
  ingest->add_option("--out", args.out_path, "normalized KB output path");
  ingest->callback([&] { action = run_ingest; });

  auto* index = app.add_subcommand("index", "build and persist the retrieval index");
  index->add_option("--kb", args.kb_path, "KB jsonl file")->required();
  index->add_option("--out", args.out_path, "index output path")->required();
  add_config_flags(index, args);
  index->callback([&] { action = run_index; });

  auto* retrieve = app.add_subcommand("retrieve", "dump top-k retrieval candidates");
  retrieve->add_option("--kb", args.kb_path, "KB jsonl file")->required();
  retrieve->add_option("--queries", args.queries_path, "query jsonl file")->required();
  retrieve->add_option("--out", args.out_path, "output path (default stdout)");
  retrieve->add_option("--index", args.index_path, "persisted index to load");
  add_config_flags(retrieve, args);
  retrieve->callback([&] { action = run_retrieve; });

  auto* filter = app.add_subcommand("filter", "filter and select chunks without generation");
  filter->add_option("--kb", args.kb_path, "KB jsonl file")->required();
  filter->add_option("--queries", args.queries_path, "query jsonl file")->required();
  filter->add_option("--out", args.out_path, "output path (default stdout)");
  filter->add_option("--index", args.index_path, "persisted index to load");
  filter->add_option("--checkpoint", args.checkpoint_path, "filter checkpoint to load");
  add_config_flags(filter, args);
  filter->callback([&] {
    action = nullptr;
    generate = false;
  });

  auto* answer = app.add_subcommand("answer", "run the full pipeline");
  answer->add_option("--kb", args.kb_path, "KB jsonl file")->required();
  answer->add_option("--queries", args.queries_path, "query jsonl file")->required();
  answer->add_option("--out", args.out_path, "output path (default stdout)");
  answer->add_option("--index", args.index_path, "persisted index to load");
  answer->add_option("--checkpoint", args.checkpoint_path, "filter checkpoint to load");
  add_config_flags(answer, args);
  answer->callback([&] {
    action = nullptr;
    generate = true;
  });

  auto* train = app.add_subcommand("train", "train the filter on evidence-annotated queries");
  train->add_option("--kb", args.kb_path, "KB jsonl file")->required();
  train->add_option("--queries", args.queries_path, "query jsonl file")->required();
  train->add_option("--checkpoint", args.checkpoint_path, "checkpoint output path")->required();
  train->add_option("--index", args.index_path, "persisted index to load");
  add_config_flags(train, args);
  train->callback([&] { action = run_train; });

  auto* eval = app.add_subcommand("eval", "score answer records against ground truth");
  eval->add_option("--records", args.records_path, "answer records jsonl")->required();
  eval->add_option("--truth", args.truth_path, "truth jsonl (query file format)")->required();
  eval->add_option("--out", args.out_path, "report JSON path (default report.json)");
  eval->add_option("--tol", args.eval_tol, "relaxed accuracy tolerance");
  eval->callback([&] { action = run_eval; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (action) return action(args);
    if (app.got_subcommand(filter)) return run_pipeline(args, false);
    if (app.got_subcommand(answer)) return run_pipeline(args, generate);
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
