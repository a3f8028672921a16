#include "qkf/config.hpp"

#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace qkf {

using nlohmann::json;

void PipelineConfig::validate() const {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (top_u < 1) throw std::invalid_argument("u must be >= 1");
  if (alpha < 0 || alpha > 1) throw std::invalid_argument("alpha must lie in [0, 1]");
  if (tau <= 0) throw std::invalid_argument("tau must be > 0");
  if (theta < 0) throw std::invalid_argument("theta must be >= 0");
  if (lambda < 0 || lambda > 1) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (chunk_len < 1) throw std::invalid_argument("chunk-len must be >= 1");
  if (quota_rest < 1) throw std::invalid_argument("k2 must be >= 1");
  if (quota_first < quota_rest) throw std::invalid_argument("k1 must be >= k2");
  if (template_id != "evqa" && template_id != "infoseek") {
    throw std::invalid_argument("template must be evqa or infoseek");
  }
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (qff_num_queries < 1) throw std::invalid_argument("qff-n must be >= 1");
  if (qff_dim < 1) throw std::invalid_argument("qff-d must be >= 1");
  if (qff_vocab < 1) throw std::invalid_argument("qff-vocab must be >= 1");
  if (lr < 0) throw std::invalid_argument("lr must be >= 0");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (m_negatives < 1) throw std::invalid_argument("m must be >= 1");
  if (max_hard < 0) throw std::invalid_argument("hard must be >= 0");
  provider.validate();
}

std::string PipelineConfig::to_json_string() const {
  json j{{"k", k},
         {"u", top_u},
         {"alpha", alpha},
         {"tau", tau},
         {"theta", theta},
         {"lambda", lambda},
         {"chunk_len", chunk_len},
         {"k1", quota_first},
         {"k2", quota_rest},
         {"template", template_id},
         {"tokenizer", tokenizer},
         {"seed", seed},
         {"workers", workers},
         {"qff_n", qff_num_queries},
         {"qff_d", qff_dim},
         {"qff_vocab", qff_vocab},
         {"lr", lr},
         {"steps", steps},
         {"batch", batch},
         {"m", m_negatives},
         {"hard", max_hard},
         {"provider", provider.kind == providers::ProviderKind::kToy ? "toy" : "http"},
         {"de", provider.dim}};
  if (provider.kind == providers::ProviderKind::kHttp) {
    j["endpoint"] = provider.endpoint;
    j["timeout_ms"] = provider.timeout_ms;
    j["max_inflight"] = provider.max_inflight;
    j["max_batch"] = provider.max_batch;
  }
  return j.dump();
}

namespace {

providers::ProviderKind parse_kind(const std::string& s) {
  if (s == "toy") return providers::ProviderKind::kToy;
  if (s == "http") return providers::ProviderKind::kHttp;
  throw std::invalid_argument("provider must be toy or http");
}

void apply_file(PipelineConfig& cfg, const json& j, std::vector<std::string>* log) {
  auto note = [&](const std::string& key, const json& value) {
    if (log) log->push_back("config file: " + key + " = " + value.dump());
  };
  for (const auto& [key, value] : j.items()) {
    note(key, value);
    if (key == "k") cfg.k = value.get<int>();
    else if (key == "u") cfg.top_u = value.get<int>();
    else if (key == "alpha") cfg.alpha = value.get<double>();
    else if (key == "tau") cfg.tau = value.get<double>();
    else if (key == "theta") cfg.theta = value.get<double>();
    else if (key == "lambda") cfg.lambda = value.get<double>();
    else if (key == "chunk_len") cfg.chunk_len = value.get<int>();
    else if (key == "k1") cfg.quota_first = value.get<int>();
    else if (key == "k2") cfg.quota_rest = value.get<int>();
    else if (key == "template") cfg.template_id = value.get<std::string>();
    else if (key == "tokenizer") cfg.tokenizer = value.get<std::string>();
    else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
    else if (key == "workers") cfg.workers = value.get<int>();
    else if (key == "qff_n") cfg.qff_num_queries = value.get<int>();
    else if (key == "qff_d") cfg.qff_dim = value.get<int>();
    else if (key == "qff_vocab") cfg.qff_vocab = value.get<int>();
    else if (key == "lr") cfg.lr = value.get<double>();
    else if (key == "steps") cfg.steps = value.get<int>();
    else if (key == "batch") cfg.batch = value.get<int>();
    else if (key == "m") cfg.m_negatives = value.get<int>();
    else if (key == "hard") cfg.max_hard = value.get<int>();
    else if (key == "provider") cfg.provider.kind = parse_kind(value.get<std::string>());
    else if (key == "de") cfg.provider.dim = value.get<int>();
    else if (key == "endpoint") cfg.provider.endpoint = value.get<std::string>();
    else if (key == "timeout_ms") cfg.provider.timeout_ms = value.get<int>();
    else if (key == "max_inflight") cfg.provider.max_inflight = value.get<int>();
    else if (key == "max_batch") cfg.provider.max_batch = value.get<int>();
    else throw std::invalid_argument("unknown config key: " + key);
  }
}

}  // namespace

PipelineConfig load_config(const std::optional<std::string>& file_path,
                           const FlagOverrides& flags,
                           std::vector<std::string>* override_log) {
  PipelineConfig cfg;

  if (file_path) {
    std::ifstream in(*file_path);
    if (!in) throw std::runtime_error("cannot open config file: " + *file_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("config file " + *file_path + ": " + e.what());
    }
    if (!j.is_object()) throw std::runtime_error("config file must hold a JSON object");
    apply_file(cfg, j, override_log);
  }

  auto set = [&](auto& field, const auto& opt, const char* name) {
    if (opt) {
      field = *opt;
      if (override_log) override_log->push_back(std::string("flag: ") + name);
    }
  };
  set(cfg.k, flags.k, "--k");
  set(cfg.top_u, flags.top_u, "--u");
  set(cfg.alpha, flags.alpha, "--alpha");
  set(cfg.tau, flags.tau, "--tau");
  set(cfg.theta, flags.theta, "--theta");
  set(cfg.lambda, flags.lambda, "--lambda");
  set(cfg.chunk_len, flags.chunk_len, "--chunk-len");
  set(cfg.quota_first, flags.quota_first, "--k1");
  set(cfg.quota_rest, flags.quota_rest, "--k2");
  set(cfg.template_id, flags.template_id, "--template");
  set(cfg.tokenizer, flags.tokenizer, "--tokenizer");
  set(cfg.seed, flags.seed, "--seed");
  set(cfg.workers, flags.workers, "--workers");
  set(cfg.lr, flags.lr, "--lr");
  set(cfg.steps, flags.steps, "--steps");
  set(cfg.batch, flags.batch, "--batch");
  set(cfg.m_negatives, flags.m_negatives, "--m");
  set(cfg.max_hard, flags.max_hard, "--hard");
  set(cfg.provider.dim, flags.provider_dim, "--de");
  if (flags.provider_kind) {
    cfg.provider.kind = parse_kind(*flags.provider_kind);
    if (override_log) override_log->push_back("flag: --provider");
  }
  if (flags.endpoint) {
    cfg.provider.endpoint = *flags.endpoint;
    if (override_log) override_log->push_back("flag: --endpoint");
  } else if (cfg.provider.endpoint.empty()) {
    if (const char* env = std::getenv("QKF_ENDPOINT")) {
      cfg.provider.endpoint = env;
      if (override_log && cfg.provider.kind == providers::ProviderKind::kHttp) {
        override_log->push_back("env: QKF_ENDPOINT");
      }
    }
  }
  cfg.provider.seed = cfg.seed;

  cfg.validate();
  return cfg;
}

}  // namespace qkf
