#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qkf/providers.hpp"

namespace qkf {

/// Every knob of the pipeline with its default value. Resolution order is
/// flag > config file > default.
struct PipelineConfig {
  int k = 20;            // retrieval candidates
  int top_u = 3;         // articles kept by the filter
  double alpha = 0.9;    // retrieval weight in the fused article score
  double tau = 0.07;     // contrastive temperature
  double theta = 0.02;   // article retention threshold
  double lambda = 0.2;   // section weight in the fused chunk score
  int chunk_len = 512;   // tokens per chunk
  int quota_first = 3;   // k1
  int quota_rest = 1;    // k2
  std::string template_id = "evqa";
  std::string tokenizer = "whitespace";
  std::uint64_t seed = 7;
  int workers = 1;

  int qff_num_queries = 8;
  int qff_dim = 32;
  int qff_vocab = 4096;

  double lr = 0.01;
  int steps = 200;
  int batch = 4;
  int m_negatives = 15;
  int max_hard = 3;

  providers::ProviderConfig provider;

  void validate() const;
  std::string to_json_string() const;
};

/// Values the user set explicitly on the command line; unset fields fall
/// through to the config file and then the defaults.
struct FlagOverrides {
  std::optional<int> k, top_u, chunk_len, quota_first, quota_rest, workers;
  std::optional<double> alpha, tau, theta, lambda, lr;
  std::optional<int> steps, batch, m_negatives, max_hard;
  std::optional<std::string> template_id, tokenizer, provider_kind, endpoint;
  std::optional<std::uint64_t> seed;
  std::optional<int> provider_dim;
};

/// Builds the effective config. `override_log`, when given, receives one
/// line per non-default setting so startup can show what changed.
PipelineConfig load_config(const std::optional<std::string>& file_path,
                           const FlagOverrides& flags,
                           std::vector<std::string>* override_log = nullptr);

}  // namespace qkf
