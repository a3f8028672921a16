#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qkf/providers.hpp"
#include "qkf/qff.hpp"
#include "qkf/retrieval.hpp"

namespace qkf::qff {

struct TrainConfig {
  double lr = 1e-2;
  int steps = 200;
  int batch = 4;
  double tau = 0.07;
  int m_negatives = 15;
  int max_hard = 3;
  std::uint64_t seed = 7;

  void validate() const;
};

struct TrainResult {
  QffParams params;
  std::vector<double> step_losses;  // mean loss of each SGD step's batch
};

/// Plain SGD over the dataset; example order reshuffles every epoch from the
/// config seed. A non-finite loss aborts with the step index.
TrainResult train(QffParams params, const std::vector<TrainExample>& dataset,
                  const TrainConfig& config);

/// Mean contrastive loss over the whole dataset with frozen params.
double mean_loss(const QffParams& params, const std::vector<TrainExample>& dataset, double tau);

/// Assembles training examples from queries that carry evidence annotations:
/// retrieves top-k candidates, picks the evidence section as the positive and
/// samples m negatives. Queries without usable evidence are reported in
/// `skipped` and left out.
std::vector<TrainExample> build_train_examples(
    const corpus::Corpus& kb, const retrieval::RetrievalIndex& index,
    const providers::Provider& provider, std::span<const corpus::Query> queries, int k, int m,
    int max_hard, std::uint64_t seed, std::vector<std::string>* skipped = nullptr);

}  // namespace qkf::qff
