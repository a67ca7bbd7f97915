#pragma once

#include <map>
#include <string>
#include <vector>

#include "fel/train.hpp"

namespace fel::train {

struct ExperimentParams {
  data::CorpusParams corpus;
  model::ModelConfig model_cfg;  // vocab_size is filled in after the vocab is built
  Index vocab_target = 1200;
  tok::VocabOptions vocab_options;
  Index chunk_words = 12;
  data::PackOptions pack;
  TrainConfig pretrain_cfg;
  TrainConfig finetune_cfg;
  std::vector<unsigned> arms;  // objective masks, all sharing the same budget
  std::vector<Index> finetune_sizes;
  Task task = Task::CT;
  std::uint64_t model_seed = 7;
  Index max_hyp_examples = 6000;
  Index max_pad_pairs = 3000;
};

struct ArmResult {
  unsigned objectives = 0;
  Index steps = 0;
  Index examples = 0;
  std::map<Index, CVReport> by_size;
};

struct PairDiff {
  std::size_t arm_a = 0;
  std::size_t arm_b = 0;
  Index size = 0;
  double mean_diff = 0.0;   // accuracy(arm_a) - accuracy(arm_b)
  double pooled_std = 0.0;  // sqrt((s_a^2 + s_b^2) / 2)
};

struct ExperimentReport {
  Task task = Task::CT;
  std::vector<ArmResult> arms;
  std::vector<PairDiff> pairs;

  std::string to_tsv() const;
  nlohmann::json to_json() const;
};

// Generates the synthetic corpus, builds the vocabulary, pretrains one model
// per arm under an identical step budget, runs the cross-validated finetuning
// grid over the requested sizes, and tabulates pairwise mean differences.
ExperimentReport run_alignment_experiment(const ExperimentParams& params);

// Spearman rank correlation (average ranks on ties).
double spearman_rank_correlation(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace fel::train
