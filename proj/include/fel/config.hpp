#pragma once

#include <string>
#include <vector>

#include "fel/datagen.hpp"
#include "fel/experiment.hpp"
#include "fel/model.hpp"
#include "fel/train.hpp"

#include "json.hpp"

namespace fel::cli {

// Canonical run configuration. Unknown keys are rejected; every run writes the
// fully resolved form (all defaults materialized) next to its artifacts so it
// can be replayed exactly.
struct RunConfig {
  std::uint64_t master_seed = 1;

  // tokenizer
  Index vocab_size = 1200;
  double alpha = 0.2;
  Index max_piece_len = 8;
  Index min_count = 2;

  model::ModelConfig model;  // model.vocab_size 0 means "from the vocab file"

  train::TrainConfig pretrain;
  double mask_rate = 0.15;
  Index shard_examples = 2000;

  train::TrainConfig finetune;
  std::string split = "auto";  // auto | standard | ct_disjoint

  // experiment
  data::CorpusParams corpus;
  std::vector<unsigned> arms;
  std::vector<Index> finetune_sizes;
  train::Task task = train::Task::CT;
  Index chunk_words = 12;
  std::uint64_t model_seed = 7;
  Index max_hyp_examples = 6000;
  Index max_pad_pairs = 3000;

  // input paths (outputs always go to --out)
  struct Io {
    std::vector<std::string> corpus;  // markup corpus files
    std::string vocab;
    std::string checkpoint;
    std::string shards;  // directory of pretraining shards
    std::string train;
    std::string test;
  } io;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  train::SplitMode split_mode_for(train::Task t) const;
};

}  // namespace fel::cli
