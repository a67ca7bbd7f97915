#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fel/datagen.hpp"
#include "fel/model.hpp"
#include "fel/rng.hpp"

#include "json.hpp"

namespace fel::train {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 64;
  Index max_steps = 0;  // pretraining step budget
  Index epochs = 30;    // finetuning epoch cap
  std::uint64_t seed = 1;
  model::Scope scope = model::Scope::Pred;
  bool multitask_finetune = false;
  unsigned objectives = data::kAllObjectives;
  Index finetune_size = 0;  // 0: use every available training example
  Index k_folds = 5;
  Index n_seeds = 2;
  bool reset_head = false;  // discard the task prediction layer before finetuning
};

struct AdamState {
  explicit AdamState(const model::Model& m);
  std::vector<std::vector<double>> m1;
  std::vector<std::vector<double>> m2;
  std::vector<std::int64_t> steps;
};

// Bias-corrected Adam over the listed trainable parameters only (index-aligned
// with model.params). Aborts on non-finite gradients.
void adam_step(model::Model& model, const std::vector<model::Param*>& trainable,
               AdamState& state, const TrainConfig& cfg);
void zero_grads(model::Model& model);

enum class Task { CT, AD };
Task parse_task(const std::string& name);
std::string task_name(Task t);
unsigned task_head(Task t);
Index task_classes(Task t);

// ---------------------------------------------------------------------------
// metrics

struct Metrics {
  double accuracy = 0.0;
  double perplexity = 0.0;
  Index n = 0;
  std::vector<std::vector<Index>> confusion;  // [gold][pred]

  nlohmann::json to_json() const;
};

// Accuracy, exp(mean NLL) perplexity, and confusion counts over non-ignored
// labels. probs holds one softmax row per label row.
Metrics metrics_from_probs(const Tensor& probs, const std::vector<std::int32_t>& labels,
                           std::int32_t ignore_index);

// ---------------------------------------------------------------------------
// batching

model::Batch make_batch(const std::vector<data::TrainingExample>& examples,
                        const std::vector<std::size_t>& indices);

// ---------------------------------------------------------------------------
// pretraining

class ExampleStream {
 public:
  virtual ~ExampleStream() = default;
  virtual data::TrainingExample next(Rng& rng) = 0;
};

// Cycles a fixed pool, reshuffling each pass.
class VectorStream : public ExampleStream {
 public:
  explicit VectorStream(std::vector<data::TrainingExample> examples);
  data::TrainingExample next(Rng& rng) override;

 private:
  std::vector<data::TrainingExample> examples_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// Generates MLM/NSP pairs on the fly: fresh masking (and fresh sampled
// segmentation on the web stream) on every draw.
class MlmNspStream : public ExampleStream {
 public:
  MlmNspStream(std::vector<data::Chunk> chunks, const tok::Vocab& vocab,
               data::PackOptions options, unsigned objectives);
  data::TrainingExample next(Rng& rng) override;

 private:
  std::vector<data::Chunk> chunks_;
  const tok::Vocab& vocab_;
  std::vector<double> freq_;
  data::PackOptions options_;
  unsigned objectives_;
};

struct PretrainStreams {
  ExampleStream* mlm_nsp = nullptr;
  ExampleStream* hyp = nullptr;
  ExampleStream* pad = nullptr;
};

struct LossLogEntry {
  Index step;
  std::string objective;
  double loss;
};

struct PretrainResult {
  std::vector<LossLogEntry> log;
  Index steps = 0;
  Index examples = 0;
};

// Multitask pretraining: per-batch objective routing over the enabled
// buckets, additive loss, backprop through every parameter group.
PretrainResult pretrain(model::Model& model, const PretrainStreams& streams,
                        const TrainConfig& cfg);

void write_loss_log(const std::vector<LossLogEntry>& log, const std::string& path);

// ---------------------------------------------------------------------------
// finetuning

struct EpochStat {
  Index epoch;
  double train_loss;
  double dev_ppl;
  double dev_acc;
};

struct FinetuneResult {
  Index best_epoch = 0;
  Metrics best_dev;
  std::vector<EpochStat> trace;
};

// Trains up to cfg.epochs under the configured backprop scope and restores
// the parameters of the epoch with minimum dev perplexity (earliest on ties).
FinetuneResult finetune(model::Model& model, const std::vector<data::TrainingExample>& train_set,
                        const std::vector<data::TrainingExample>& dev_set, Task task,
                        const TrainConfig& cfg);

// Alternates CT and AD batches; selection is per task.
std::pair<FinetuneResult, FinetuneResult> finetune_multitask(
    model::Model& model, const std::vector<data::TrainingExample>& ct_train,
    const std::vector<data::TrainingExample>& ct_dev,
    const std::vector<data::TrainingExample>& ad_train,
    const std::vector<data::TrainingExample>& ad_dev, const TrainConfig& cfg);

Metrics evaluate(const model::Model& model, const std::vector<data::TrainingExample>& dataset,
                 Task task, Index batch_size = 64);

// ---------------------------------------------------------------------------
// cross validation

struct TaskDataset {
  std::vector<data::TrainingExample> encoded;
  std::vector<std::string> texts;  // raw text per example, for disjointness checks
};

TaskDataset encode_ct_dataset(const std::vector<data::CTExample>& examples,
                              const tok::Vocab& vocab, Index max_seq_len);
TaskDataset encode_ad_dataset(const std::vector<data::ADExample>& examples,
                              const tok::Vocab& vocab, Index max_seq_len);

struct CVRun {
  Index fold = 0;
  Index seed_index = 0;
  double accuracy = 0.0;
  double perplexity = 0.0;
  Index best_epoch = 0;
};

struct CVReport {
  std::vector<CVRun> runs;
  double acc_mean = 0.0, acc_std = 0.0;
  double ppl_mean = 0.0, ppl_std = 0.0;
  nlohmann::json to_json() const;
};

enum class SplitMode { Standard, CtDisjoint };
SplitMode parse_split_mode(const std::string& name);

// Standard mode: k folds over `dataset`, training on the remainder
// (subsampled to cfg.finetune_size). CtDisjoint mode: k random training
// samples from `dataset` with the fixed `held_out` test set, verified to
// share no non-stopword unigrams. k_folds x n_seeds runs in both modes.
CVReport cross_validate(const model::Model& base_model, const TaskDataset& dataset,
                        const TaskDataset& held_out, Task task, const TrainConfig& cfg,
                        SplitMode mode);

double mean_of(const std::vector<double>& v);
double sample_std(const std::vector<double>& v);

}  // namespace fel::train
