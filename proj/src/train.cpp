#include "fel/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace fel::train {

AdamState::AdamState(const model::Model& m) {
  m1.reserve(m.params.size());
  m2.reserve(m.params.size());
  for (const auto& p : m.params) {
    m1.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    m2.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
  steps.assign(m.params.size(), 0);
}

void adam_step(model::Model& model, const std::vector<model::Param*>& trainable,
               AdamState& state, const TrainConfig& cfg) {
  for (model::Param* p : trainable) {
    const std::size_t idx = static_cast<std::size_t>(p - model.params.data());
    if (idx >= model.params.size()) throw Error("ADAM_PARAM", "parameter not from this model");
    auto& theta = p->tensor.values();
    const auto& g = p->tensor.grad();
    auto& m = state.m1[idx];
    auto& v = state.m2[idx];
    const std::int64_t t = ++state.steps[idx];
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw Error("GRAD_NONFINITE", "non-finite gradient in " + p->name + " at element " +
                                          std::to_string(i));
      }
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

void zero_grads(model::Model& model) {
  for (auto& p : model.params) p.tensor.zero_grad();
}

Task parse_task(const std::string& name) {
  if (name == "ct") return Task::CT;
  if (name == "ad") return Task::AD;
  throw Error("TASK_UNKNOWN", "unknown task '" + name + "'");
}

std::string task_name(Task t) { return t == Task::CT ? "ct" : "ad"; }

unsigned task_head(Task t) { return t == Task::CT ? model::kBoundary : model::kPadCls; }

Index task_classes(Task t) { return t == Task::CT ? model::kBoundaryClasses : 2; }

// ---------------------------------------------------------------------------
// metrics

nlohmann::json Metrics::to_json() const {
  return nlohmann::json{{"accuracy", accuracy},
                        {"perplexity", perplexity},
                        {"n_labels", n},
                        {"confusion", confusion}};
}

Metrics metrics_from_probs(const Tensor& probs, const std::vector<std::int32_t>& labels,
                           std::int32_t ignore_index) {
  const Index rows = probs.extent(0), classes = probs.extent(1);
  if (static_cast<Index>(labels.size()) != rows) {
    throw Error("SHAPE_MISMATCH", "metrics: label count does not match probability rows");
  }
  Metrics m;
  m.confusion.assign(static_cast<std::size_t>(classes),
                     std::vector<Index>(static_cast<std::size_t>(classes), 0));
  double nll = 0.0;
  Index correct = 0;
  const double* pp = probs.data();
  for (Index r = 0; r < rows; ++r) {
    const std::int32_t gold = labels[static_cast<std::size_t>(r)];
    if (gold == ignore_index) continue;
    if (gold < 0 || gold >= classes) throw Error("TARGET_RANGE", "label outside class range");
    const double* row = pp + r * classes;
    Index pred = 0;
    for (Index j = 1; j < classes; ++j) {
      if (row[j] > row[pred]) pred = j;
    }
    if (pred == gold) ++correct;
    ++m.confusion[static_cast<std::size_t>(gold)][static_cast<std::size_t>(pred)];
    nll += -std::log(std::max(row[gold], 1e-300));
    ++m.n;
  }
  if (m.n == 0) throw Error("NO_LABELS", "zero supervised labels in evaluation");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  m.perplexity = std::exp(nll / static_cast<double>(m.n));
  return m;
}

// ---------------------------------------------------------------------------
// batching

model::Batch make_batch(const std::vector<data::TrainingExample>& examples,
                        const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error("BATCH_EMPTY", "empty batch");
  Index seq = 0;
  for (std::size_t idx : indices) {
    seq = std::max(seq, static_cast<Index>(examples[idx].ids.size()));
  }
  model::Batch b;
  b.batch = static_cast<Index>(indices.size());
  b.seq = seq;
  const Index n = b.batch * seq;
  b.ids.assign(static_cast<std::size_t>(n), tok::Vocab::kPad);
  b.segment_ids.assign(static_cast<std::size_t>(n), 0);
  b.attention.assign(static_cast<std::size_t>(n), 0);
  b.mlm_labels.assign(static_cast<std::size_t>(n), -1);
  b.boundary_labels.assign(static_cast<std::size_t>(n), -1);
  b.nsp_labels.assign(static_cast<std::size_t>(b.batch), -1);
  b.pad_labels.assign(static_cast<std::size_t>(b.batch), -1);
  for (Index row = 0; row < b.batch; ++row) {
    const auto& e = examples[indices[static_cast<std::size_t>(row)]];
    const Index base = row * seq;
    const Index len = static_cast<Index>(e.ids.size());
    for (Index i = 0; i < len; ++i) {
      b.ids[static_cast<std::size_t>(base + i)] = e.ids[static_cast<std::size_t>(i)];
      b.segment_ids[static_cast<std::size_t>(base + i)] =
          e.segment_ids[static_cast<std::size_t>(i)];
      b.attention[static_cast<std::size_t>(base + i)] = 1;
    }
    if (e.objective_mask & data::kObjMlm) {
      for (std::size_t k = 0; k < e.mlm_positions.size(); ++k) {
        b.mlm_labels[static_cast<std::size_t>(base + e.mlm_positions[k])] = e.mlm_labels[k];
      }
    }
    if (e.objective_mask & data::kObjHyp) {
      for (Index i = 0; i < len && i < static_cast<Index>(e.boundary_labels.size()); ++i) {
        b.boundary_labels[static_cast<std::size_t>(base + i)] =
            e.boundary_labels[static_cast<std::size_t>(i)];
      }
    }
    if (e.objective_mask & data::kObjNsp) b.nsp_labels[static_cast<std::size_t>(row)] = e.nsp_label;
    if (e.objective_mask & data::kObjPad) b.pad_labels[static_cast<std::size_t>(row)] = e.pad_label;
  }
  return b;
}

// ---------------------------------------------------------------------------
// streams

VectorStream::VectorStream(std::vector<data::TrainingExample> examples)
    : examples_(std::move(examples)) {
  if (examples_.empty()) throw Error("STREAM_EMPTY", "empty example stream");
  order_.resize(examples_.size());
  std::iota(order_.begin(), order_.end(), 0);
  pos_ = order_.size();  // force a shuffle on the first draw
}

data::TrainingExample VectorStream::next(Rng& rng) {
  if (pos_ >= order_.size()) {
    rng.shuffle(order_);
    pos_ = 0;
  }
  return examples_[order_[pos_++]];
}

MlmNspStream::MlmNspStream(std::vector<data::Chunk> chunks, const tok::Vocab& vocab,
                           data::PackOptions options, unsigned objectives)
    : chunks_(std::move(chunks)),
      vocab_(vocab),
      freq_(vocab.relative_frequencies()),
      options_(options),
      objectives_(objectives & (data::kObjMlm | data::kObjNsp)) {
  if (chunks_.empty()) throw Error("STREAM_EMPTY", "no chunks for the mlm/nsp stream");
  if (objectives_ == 0) throw Error("OBJECTIVE_UNKNOWN", "mlm/nsp stream without objectives");
}

data::TrainingExample MlmNspStream::next(Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    data::TrainingExample e =
        data::make_mlm_nsp_example(chunks_, vocab_, freq_, options_, objectives_, rng);
    if (e.objective_mask != 0) return e;
  }
  throw Error("STREAM_EMPTY", "mlm/nsp stream failed to draw a supervised example");
}

// ---------------------------------------------------------------------------
// pretraining

PretrainResult pretrain(model::Model& model, const PretrainStreams& streams,
                        const TrainConfig& cfg) {
  if (cfg.objectives == 0) throw Error("OBJECTIVE_UNKNOWN", "empty objective set");
  struct Bucket {
    ExampleStream* stream;
    unsigned heads;
  };
  std::vector<Bucket> buckets;
  if (cfg.objectives & (data::kObjMlm | data::kObjNsp)) {
    if (!streams.mlm_nsp) throw Error("STREAM_EMPTY", "mlm/nsp objectives without a stream");
    buckets.push_back({streams.mlm_nsp, cfg.objectives & (data::kObjMlm | data::kObjNsp)});
  }
  if (cfg.objectives & data::kObjHyp) {
    if (!streams.hyp) throw Error("STREAM_EMPTY", "hyp objective without a stream");
    buckets.push_back({streams.hyp, data::kObjHyp});
  }
  if (cfg.objectives & data::kObjPad) {
    if (!streams.pad) throw Error("STREAM_EMPTY", "pad objective without a stream");
    buckets.push_back({streams.pad, data::kObjPad});
  }

  Rng rng(cfg.seed);
  AdamState state(model);
  auto trainable = model::scope_params(model, model::Scope::PredTrmEmb);  // all groups
  PretrainResult result;
  std::vector<data::TrainingExample> batch_examples;
  std::vector<std::size_t> indices;
  for (Index step = 0; step < cfg.max_steps; ++step) {
    const Bucket& bucket = buckets[static_cast<std::size_t>(step) % buckets.size()];
    batch_examples.clear();
    indices.clear();
    for (Index i = 0; i < cfg.batch_size; ++i) {
      batch_examples.push_back(bucket.stream->next(rng));
      indices.push_back(static_cast<std::size_t>(i));
    }
    const model::Batch batch = make_batch(batch_examples, indices);
    Graph graph;
    const auto out = model::forward(model, graph, batch, bucket.heads, true, rng);
    graph.backward(out.combined_loss);
    adam_step(model, trainable, state, cfg);
    zero_grads(model);
    for (unsigned bit : {data::kObjMlm, data::kObjNsp, data::kObjHyp, data::kObjPad}) {
      if (!(bucket.heads & bit)) continue;
      const auto& head = out.by(static_cast<model::Head>(bit));
      result.log.push_back(LossLogEntry{step, data::objective_name(bit), head.loss_value});
    }
    result.examples += cfg.batch_size;
  }
  result.steps = cfg.max_steps;
  return result;
}

void write_loss_log(const std::vector<LossLogEntry>& log, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("IO", "cannot open " + path + " for writing");
  char buf[64];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.loss);
    os << e.step << "\t" << e.objective << "\t" << buf << "\n";
  }
  if (!os) throw Error("IO", "write failed for " + path);
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

// Collects probability rows and labels for the task head over a dataset.
struct EvalAccum {
  std::vector<double> probs;
  std::vector<std::int32_t> labels;
  Index classes = 0;
};

void eval_batch(const model::Model& model, const model::Batch& batch, Task task,
                EvalAccum& accum) {
  Graph graph(false);
  Rng no_dropout(0);
  const auto out = model::forward(model, graph, batch, task_head(task), false, no_dropout);
  const auto& head = out.by(static_cast<model::Head>(task_head(task)));
  const Tensor& probs = head.probs;
  accum.classes = probs.extent(1);
  if (task == Task::CT) {
    // One row per token position; labels carry the ignores.
    accum.probs.insert(accum.probs.end(), probs.values().begin(), probs.values().end());
    accum.labels.insert(accum.labels.end(), batch.boundary_labels.begin(),
                        batch.boundary_labels.end());
  } else {
    accum.probs.insert(accum.probs.end(), probs.values().begin(), probs.values().end());
    accum.labels.insert(accum.labels.end(), batch.pad_labels.begin(), batch.pad_labels.end());
  }
}

Metrics metrics_from_accum(const EvalAccum& accum) {
  const Index rows = static_cast<Index>(accum.labels.size());
  Tensor probs = Tensor::from_values({rows, accum.classes}, accum.probs);
  return metrics_from_probs(probs, accum.labels, -1);
}

std::vector<std::size_t> batched_indices(std::size_t n, std::size_t start, std::size_t count) {
  std::vector<std::size_t> idx;
  for (std::size_t i = start; i < std::min(n, start + count); ++i) idx.push_back(i);
  return idx;
}

}  // namespace

Metrics evaluate(const model::Model& model, const std::vector<data::TrainingExample>& dataset,
                 Task task, Index batch_size) {
  if (dataset.empty()) throw Error("NO_LABELS", "empty evaluation dataset");
  EvalAccum accum;
  for (std::size_t start = 0; start < dataset.size();
       start += static_cast<std::size_t>(batch_size)) {
    const auto idx = batched_indices(dataset.size(), start, static_cast<std::size_t>(batch_size));
    eval_batch(model, make_batch(dataset, idx), task, accum);
  }
  return metrics_from_accum(accum);
}

// ---------------------------------------------------------------------------
// finetuning

namespace {

struct ValueSnapshot {
  std::vector<std::vector<double>> values;
  void capture(const std::vector<model::Param*>& params) {
    values.clear();
    values.reserve(params.size());
    for (const auto* p : params) values.push_back(p->tensor.values());
  }
  void restore(const std::vector<model::Param*>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->tensor.values() = values[i];
  }
};

struct TaskSet {
  const std::vector<data::TrainingExample>* train;
  const std::vector<data::TrainingExample>* dev;
  Task task;
};

// Shared driver for single-task and multitask finetuning.
std::vector<FinetuneResult> finetune_driver(model::Model& model, std::vector<TaskSet> tasks,
                                            const TrainConfig& cfg) {
  for (const auto& t : tasks) {
    if (t.train->empty() || t.dev->empty()) {
      throw Error("DATASET_EMPTY", "finetuning needs non-empty train and dev sets");
    }
  }
  Rng rng(cfg.seed);
  AdamState state(model);
  auto trainable = model::scope_params(model, cfg.scope);

  std::vector<FinetuneResult> results(tasks.size());
  std::vector<ValueSnapshot> best(tasks.size());
  std::vector<double> best_ppl(tasks.size(), 0.0);

  // Epoch 0 is the untouched model; it participates in selection so a model
  // that only degrades keeps its pretrained weights.
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Metrics dev = evaluate(model, *tasks[t].dev, tasks[t].task, cfg.batch_size);
    if (!std::isfinite(dev.perplexity)) {
      throw Error("PPL_NONFINITE", "non-finite dev perplexity");
    }
    results[t].best_epoch = 0;
    results[t].best_dev = dev;
    best_ppl[t] = dev.perplexity;
    best[t].capture(trainable);
    results[t].trace.push_back(EpochStat{0, 0.0, dev.perplexity, dev.accuracy});
  }

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Per-task batch lists, then interleaved across tasks.
    struct Step {
      std::size_t task;
      std::vector<std::size_t> indices;
    };
    std::vector<Step> steps;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      std::vector<std::size_t> order(tasks[t].train->size());
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        Step s;
        s.task = t;
        for (std::size_t i = start;
             i < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i) {
          s.indices.push_back(order[i]);
        }
        steps.push_back(std::move(s));
      }
    }
    if (tasks.size() > 1) {
      // Alternate tasks: stable sort by position within task keeps each
      // task's batch order while interleaving across tasks.
      std::vector<Step> interleaved;
      std::vector<std::size_t> cursor(tasks.size(), 0);
      std::vector<std::vector<Step*>> per_task(tasks.size());
      for (auto& s : steps) per_task[s.task].push_back(&s);
      bool more = true;
      while (more) {
        more = false;
        for (std::size_t t = 0; t < tasks.size(); ++t) {
          if (cursor[t] < per_task[t].size()) {
            interleaved.push_back(*per_task[t][cursor[t]++]);
            more = true;
          }
        }
      }
      steps = std::move(interleaved);
    }

    std::vector<double> train_loss(tasks.size(), 0.0);
    std::vector<Index> train_batches(tasks.size(), 0);
    for (const auto& s : steps) {
      const model::Batch batch = make_batch(*tasks[s.task].train, s.indices);
      Graph graph;
      const auto out =
          model::forward(model, graph, batch, task_head(tasks[s.task].task), true, rng);
      graph.backward(out.combined_loss);
      adam_step(model, trainable, state, cfg);
      zero_grads(model);
      train_loss[s.task] += out.combined_value;
      ++train_batches[s.task];
    }

    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const Metrics dev = evaluate(model, *tasks[t].dev, tasks[t].task, cfg.batch_size);
      if (!std::isfinite(dev.perplexity)) {
        throw Error("PPL_NONFINITE", "non-finite dev perplexity");
      }
      results[t].trace.push_back(EpochStat{
          epoch, train_batches[t] ? train_loss[t] / static_cast<double>(train_batches[t]) : 0.0,
          dev.perplexity, dev.accuracy});
      if (dev.perplexity < best_ppl[t]) {
        best_ppl[t] = dev.perplexity;
        results[t].best_epoch = epoch;
        results[t].best_dev = dev;
        best[t].capture(trainable);
      }
    }
  }

  // Restore the single best checkpoint. With several tasks the last task's
  // best weights win for shared groups; per-task heads come from their own
  // best snapshots, which is what per-task selection needs.
  if (tasks.size() == 1) {
    best[0].restore(trainable);
  } else {
    best.back().restore(trainable);
    for (std::size_t t = 0; t + 1 < tasks.size(); ++t) {
      const std::string prefix =
          "head." + model::head_name(static_cast<model::Head>(task_head(tasks[t].task))) + ".";
      for (std::size_t i = 0; i < trainable.size(); ++i) {
        if (trainable[i]->name.rfind(prefix, 0) == 0) {
          trainable[i]->tensor.values() = best[t].values[i];
        }
      }
    }
  }
  return results;
}

}  // namespace

FinetuneResult finetune(model::Model& model, const std::vector<data::TrainingExample>& train_set,
                        const std::vector<data::TrainingExample>& dev_set, Task task,
                        const TrainConfig& cfg) {
  auto results = finetune_driver(model, {TaskSet{&train_set, &dev_set, task}}, cfg);
  return results[0];
}

std::pair<FinetuneResult, FinetuneResult> finetune_multitask(
    model::Model& model, const std::vector<data::TrainingExample>& ct_train,
    const std::vector<data::TrainingExample>& ct_dev,
    const std::vector<data::TrainingExample>& ad_train,
    const std::vector<data::TrainingExample>& ad_dev, const TrainConfig& cfg) {
  auto results = finetune_driver(
      model,
      {TaskSet{&ct_train, &ct_dev, Task::CT}, TaskSet{&ad_train, &ad_dev, Task::AD}}, cfg);
  return {results[0], results[1]};
}

// ---------------------------------------------------------------------------
// cross validation

TaskDataset encode_ct_dataset(const std::vector<data::CTExample>& examples,
                              const tok::Vocab& vocab, Index max_seq_len) {
  TaskDataset ds;
  for (const auto& e : examples) {
    ds.encoded.push_back(data::encode_ct_example(e, vocab, max_seq_len));
    ds.texts.push_back(e.query);
  }
  return ds;
}

TaskDataset encode_ad_dataset(const std::vector<data::ADExample>& examples,
                              const tok::Vocab& vocab, Index max_seq_len) {
  TaskDataset ds;
  for (const auto& e : examples) {
    ds.encoded.push_back(data::encode_ad_example(e, vocab, max_seq_len));
    ds.texts.push_back(e.acronym + " " + e.snippet);
  }
  return ds;
}

nlohmann::json CVReport::to_json() const {
  nlohmann::json runs_json = nlohmann::json::array();
  for (const auto& r : runs) {
    runs_json.push_back(nlohmann::json{{"fold", r.fold},
                                       {"seed_index", r.seed_index},
                                       {"accuracy", r.accuracy},
                                       {"perplexity", r.perplexity},
                                       {"best_epoch", r.best_epoch}});
  }
  return nlohmann::json{{"runs", runs_json},
                        {"aggregate",
                         {{"accuracy_mean", acc_mean},
                          {"accuracy_std", acc_std},
                          {"perplexity_mean", ppl_mean},
                          {"perplexity_std", ppl_std},
                          {"n_runs", runs.size()}}}};
}

SplitMode parse_split_mode(const std::string& name) {
  if (name == "standard") return SplitMode::Standard;
  if (name == "ct_disjoint") return SplitMode::CtDisjoint;
  throw Error("SPLIT_UNKNOWN", "unknown split mode '" + name + "'");
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

CVReport cross_validate(const model::Model& base_model, const TaskDataset& dataset,
                        const TaskDataset& held_out, Task task, const TrainConfig& cfg,
                        SplitMode mode) {
  if (cfg.k_folds < 2) throw Error("CV_PARAMS", "k_folds must be at least 2");
  if (static_cast<Index>(dataset.encoded.size()) < cfg.k_folds) {
    throw Error("CV_PARAMS", "dataset smaller than fold count");
  }
  if (mode == SplitMode::CtDisjoint) {
    if (held_out.encoded.empty()) {
      throw Error("CV_PARAMS", "ct_disjoint mode needs a held-out test set");
    }
    const auto shared =
        data::shared_nonstop_unigrams(dataset.texts, held_out.texts, data::stopwords50());
    if (!shared.empty()) {
      std::string names;
      for (std::size_t i = 0; i < shared.size() && i < 8; ++i) {
        if (i) names += ", ";
        names += shared[i];
      }
      throw Error("SPLIT_SHARED", "train and test share non-stopword unigrams: " + names);
    }
  }

  // Canonical order makes the report independent of the input ordering.
  std::vector<std::size_t> canon(dataset.encoded.size());
  std::iota(canon.begin(), canon.end(), 0);
  std::vector<std::string> keys(dataset.encoded.size());
  for (std::size_t i = 0; i < dataset.encoded.size(); ++i) {
    keys[i] = dataset.texts[i] + "\x1f" + dataset.encoded[i].to_json().dump();
  }
  std::sort(canon.begin(), canon.end(),
            [&keys](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

  Rng fold_rng(derive_seed(cfg.seed, 0xf01d));
  std::vector<std::size_t> shuffled = canon;
  fold_rng.shuffle(shuffled);

  CVReport report;
  std::vector<double> accs, ppls;
  for (Index fold = 0; fold < cfg.k_folds; ++fold) {
    for (Index seed_index = 0; seed_index < cfg.n_seeds; ++seed_index) {
      const std::uint64_t run_seed =
          derive_seed(cfg.seed, 0x100 + static_cast<std::uint64_t>(fold * 1000 + seed_index));
      Rng run_rng(run_seed);

      std::vector<data::TrainingExample> train_set;
      std::vector<data::TrainingExample> test_set;
      if (mode == SplitMode::CtDisjoint) {
        // k random samples from the pool; the fixed held-out set is the test.
        std::vector<std::size_t> order = canon;
        run_rng.shuffle(order);
        const std::size_t want = cfg.finetune_size > 0
                                     ? std::min(order.size(),
                                                static_cast<std::size_t>(cfg.finetune_size))
                                     : order.size();
        for (std::size_t i = 0; i < want; ++i) train_set.push_back(dataset.encoded[order[i]]);
        test_set = held_out.encoded;
      } else {
        std::vector<std::size_t> train_idx;
        for (std::size_t i = 0; i < shuffled.size(); ++i) {
          if (static_cast<Index>(i % static_cast<std::size_t>(cfg.k_folds)) == fold) {
            test_set.push_back(dataset.encoded[shuffled[i]]);
          } else {
            train_idx.push_back(shuffled[i]);
          }
        }
        run_rng.shuffle(train_idx);
        const std::size_t want = cfg.finetune_size > 0
                                     ? std::min(train_idx.size(),
                                                static_cast<std::size_t>(cfg.finetune_size))
                                     : train_idx.size();
        for (std::size_t i = 0; i < want; ++i) train_set.push_back(dataset.encoded[train_idx[i]]);
      }

      model::Model run_model = base_model.clone();
      if (cfg.reset_head) {
        model::reset_heads(run_model, task_head(task), derive_seed(run_seed, 0x6ead));
      }
      TrainConfig run_cfg = cfg;
      run_cfg.seed = run_seed;
      const FinetuneResult result = finetune(run_model, train_set, test_set, task, run_cfg);
      report.runs.push_back(CVRun{fold, seed_index, result.best_dev.accuracy,
                                  result.best_dev.perplexity, result.best_epoch});
      accs.push_back(result.best_dev.accuracy);
      ppls.push_back(result.best_dev.perplexity);
    }
  }
  report.acc_mean = mean_of(accs);
  report.acc_std = sample_std(accs);
  report.ppl_mean = mean_of(ppls);
  report.ppl_std = sample_std(ppls);
  return report;
}

}  // namespace fel::train
