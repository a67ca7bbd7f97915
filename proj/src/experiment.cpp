#include "fel/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fel::train {

namespace {

std::string arm_label(unsigned objectives) {
  const auto names = data::objective_names(objectives);
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out += "+";
    out += names[i];
  }
  return out.empty() ? "none" : out;
}

}  // namespace

std::string ExperimentReport::to_tsv() const {
  std::ostringstream os;
  os << "task\t" << task_name(task) << "\n";
  os << "arm";
  if (!arms.empty()) {
    for (const auto& [size, report] : arms.front().by_size) {
      (void)report;
      os << "\t" << size;
    }
  }
  os << "\n";
  char buf[128];
  for (const auto& arm : arms) {
    os << arm_label(arm.objectives);
    for (const auto& [size, report] : arm.by_size) {
      (void)size;
      std::snprintf(buf, sizeof(buf), "%.6f±%.6f", report.acc_mean, report.acc_std);
      os << "\t" << buf;
    }
    os << "\n";
  }
  for (const auto& p : pairs) {
    std::snprintf(buf, sizeof(buf), "%.6f\t%.6f", p.mean_diff, p.pooled_std);
    os << "diff\t" << arm_label(arms[p.arm_a].objectives) << "-"
       << arm_label(arms[p.arm_b].objectives) << "\t" << p.size << "\t" << buf << "\n";
  }
  return os.str();
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json arms_json = nlohmann::json::array();
  for (const auto& arm : arms) {
    nlohmann::json by_size = nlohmann::json::object();
    for (const auto& [size, report] : arm.by_size) {
      by_size[std::to_string(size)] = report.to_json();
    }
    arms_json.push_back(nlohmann::json{{"objectives", data::objective_names(arm.objectives)},
                                       {"steps", arm.steps},
                                       {"examples", arm.examples},
                                       {"by_size", by_size}});
  }
  nlohmann::json pairs_json = nlohmann::json::array();
  for (const auto& p : pairs) {
    pairs_json.push_back(nlohmann::json{{"arm_a", arm_label(arms[p.arm_a].objectives)},
                                        {"arm_b", arm_label(arms[p.arm_b].objectives)},
                                        {"size", p.size},
                                        {"accuracy_mean_diff", p.mean_diff},
                                        {"pooled_std", p.pooled_std}});
  }
  return nlohmann::json{{"task", task_name(task)}, {"arms", arms_json}, {"pairs", pairs_json}};
}

double spearman_rank_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error("RANK_INPUT", "rank correlation needs two equally sized series");
  }
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean_of(rx), my = mean_of(ry);
  double cov = 0.0, vx = 0.0, vy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx == 0.0 || vy == 0.0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

ExperimentReport run_alignment_experiment(const ExperimentParams& params) {
  if (params.arms.empty()) throw Error("EXPERIMENT_ARMS", "experiment needs at least one arm");
  if (params.finetune_sizes.empty()) {
    throw Error("EXPERIMENT_ARMS", "experiment needs at least one finetune size");
  }

  const data::SyntheticCorpus corpus = data::gen_synthetic_corpus(params.corpus);

  std::vector<std::string> vocab_texts;
  for (const auto& d : corpus.wiki_docs) vocab_texts.push_back(d.plain);
  for (const auto& d : corpus.web_docs) vocab_texts.push_back(d.plain);
  const tok::Vocab vocab = tok::build_vocab(vocab_texts, params.vocab_target,
                                            params.vocab_options);

  model::ModelConfig cfg = params.model_cfg;
  cfg.vocab_size = vocab.size();
  cfg.validate();

  data::PackOptions pack = params.pack;
  pack.max_seq_len = std::min(pack.max_seq_len, cfg.max_seq_len);

  // Chunk pools. Web chunk doc ids are offset so NSP cross-document draws see
  // one id space.
  auto wiki_chunks = data::chunk_documents(corpus.wiki_docs, params.chunk_words,
                                           data::StreamTag::WikiLike);
  auto web_chunks = data::chunk_documents(corpus.web_docs, params.chunk_words,
                                          data::StreamTag::WebLike);
  const Index doc_offset = static_cast<Index>(corpus.wiki_docs.size());
  for (auto& c : web_chunks) c.doc += doc_offset;
  std::vector<data::Chunk> all_chunks = wiki_chunks;
  all_chunks.insert(all_chunks.end(), web_chunks.begin(), web_chunks.end());

  // Pre-generated pools for the aligned objectives.
  Rng pool_rng(derive_seed(params.corpus.seed, 0x900f));
  std::vector<data::TrainingExample> hyp_pool;
  for (const auto& c : wiki_chunks) {
    if (static_cast<Index>(hyp_pool.size()) >= params.max_hyp_examples) break;
    hyp_pool.push_back(data::make_hyp_example(c, vocab, pack));
  }
  std::vector<data::TrainingExample> pad_pool;
  for (std::size_t i = 0; i < all_chunks.size(); ++i) {
    if (static_cast<Index>(pad_pool.size()) >= 2 * params.max_pad_pairs) break;
    const auto& chunk = all_chunks[i];
    if (data::whitespace_split(chunk.text).size() < 6) continue;
    std::size_t other;
    do {
      other = static_cast<std::size_t>(
          pool_rng.uniform_int(0, static_cast<std::int64_t>(all_chunks.size()) - 1));
    } while (other == i);
    const data::AdPair pair = data::gen_pad_pair(chunk.text, all_chunks[other].text, pool_rng);
    Rng* sample_rng = chunk.stream == data::StreamTag::WebLike ? &pool_rng : nullptr;
    pad_pool.push_back(data::make_pad_example(pair.positive, vocab, pack, sample_rng));
    pad_pool.push_back(data::make_pad_example(pair.negative, vocab, pack, sample_rng));
  }

  // Finetune datasets.
  const TaskDataset ct_pool = encode_ct_dataset(corpus.ct_pool, vocab, cfg.max_seq_len);
  const TaskDataset ct_test = encode_ct_dataset(corpus.ct_test, vocab, cfg.max_seq_len);
  const TaskDataset ad_all = encode_ad_dataset(corpus.ad_examples, vocab, cfg.max_seq_len);

  ExperimentReport report;
  report.task = params.task;
  for (unsigned objectives : params.arms) {
    model::Model arm_model = model::init_model(cfg, params.model_seed);

    MlmNspStream mlm_stream(all_chunks, vocab, pack, data::kObjMlm | data::kObjNsp);
    VectorStream hyp_stream(hyp_pool);
    VectorStream pad_stream(pad_pool);
    PretrainStreams streams;
    streams.mlm_nsp = &mlm_stream;
    streams.hyp = &hyp_stream;
    streams.pad = &pad_stream;

    TrainConfig pre_cfg = params.pretrain_cfg;
    pre_cfg.objectives = objectives;
    const PretrainResult pre = pretrain(arm_model, streams, pre_cfg);

    ArmResult arm;
    arm.objectives = objectives;
    arm.steps = pre.steps;
    arm.examples = pre.examples;
    for (Index size : params.finetune_sizes) {
      TrainConfig ft_cfg = params.finetune_cfg;
      ft_cfg.finetune_size = size;
      if (params.task == Task::CT) {
        arm.by_size[size] = cross_validate(arm_model, ct_pool, ct_test, Task::CT, ft_cfg,
                                           SplitMode::CtDisjoint);
      } else {
        arm.by_size[size] =
            cross_validate(arm_model, ad_all, TaskDataset{}, Task::AD, ft_cfg,
                           SplitMode::Standard);
      }
    }
    report.arms.push_back(std::move(arm));
  }

  // Budget parity across arms is part of the contract.
  for (const auto& arm : report.arms) {
    if (arm.steps != report.arms.front().steps ||
        arm.examples != report.arms.front().examples) {
      throw Error("BUDGET_MISMATCH", "experiment arms consumed different budgets");
    }
  }

  for (std::size_t a = 0; a < report.arms.size(); ++a) {
    for (std::size_t b = a + 1; b < report.arms.size(); ++b) {
      for (Index size : params.finetune_sizes) {
        const CVReport& ra = report.arms[a].by_size.at(size);
        const CVReport& rb = report.arms[b].by_size.at(size);
        PairDiff diff;
        diff.arm_a = a;
        diff.arm_b = b;
        diff.size = size;
        diff.mean_diff = ra.acc_mean - rb.acc_mean;
        diff.pooled_std = std::sqrt((ra.acc_std * ra.acc_std + rb.acc_std * rb.acc_std) / 2.0);
        report.pairs.push_back(diff);
      }
    }
  }
  return report;
}

}  // namespace fel::train
