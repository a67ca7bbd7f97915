#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "fel/config.hpp"
#include "fel/datagen.hpp"
#include "fel/experiment.hpp"
#include "fel/gradcheck.hpp"
#include "fel/model.hpp"
#include "fel/tokenizer.hpp"
#include "fel/train.hpp"

namespace fs = std::filesystem;
using namespace fel;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scope;
  std::optional<std::string> objectives;  // comma separated
  std::optional<std::string> task;
  std::vector<std::string> corpus;
  std::optional<std::string> vocab;
  std::optional<std::string> checkpoint;
  std::optional<std::string> shards;
  std::optional<std::string> train;
  std::optional<std::string> test;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration (JSON)")->required();
  cmd->add_option("--out", args.out_dir, "output directory")->required();
  cmd->add_option("--seed", args.seed, "override master seed");
  cmd->add_option("--scope", args.scope, "backprop scope: pred | pred+trm | pred+trm+emb");
  cmd->add_option("--objectives", args.objectives, "pretraining objectives, e.g. mlm,nsp,hyp,pad");
  cmd->add_option("--task", args.task, "finetuning task: ct | ad");
  cmd->add_option("--corpus", args.corpus, "corpus file (repeatable)");
  cmd->add_option("--vocab", args.vocab, "vocabulary file");
  cmd->add_option("--checkpoint", args.checkpoint, "model checkpoint");
  cmd->add_option("--shards", args.shards, "directory with pretraining shards");
  cmd->add_option("--train", args.train, "training dataset (JSON lines)");
  cmd->add_option("--test", args.test, "test dataset (JSON lines)");
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

cli::RunConfig resolve_config(const CommonArgs& args) {
  cli::RunConfig cfg = cli::RunConfig::load(args.config_path);
  if (args.seed) {
    cfg.master_seed = *args.seed;
    cfg.corpus.seed = *args.seed;
    cfg.pretrain.seed = *args.seed;
    cfg.finetune.seed = *args.seed;
  }
  if (args.scope) cfg.finetune.scope = model::parse_scope(*args.scope);
  if (args.objectives) {
    cfg.pretrain.objectives = data::objectives_from_names(split_csv(*args.objectives));
  }
  if (args.task) cfg.task = train::parse_task(*args.task);
  if (!args.corpus.empty()) cfg.io.corpus = args.corpus;
  if (args.vocab) cfg.io.vocab = *args.vocab;
  if (args.checkpoint) cfg.io.checkpoint = *args.checkpoint;
  if (args.shards) cfg.io.shards = *args.shards;
  if (args.train) cfg.io.train = *args.train;
  if (args.test) cfg.io.test = *args.test;
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("IO", "cannot open " + path + " for writing");
  os << text;
  if (!os) throw Error("IO", "write failed for " + path);
}

std::string prepare_out(const CommonArgs& args, const cli::RunConfig& cfg) {
  fs::create_directories(args.out_dir);
  write_text(args.out_dir + "/resolved_config.json", cfg.to_json().dump(2) + "\n");
  return args.out_dir;
}

std::vector<data::Document> load_corpus_files(const std::vector<std::string>& paths) {
  if (paths.empty()) throw Error("CONFIG_INVALID", "no corpus files given (io.corpus / --corpus)");
  std::vector<data::Document> docs;
  for (const auto& p : paths) {
    // Files named *web* hold the no-markup stream.
    const data::StreamTag tag = p.find("web") != std::string::npos ? data::StreamTag::WebLike
                                                                   : data::StreamTag::WikiLike;
    auto part = data::read_corpus(p, tag);
    docs.insert(docs.end(), part.begin(), part.end());
  }
  return docs;
}

model::ModelConfig model_config_with_vocab(const cli::RunConfig& cfg, const tok::Vocab& vocab) {
  model::ModelConfig mc = cfg.model;
  if (mc.vocab_size == 0) mc.vocab_size = vocab.size();
  mc.validate();
  return mc;
}

struct ChunkPools {
  std::vector<data::Chunk> all;
  std::vector<data::Chunk> wiki;
};

ChunkPools chunk_pools(const std::vector<data::Document>& docs, Index chunk_words) {
  std::vector<data::Document> wiki_docs, web_docs;
  for (const auto& d : docs) {
    (d.stream == data::StreamTag::WikiLike ? wiki_docs : web_docs).push_back(d);
  }
  ChunkPools pools;
  pools.wiki = data::chunk_documents(wiki_docs, chunk_words, data::StreamTag::WikiLike);
  auto web = data::chunk_documents(web_docs, chunk_words, data::StreamTag::WebLike);
  const Index offset = static_cast<Index>(wiki_docs.size());
  for (auto& c : web) c.doc += offset;
  pools.all = pools.wiki;
  pools.all.insert(pools.all.end(), web.begin(), web.end());
  return pools;
}

// ---------------------------------------------------------------------------

int cmd_build_vocab(const CommonArgs& args) {
  const cli::RunConfig cfg = resolve_config(args);
  const std::string out = prepare_out(args, cfg);
  const auto docs = load_corpus_files(cfg.io.corpus);
  std::vector<std::string> texts;
  for (const auto& d : docs) texts.push_back(d.plain);
  tok::VocabOptions opts;
  opts.max_piece_len = cfg.max_piece_len;
  opts.min_count = cfg.min_count;
  const tok::Vocab vocab = tok::build_vocab(texts, cfg.vocab_size, opts);
  tok::save_vocab(vocab, out + "/vocab.txt");
  std::cout << "vocab pieces=" << vocab.size() << " -> " << out << "/vocab.txt\n";
  return 0;
}

int cmd_gen_data(const CommonArgs& args) {
  const cli::RunConfig cfg = resolve_config(args);
  const std::string out = prepare_out(args, cfg);
  const data::SyntheticCorpus corpus = data::gen_synthetic_corpus(cfg.corpus);
  data::write_corpus(corpus.wiki_docs, out + "/corpus_wiki.txt");
  data::write_corpus(corpus.web_docs, out + "/corpus_web.txt");
  data::write_ct_dataset(corpus.ct_pool, out + "/ct_pool.jsonl");
  data::write_ct_dataset(corpus.ct_test, out + "/ct_test.jsonl");
  data::write_ad_dataset(corpus.ad_examples, out + "/ad.jsonl");
  std::cout << "corpus: wiki_docs=" << corpus.wiki_docs.size()
            << " web_docs=" << corpus.web_docs.size() << " ct_pool=" << corpus.ct_pool.size()
            << " ct_test=" << corpus.ct_test.size() << " ad=" << corpus.ad_examples.size()
            << "\n";

  if (!cfg.io.vocab.empty()) {
    const tok::Vocab vocab = tok::load_vocab(cfg.io.vocab);
    std::vector<data::Document> docs = corpus.wiki_docs;
    docs.insert(docs.end(), corpus.web_docs.begin(), corpus.web_docs.end());
    const ChunkPools pools = chunk_pools(docs, cfg.chunk_words);

    data::PackOptions pack;
    pack.max_seq_len = cfg.model.max_seq_len;
    pack.mask_rate = cfg.mask_rate;
    pack.alpha = cfg.alpha;

    Rng rng(derive_seed(cfg.master_seed, 0x5a1));
    train::MlmNspStream mlm_stream(pools.all, vocab, pack, data::kObjMlm | data::kObjNsp);
    std::vector<data::TrainingExample> mlmnsp;
    for (Index i = 0; i < cfg.shard_examples; ++i) mlmnsp.push_back(mlm_stream.next(rng));
    data::write_example_shard(mlmnsp, out + "/shard_mlmnsp.jsonl");

    std::vector<data::TrainingExample> hyp;
    for (const auto& c : pools.wiki) {
      if (static_cast<Index>(hyp.size()) >= cfg.shard_examples) break;
      hyp.push_back(data::make_hyp_example(c, vocab, pack));
    }
    data::write_example_shard(hyp, out + "/shard_hyp.jsonl");

    std::vector<data::TrainingExample> pad;
    for (std::size_t i = 0; i < pools.all.size(); ++i) {
      if (static_cast<Index>(pad.size()) >= cfg.shard_examples) break;
      const auto& chunk = pools.all[i];
      if (data::whitespace_split(chunk.text).size() < 6) continue;
      std::size_t other;
      do {
        other = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(pools.all.size()) - 1));
      } while (other == i);
      const data::AdPair pair = data::gen_pad_pair(chunk.text, pools.all[other].text, rng);
      Rng* sample = chunk.stream == data::StreamTag::WebLike ? &rng : nullptr;
      pad.push_back(data::make_pad_example(pair.positive, vocab, pack, sample));
      pad.push_back(data::make_pad_example(pair.negative, vocab, pack, sample));
    }
    data::write_example_shard(pad, out + "/shard_pad.jsonl");
    std::cout << "shards: mlmnsp=" << mlmnsp.size() << " hyp=" << hyp.size()
              << " pad=" << pad.size() << "\n";
  }
  return 0;
}

int cmd_pretrain(const CommonArgs& args) {
  const cli::RunConfig cfg = resolve_config(args);
  const std::string out = prepare_out(args, cfg);
  if (cfg.io.vocab.empty()) throw Error("CONFIG_INVALID", "pretrain needs io.vocab / --vocab");
  if (cfg.io.shards.empty()) throw Error("CONFIG_INVALID", "pretrain needs io.shards / --shards");
  const tok::Vocab vocab = tok::load_vocab(cfg.io.vocab);
  const model::ModelConfig mc = model_config_with_vocab(cfg, vocab);
  model::Model m = model::init_model(mc, cfg.model_seed);

  std::unique_ptr<train::VectorStream> mlm, hyp, pad;
  train::PretrainStreams streams;
  if (cfg.pretrain.objectives & (data::kObjMlm | data::kObjNsp)) {
    mlm = std::make_unique<train::VectorStream>(
        data::read_example_shard(cfg.io.shards + "/shard_mlmnsp.jsonl"));
    streams.mlm_nsp = mlm.get();
  }
  if (cfg.pretrain.objectives & data::kObjHyp) {
    hyp = std::make_unique<train::VectorStream>(
        data::read_example_shard(cfg.io.shards + "/shard_hyp.jsonl"));
    streams.hyp = hyp.get();
  }
  if (cfg.pretrain.objectives & data::kObjPad) {
    pad = std::make_unique<train::VectorStream>(
        data::read_example_shard(cfg.io.shards + "/shard_pad.jsonl"));
    streams.pad = pad.get();
  }
  const train::PretrainResult result = train::pretrain(m, streams, cfg.pretrain);
  model::save_checkpoint(m, out + "/model.ckpt");
  train::write_loss_log(result.log, out + "/loss_log.tsv");
  std::cout << "pretrained steps=" << result.steps << " examples=" << result.examples << " -> "
            << out << "/model.ckpt\n";
  return 0;
}

int cmd_finetune(const CommonArgs& args) {
  const cli::RunConfig cfg = resolve_config(args);
  const std::string out = prepare_out(args, cfg);
  if (cfg.io.vocab.empty()) throw Error("CONFIG_INVALID", "finetune needs io.vocab / --vocab");
  if (cfg.io.checkpoint.empty()) {
    throw Error("CONFIG_INVALID", "finetune needs io.checkpoint / --checkpoint");
  }
  if (cfg.io.train.empty()) throw Error("CONFIG_INVALID", "finetune needs io.train / --train");
  const tok::Vocab vocab = tok::load_vocab(cfg.io.vocab);
  const model::Model base = model::load_checkpoint(cfg.io.checkpoint);

  train::TaskDataset dataset, held_out;
  if (cfg.task == train::Task::CT) {
    dataset = train::encode_ct_dataset(data::read_ct_dataset(cfg.io.train), vocab,
                                       base.cfg.max_seq_len);
    if (!cfg.io.test.empty()) {
      held_out = train::encode_ct_dataset(data::read_ct_dataset(cfg.io.test), vocab,
                                          base.cfg.max_seq_len);
    }
  } else {
    dataset = train::encode_ad_dataset(data::read_ad_dataset(cfg.io.train), vocab,
                                       base.cfg.max_seq_len);
    if (!cfg.io.test.empty()) {
      held_out = train::encode_ad_dataset(data::read_ad_dataset(cfg.io.test), vocab,
                                          base.cfg.max_seq_len);
    }
  }
  const train::CVReport report = train::cross_validate(base, dataset, held_out, cfg.task,
                                                       cfg.finetune, cfg.split_mode_for(cfg.task));
  write_text(out + "/cv_report.json", report.to_json().dump(2) + "\n");
  std::printf("cv %s accuracy=%.4f±%.4f perplexity=%.4f±%.4f runs=%zu\n",
              train::task_name(cfg.task).c_str(), report.acc_mean, report.acc_std,
              report.ppl_mean, report.ppl_std, report.runs.size());
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  const cli::RunConfig cfg = resolve_config(args);
  const std::string out = prepare_out(args, cfg);
  if (cfg.io.vocab.empty() || cfg.io.checkpoint.empty() || cfg.io.test.empty()) {
    throw Error("CONFIG_INVALID", "evaluate needs --vocab, --checkpoint and --test");
  }
  const tok::Vocab vocab = tok::load_vocab(cfg.io.vocab);
  const model::Model m = model::load_checkpoint(cfg.io.checkpoint);
  train::TaskDataset dataset;
  if (cfg.task == train::Task::CT) {
    dataset = train::encode_ct_dataset(data::read_ct_dataset(cfg.io.test), vocab,
                                       m.cfg.max_seq_len);
  } else {
    dataset = train::encode_ad_dataset(data::read_ad_dataset(cfg.io.test), vocab,
                                       m.cfg.max_seq_len);
  }
  const train::Metrics metrics =
      train::evaluate(m, dataset.encoded, cfg.task, cfg.finetune.batch_size);
  write_text(out + "/metrics.json", metrics.to_json().dump(2) + "\n");
  std::printf("%s accuracy=%.4f perplexity=%.4f n=%lld\n", train::task_name(cfg.task).c_str(),
              metrics.accuracy, metrics.perplexity, static_cast<long long>(metrics.n));
  return 0;
}

int cmd_gradcheck(const CommonArgs& args, double tol, double h) {
  const cli::RunConfig cfg = resolve_config(args);
  prepare_out(args, cfg);
  model::ModelConfig mc = cfg.model;
  if (mc.vocab_size == 0) {
    throw Error("CONFIG_INVALID", "gradcheck needs model.vocab_size in the config");
  }
  const GradCheckReport report = grad_check_encoder(mc, cfg.master_seed, tol, h);
  write_text(args.out_dir + "/gradcheck.json",
             nlohmann::json{{"max_rel_err", report.max_rel_err},
                            {"tol", report.tol},
                            {"pass", report.pass},
                            {"n_coords", report.n_coords},
                            {"worst_param", report.worst_param}}
                     .dump(2) +
                 "\n");
  std::printf("max_rel_err=%.3e tol=%.1e coords=%lld worst=%s %s\n", report.max_rel_err,
              report.tol, static_cast<long long>(report.n_coords), report.worst_param.c_str(),
              report.pass ? "PASS" : "FAIL");
  if (!report.pass) {
    std::cerr << "ERROR:GRADCHECK_FAILED: max_rel_err above tolerance\n";
    return 2;
  }
  return 0;
}

int cmd_experiment(const CommonArgs& args) {
  const cli::RunConfig cfg = resolve_config(args);
  const std::string out = prepare_out(args, cfg);
  train::ExperimentParams params;
  params.corpus = cfg.corpus;
  params.model_cfg = cfg.model;
  params.vocab_target = cfg.vocab_size;
  params.vocab_options.max_piece_len = cfg.max_piece_len;
  params.vocab_options.min_count = cfg.min_count;
  params.chunk_words = cfg.chunk_words;
  params.pack.max_seq_len = cfg.model.max_seq_len;
  params.pack.mask_rate = cfg.mask_rate;
  params.pack.alpha = cfg.alpha;
  params.pretrain_cfg = cfg.pretrain;
  params.finetune_cfg = cfg.finetune;
  params.arms = cfg.arms;
  params.finetune_sizes = cfg.finetune_sizes;
  params.task = cfg.task;
  params.model_seed = cfg.model_seed;
  params.max_hyp_examples = cfg.max_hyp_examples;
  params.max_pad_pairs = cfg.max_pad_pairs;
  const train::ExperimentReport report = train::run_alignment_experiment(params);
  write_text(out + "/ordering_report.tsv", report.to_tsv());
  write_text(out + "/experiment.json", report.to_json().dump(2) + "\n");
  std::cout << report.to_tsv();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"objective-aligned pretraining and few-example finetuning"};
  app.require_subcommand(1);

  CommonArgs args;
  double tol = 1e-4, h = 1e-5;

  CLI::App* build_vocab = app.add_subcommand("build-vocab", "build a subword vocabulary");
  add_common(build_vocab, args);
  CLI::App* gen_data = app.add_subcommand("gen-data", "generate the synthetic corpus and datasets");
  add_common(gen_data, args);
  CLI::App* pretrain = app.add_subcommand("pretrain", "multitask pretraining from shards");
  add_common(pretrain, args);
  CLI::App* finetune = app.add_subcommand("finetune", "cross-validated few-example finetuning");
  add_common(finetune, args);
  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
  add_common(evaluate, args);
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck, args);
  gradcheck->add_option("--tol", tol, "max relative error tolerance");
  gradcheck->add_option("--h", h, "central difference step");
  CLI::App* experiment = app.add_subcommand("experiment", "alignment ordering experiment");
  add_common(experiment, args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (build_vocab->parsed()) return cmd_build_vocab(args);
    if (gen_data->parsed()) return cmd_gen_data(args);
    if (pretrain->parsed()) return cmd_pretrain(args);
    if (finetune->parsed()) return cmd_finetune(args);
    if (evaluate->parsed()) return cmd_evaluate(args);
    if (gradcheck->parsed()) return cmd_gradcheck(args, tol, h);
    if (experiment->parsed()) return cmd_experiment(args);
  } catch (const Error& e) {
    std::cerr << "ERROR:" << e.code() << ": " << e.what() << "\n";
    return e.code().rfind("CONFIG", 0) == 0 ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "ERROR:INTERNAL: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
