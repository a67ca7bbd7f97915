#include "fel/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

namespace fel::cli {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw Error("CONFIG_INVALID", where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) {
      throw Error("CONFIG_INVALID", "unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_train_section(const nlohmann::json& j, train::TrainConfig& cfg,
                         const std::string& where) {
  check_keys(j,
             {"lr", "beta1", "beta2", "adam_eps", "batch_size", "steps", "epochs", "seed",
              "scope", "multitask", "objectives", "size", "k_folds", "n_seeds", "reset_head"},
             where);
  get_if(j, "lr", cfg.lr);
  get_if(j, "beta1", cfg.beta1);
  get_if(j, "beta2", cfg.beta2);
  get_if(j, "adam_eps", cfg.adam_eps);
  get_if(j, "batch_size", cfg.batch_size);
  get_if(j, "steps", cfg.max_steps);
  get_if(j, "epochs", cfg.epochs);
  get_if(j, "seed", cfg.seed);
  if (j.contains("scope")) cfg.scope = model::parse_scope(j.at("scope").get<std::string>());
  get_if(j, "multitask", cfg.multitask_finetune);
  if (j.contains("objectives")) {
    cfg.objectives =
        data::objectives_from_names(j.at("objectives").get<std::vector<std::string>>());
  }
  get_if(j, "size", cfg.finetune_size);
  get_if(j, "k_folds", cfg.k_folds);
  get_if(j, "n_seeds", cfg.n_seeds);
  get_if(j, "reset_head", cfg.reset_head);
  if (cfg.lr <= 0.0) throw Error("CONFIG_INVALID", where + ".lr must be positive");
  if (cfg.batch_size < 1) throw Error("CONFIG_INVALID", where + ".batch_size must be >= 1");
}

nlohmann::json train_section_json(const train::TrainConfig& cfg, bool pretrain_view) {
  nlohmann::json j{{"lr", cfg.lr},
                   {"beta1", cfg.beta1},
                   {"beta2", cfg.beta2},
                   {"adam_eps", cfg.adam_eps},
                   {"batch_size", cfg.batch_size}};
  if (pretrain_view) {
    j["steps"] = cfg.max_steps;
    j["objectives"] = data::objective_names(cfg.objectives);
  } else {
    j["epochs"] = cfg.epochs;
    j["scope"] = model::scope_name(cfg.scope);
    j["multitask"] = cfg.multitask_finetune;
    j["size"] = cfg.finetune_size;
    j["k_folds"] = cfg.k_folds;
    j["n_seeds"] = cfg.n_seeds;
    j["reset_head"] = cfg.reset_head;
  }
  return j;
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  nlohmann::json arms_json = nlohmann::json::array();
  for (unsigned arm : arms) arms_json.push_back(data::objective_names(arm));
  nlohmann::json pretrain_json = train_section_json(pretrain, true);
  pretrain_json["mask_rate"] = mask_rate;
  pretrain_json["shard_examples"] = shard_examples;
  nlohmann::json finetune_json = train_section_json(finetune, false);
  finetune_json["split"] = split;
  return nlohmann::json{
      {"master_seed", master_seed},
      {"tokenizer",
       {{"vocab_size", vocab_size},
        {"alpha", alpha},
        {"max_piece_len", max_piece_len},
        {"min_count", min_count}}},
      {"model", model.to_json()},
      {"pretrain", pretrain_json},
      {"finetune", finetune_json},
      {"experiment",
       {{"corpus", corpus.to_json()},
        {"arms", arms_json},
        {"finetune_sizes", finetune_sizes},
        {"task", train::task_name(task)},
        {"chunk_words", chunk_words},
        {"model_seed", model_seed},
        {"max_hyp_examples", max_hyp_examples},
        {"max_pad_pairs", max_pad_pairs}}},
      {"io",
       {{"corpus", io.corpus},
        {"vocab", io.vocab},
        {"checkpoint", io.checkpoint},
        {"shards", io.shards},
        {"train", io.train},
        {"test", io.test}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig cfg;
  cfg.model.vocab_size = 0;  // resolved from the vocab file unless set
  cfg.arms = {data::kAllObjectives, data::kObjMlm | data::kObjNsp};
  cfg.finetune_sizes = {25, 50, 100, 200};
  cfg.pretrain.batch_size = 256;
  cfg.pretrain.max_steps = 1000;
  cfg.finetune.batch_size = 64;

  check_keys(j, {"master_seed", "tokenizer", "model", "pretrain", "finetune", "experiment", "io"},
             "config");
  get_if(j, "master_seed", cfg.master_seed);
  cfg.corpus.seed = cfg.master_seed;
  cfg.pretrain.seed = cfg.master_seed;
  cfg.finetune.seed = cfg.master_seed;

  if (j.contains("tokenizer")) {
    const auto& t = j.at("tokenizer");
    check_keys(t, {"vocab_size", "alpha", "max_piece_len", "min_count"}, "tokenizer");
    get_if(t, "vocab_size", cfg.vocab_size);
    get_if(t, "alpha", cfg.alpha);
    get_if(t, "max_piece_len", cfg.max_piece_len);
    get_if(t, "min_count", cfg.min_count);
    if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) {
      throw Error("CONFIG_INVALID", "tokenizer.alpha must be in (0,1]");
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m,
               {"emb_dim", "n_layers", "head_dim", "ffn_dim", "vocab_size", "max_seq_len",
                "dropout", "type_vocab"},
               "model");
    get_if(m, "emb_dim", cfg.model.emb_dim);
    get_if(m, "n_layers", cfg.model.n_layers);
    get_if(m, "head_dim", cfg.model.head_dim);
    get_if(m, "ffn_dim", cfg.model.ffn_dim);
    get_if(m, "vocab_size", cfg.model.vocab_size);
    get_if(m, "max_seq_len", cfg.model.max_seq_len);
    get_if(m, "dropout", cfg.model.dropout);
    get_if(m, "type_vocab", cfg.model.type_vocab);
  }
  if (j.contains("pretrain")) {
    auto p = j.at("pretrain");
    if (p.contains("mask_rate")) {
      cfg.mask_rate = p.at("mask_rate").get<double>();
      p.erase("mask_rate");
    }
    if (p.contains("shard_examples")) {
      cfg.shard_examples = p.at("shard_examples").get<Index>();
      p.erase("shard_examples");
    }
    parse_train_section(p, cfg.pretrain, "pretrain");
  }
  if (j.contains("finetune")) {
    auto f = j.at("finetune");
    if (f.contains("split")) {
      cfg.split = f.at("split").get<std::string>();
      f.erase("split");
    }
    parse_train_section(f, cfg.finetune, "finetune");
    if (cfg.split != "auto") train::parse_split_mode(cfg.split);  // validates
  }
  if (j.contains("experiment")) {
    const auto& e = j.at("experiment");
    check_keys(e,
               {"corpus", "arms", "finetune_sizes", "task", "chunk_words", "model_seed",
                "max_hyp_examples", "max_pad_pairs"},
               "experiment");
    if (e.contains("corpus")) {
      const auto& c = e.at("corpus");
      check_keys(c,
                 {"n_docs", "entity_lexicon_size", "doc_len", "seed", "web_fraction",
                  "ct_pool_size", "ct_test_size", "ad_snippets"},
                 "experiment.corpus");
      get_if(c, "n_docs", cfg.corpus.n_docs);
      get_if(c, "entity_lexicon_size", cfg.corpus.entity_lexicon_size);
      get_if(c, "doc_len", cfg.corpus.doc_len);
      get_if(c, "seed", cfg.corpus.seed);
      get_if(c, "web_fraction", cfg.corpus.web_fraction);
      get_if(c, "ct_pool_size", cfg.corpus.ct_pool_size);
      get_if(c, "ct_test_size", cfg.corpus.ct_test_size);
      get_if(c, "ad_snippets", cfg.corpus.ad_snippets);
    }
    if (e.contains("arms")) {
      cfg.arms.clear();
      for (const auto& arm : e.at("arms")) {
        cfg.arms.push_back(data::objectives_from_names(arm.get<std::vector<std::string>>()));
      }
    }
    if (e.contains("finetune_sizes")) {
      cfg.finetune_sizes = e.at("finetune_sizes").get<std::vector<Index>>();
    }
    if (e.contains("task")) cfg.task = train::parse_task(e.at("task").get<std::string>());
    get_if(e, "chunk_words", cfg.chunk_words);
    get_if(e, "model_seed", cfg.model_seed);
    get_if(e, "max_hyp_examples", cfg.max_hyp_examples);
    get_if(e, "max_pad_pairs", cfg.max_pad_pairs);
  }
  if (j.contains("io")) {
    const auto& io = j.at("io");
    check_keys(io, {"corpus", "vocab", "checkpoint", "shards", "train", "test"}, "io");
    get_if(io, "corpus", cfg.io.corpus);
    get_if(io, "vocab", cfg.io.vocab);
    get_if(io, "checkpoint", cfg.io.checkpoint);
    get_if(io, "shards", cfg.io.shards);
    get_if(io, "train", cfg.io.train);
    get_if(io, "test", cfg.io.test);
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  if (!std::filesystem::exists(path)) {
    throw Error("CONFIG_NOT_FOUND", "config file not found: " + path);
  }
  std::ifstream is(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("CONFIG_INVALID", std::string("config parse error: ") + e.what());
  }
  return from_json(j);
}

train::SplitMode RunConfig::split_mode_for(train::Task t) const {
  if (split == "auto") {
    return t == train::Task::CT ? train::SplitMode::CtDisjoint : train::SplitMode::Standard;
  }
  return train::parse_split_mode(split);
}

}  // namespace fel::cli
