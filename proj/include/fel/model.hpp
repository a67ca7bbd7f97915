#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fel/rng.hpp"
#include "fel/tensor.hpp"

#include "json.hpp"

namespace fel::model {

constexpr Index kBoundaryClasses = 4;

struct ModelConfig {
  Index emb_dim = 256;
  Index n_layers = 2;
  Index head_dim = 64;
  Index ffn_dim = 3072;
  Index vocab_size = 0;
  Index max_seq_len = 128;
  double dropout = 0.1;
  Index type_vocab = 2;

  Index n_heads() const { return emb_dim / head_dim; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

enum class ParamGroup : std::uint8_t { Embedding = 0, Transformer = 1, Head = 2 };
enum class ParamKind : std::uint8_t { Weight = 0, Bias = 1, LnGain = 2, LnBias = 3 };

std::string group_name(ParamGroup g);

// Prediction heads. Boundary serves both hyperlink pretraining and CT
// finetuning; PadCls serves both pseudo-acronym pretraining and AD.
enum Head : unsigned {
  kMlm = 1u,
  kNsp = 2u,
  kBoundary = 4u,
  kPadCls = 8u,
};
constexpr unsigned kAllHeads = kMlm | kNsp | kBoundary | kPadCls;

std::string head_name(Head h);
unsigned head_from_name(const std::string& name);

struct Param {
  std::string name;
  ParamGroup group;
  ParamKind kind;
  Tensor tensor;
};

struct Model {
  ModelConfig cfg;
  std::vector<Param> params;

  Tensor find(const std::string& name) const;
  Index param_count() const;
  Model clone() const;
};

// Registry with zero-valued tensors, shapes and order fixed by the config.
Model build_model(const ModelConfig& cfg);
Model init_model(const ModelConfig& cfg, std::uint64_t seed);

// One already-padded batch. Label value -1 means "ignore".
struct Batch {
  Index batch = 0;
  Index seq = 0;
  std::vector<std::int32_t> ids;              // batch*seq
  std::vector<std::int32_t> segment_ids;      // batch*seq
  std::vector<std::uint8_t> attention;        // batch*seq, 1 = real token
  std::vector<std::int32_t> mlm_labels;       // batch*seq
  std::vector<std::int32_t> boundary_labels;  // batch*seq
  std::vector<std::int32_t> nsp_labels;       // batch
  std::vector<std::int32_t> pad_labels;       // batch
};

struct HeadResult {
  bool present = false;
  Tensor logits;
  Tensor probs;  // detached softmax of the logits rows
  Tensor loss;
  double loss_value = 0.0;
  Index n_labels = 0;
};

struct HeadOutputs {
  HeadResult mlm, nsp, boundary, pad;
  Tensor combined_loss;
  double combined_value = 0.0;
  // Row indices (into batch*seq) that the MLM logits correspond to.
  std::vector<Index> mlm_rows;

  const HeadResult& by(Head h) const;
};

HeadOutputs forward(const Model& model, Graph& graph, const Batch& batch, unsigned heads,
                    bool train_mode, Rng& dropout_rng);

enum class Scope { Pred, PredTrm, PredTrmEmb };

Scope parse_scope(const std::string& name);
std::string scope_name(Scope s);

// Trainable parameters for a backpropagation scope; the complement is frozen.
std::vector<Param*> scope_params(Model& model, Scope scope);

void reset_heads(Model& model, unsigned heads, std::uint64_t seed);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace fel::model
