#include "fel/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace fel::model {

namespace {
constexpr double kLnEps = 1e-12;
constexpr double kInitStd = 0.02;
}  // namespace

void ModelConfig::validate() const {
  if (emb_dim <= 0 || n_layers <= 0 || head_dim <= 0 || ffn_dim <= 0 || vocab_size <= 0 ||
      max_seq_len <= 0 || type_vocab <= 0) {
    throw Error("CONFIG_INVALID", "model config extents must be positive");
  }
  if (emb_dim % head_dim != 0) {
    throw Error("CONFIG_INVALID", "emb_dim " + std::to_string(emb_dim) +
                                      " not divisible by head_dim " + std::to_string(head_dim));
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw Error("CONFIG_INVALID", "dropout must be in [0,1)");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"emb_dim", emb_dim},         {"n_layers", n_layers},
                        {"head_dim", head_dim},       {"ffn_dim", ffn_dim},
                        {"vocab_size", vocab_size},   {"max_seq_len", max_seq_len},
                        {"dropout", dropout},         {"type_vocab", type_vocab}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.emb_dim = j.at("emb_dim").get<Index>();
  cfg.n_layers = j.at("n_layers").get<Index>();
  cfg.head_dim = j.at("head_dim").get<Index>();
  cfg.ffn_dim = j.at("ffn_dim").get<Index>();
  cfg.vocab_size = j.at("vocab_size").get<Index>();
  cfg.max_seq_len = j.at("max_seq_len").get<Index>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.type_vocab = j.at("type_vocab").get<Index>();
  return cfg;
}

std::string group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::Embedding: return "embedding";
    case ParamGroup::Transformer: return "transformer";
    case ParamGroup::Head: return "head";
  }
  return "?";
}

std::string head_name(Head h) {
  switch (h) {
    case kMlm: return "mlm";
    case kNsp: return "nsp";
    case kBoundary: return "boundary";
    case kPadCls: return "pad";
  }
  return "?";
}

unsigned head_from_name(const std::string& name) {
  if (name == "mlm") return kMlm;
  if (name == "nsp") return kNsp;
  if (name == "boundary" || name == "hyp") return kBoundary;
  if (name == "pad") return kPadCls;
  throw Error("HEAD_UNKNOWN", "unknown head '" + name + "'");
}

Tensor Model::find(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p.tensor;
  }
  throw Error("PARAM_UNKNOWN", "no parameter named '" + name + "'");
}

Index Model::param_count() const {
  Index n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Model Model::clone() const {
  Model copy;
  copy.cfg = cfg;
  copy.params.reserve(params.size());
  for (const auto& p : params) {
    Tensor t = Tensor::from_values(p.tensor.shape(), p.tensor.values());
    t.set_requires_grad(p.tensor.requires_grad());
    copy.params.push_back(Param{p.name, p.group, p.kind, t});
  }
  return copy;
}

namespace {

void push(Model& m, const std::string& name, ParamGroup g, ParamKind k,
          std::vector<Index> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  m.params.push_back(Param{name, g, k, t});
}

void init_param(Param& p, Rng& rng) {
  switch (p.kind) {
    case ParamKind::Weight:
      for (auto& v : p.tensor.values()) {
        v = std::clamp(rng.normal(0.0, kInitStd), -2.0 * kInitStd, 2.0 * kInitStd);
      }
      break;
    case ParamKind::Bias:
    case ParamKind::LnBias:
      std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0);
      break;
    case ParamKind::LnGain:
      std::fill(p.tensor.values().begin(), p.tensor.values().end(), 1.0);
      break;
  }
}

}  // namespace

Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  const Index d = cfg.emb_dim;

  push(m, "emb.tok", ParamGroup::Embedding, ParamKind::Weight, {cfg.vocab_size, d});
  push(m, "emb.pos", ParamGroup::Embedding, ParamKind::Weight, {cfg.max_seq_len, d});
  push(m, "emb.seg", ParamGroup::Embedding, ParamKind::Weight, {cfg.type_vocab, d});
  push(m, "emb.ln.g", ParamGroup::Embedding, ParamKind::LnGain, {d});
  push(m, "emb.ln.b", ParamGroup::Embedding, ParamKind::LnBias, {d});

  for (Index l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    push(m, pre + "attn.wq", ParamGroup::Transformer, ParamKind::Weight, {d, d});
    push(m, pre + "attn.bq", ParamGroup::Transformer, ParamKind::Bias, {d});
    push(m, pre + "attn.wk", ParamGroup::Transformer, ParamKind::Weight, {d, d});
    push(m, pre + "attn.bk", ParamGroup::Transformer, ParamKind::Bias, {d});
    push(m, pre + "attn.wv", ParamGroup::Transformer, ParamKind::Weight, {d, d});
    push(m, pre + "attn.bv", ParamGroup::Transformer, ParamKind::Bias, {d});
    push(m, pre + "attn.wo", ParamGroup::Transformer, ParamKind::Weight, {d, d});
    push(m, pre + "attn.bo", ParamGroup::Transformer, ParamKind::Bias, {d});
    push(m, pre + "ln1.g", ParamGroup::Transformer, ParamKind::LnGain, {d});
    push(m, pre + "ln1.b", ParamGroup::Transformer, ParamKind::LnBias, {d});
    push(m, pre + "ffn.w1", ParamGroup::Transformer, ParamKind::Weight, {d, cfg.ffn_dim});
    push(m, pre + "ffn.b1", ParamGroup::Transformer, ParamKind::Bias, {cfg.ffn_dim});
    push(m, pre + "ffn.w2", ParamGroup::Transformer, ParamKind::Weight, {cfg.ffn_dim, d});
    push(m, pre + "ffn.b2", ParamGroup::Transformer, ParamKind::Bias, {d});
    push(m, pre + "ln2.g", ParamGroup::Transformer, ParamKind::LnGain, {d});
    push(m, pre + "ln2.b", ParamGroup::Transformer, ParamKind::LnBias, {d});
  }

  // MLM projection is untied from the input embedding.
  push(m, "head.mlm.w", ParamGroup::Head, ParamKind::Weight, {d, cfg.vocab_size});
  push(m, "head.mlm.b", ParamGroup::Head, ParamKind::Bias, {cfg.vocab_size});
  push(m, "head.nsp.w", ParamGroup::Head, ParamKind::Weight, {d, 2});
  push(m, "head.nsp.b", ParamGroup::Head, ParamKind::Bias, {2});
  push(m, "head.boundary.w", ParamGroup::Head, ParamKind::Weight, {d, kBoundaryClasses});
  push(m, "head.boundary.b", ParamGroup::Head, ParamKind::Bias, {kBoundaryClasses});
  push(m, "head.pad.w", ParamGroup::Head, ParamKind::Weight, {d, 2});
  push(m, "head.pad.b", ParamGroup::Head, ParamKind::Bias, {2});
  return m;
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = build_model(cfg);
  Rng rng(seed);
  for (auto& p : m.params) init_param(p, rng);
  return m;
}

const HeadResult& HeadOutputs::by(Head h) const {
  switch (h) {
    case kMlm: return mlm;
    case kNsp: return nsp;
    case kBoundary: return boundary;
    case kPadCls: return pad;
  }
  throw Error("HEAD_UNKNOWN", "bad head id");
}

namespace {

bool any_label(const std::vector<std::int32_t>& labels) {
  return std::any_of(labels.begin(), labels.end(), [](std::int32_t v) { return v >= 0; });
}

Tensor linear(Graph& g, const Model& m, const Tensor& x, const std::string& w,
              const std::string& b) {
  return g.bias_add(g.matmul(x, m.find(w)), m.find(b));
}

}  // namespace

HeadOutputs forward(const Model& model, Graph& graph, const Batch& batch, unsigned heads,
                    bool train_mode, Rng& dropout_rng) {
  const ModelConfig& cfg = model.cfg;
  const Index b = batch.batch, s = batch.seq;
  const Index n = b * s;
  if (s > cfg.max_seq_len) {
    throw Error("SEQ_LEN", "sequence length " + std::to_string(s) + " exceeds max " +
                               std::to_string(cfg.max_seq_len));
  }
  if (static_cast<Index>(batch.ids.size()) != n ||
      static_cast<Index>(batch.segment_ids.size()) != n ||
      static_cast<Index>(batch.attention.size()) != n) {
    throw Error("SHAPE_MISMATCH", "batch field sizes disagree with batch*seq");
  }
  if (heads == 0) throw Error("HEAD_EMPTY", "no heads requested");
  if ((heads & kMlm) && !any_label(batch.mlm_labels))
    throw Error("HEAD_LABELS", "mlm head requested without labels");
  if ((heads & kNsp) && !any_label(batch.nsp_labels))
    throw Error("HEAD_LABELS", "nsp head requested without labels");
  if ((heads & kBoundary) && !any_label(batch.boundary_labels))
    throw Error("HEAD_LABELS", "boundary head requested without labels");
  if ((heads & kPadCls) && !any_label(batch.pad_labels))
    throw Error("HEAD_LABELS", "pad head requested without labels");

  std::vector<std::int32_t> pos_ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) pos_ids[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i % s);

  Graph& g = graph;
  Tensor x = g.add(g.add(g.embedding(model.find("emb.tok"), batch.ids),
                         g.embedding(model.find("emb.pos"), pos_ids)),
                   g.embedding(model.find("emb.seg"), batch.segment_ids));
  x = g.layer_norm(x, model.find("emb.ln.g"), model.find("emb.ln.b"), kLnEps);
  x = g.dropout(x, cfg.dropout, train_mode, dropout_rng);

  const Index heads_n = cfg.n_heads();
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  for (Index l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Tensor q = g.split_heads(g.scale(linear(g, model, x, pre + "attn.wq", pre + "attn.bq"), scale),
                             b, s, heads_n);
    Tensor k = g.split_heads(linear(g, model, x, pre + "attn.wk", pre + "attn.bk"), b, s, heads_n);
    Tensor v = g.split_heads(linear(g, model, x, pre + "attn.wv", pre + "attn.bv"), b, s, heads_n);
    Tensor probs = g.attention_softmax(g.bmm_nt(q, k), batch.attention, heads_n);
    probs = g.dropout(probs, cfg.dropout, train_mode, dropout_rng);
    Tensor ctx = g.merge_heads(g.bmm(probs, v), b, s, heads_n);
    Tensor attn_out = g.dropout(linear(g, model, ctx, pre + "attn.wo", pre + "attn.bo"),
                                cfg.dropout, train_mode, dropout_rng);
    x = g.layer_norm(g.add(x, attn_out), model.find(pre + "ln1.g"), model.find(pre + "ln1.b"),
                     kLnEps);
    Tensor h = g.gelu(linear(g, model, x, pre + "ffn.w1", pre + "ffn.b1"));
    Tensor ffn_out = g.dropout(linear(g, model, h, pre + "ffn.w2", pre + "ffn.b2"), cfg.dropout,
                               train_mode, dropout_rng);
    x = g.layer_norm(g.add(x, ffn_out), model.find(pre + "ln2.g"), model.find(pre + "ln2.b"),
                     kLnEps);
  }

  HeadOutputs out;
  std::vector<Tensor> losses;

  if (heads & kMlm) {
    std::vector<Index> rows;
    std::vector<std::int32_t> labels;
    for (Index i = 0; i < n; ++i) {
      if (batch.mlm_labels[static_cast<std::size_t>(i)] >= 0) {
        rows.push_back(i);
        labels.push_back(batch.mlm_labels[static_cast<std::size_t>(i)]);
      }
    }
    Tensor gathered = g.gather_rows(x, rows);
    Tensor logits = linear(g, model, gathered, "head.mlm.w", "head.mlm.b");
    XentOut xo = g.softmax_xent(logits, labels, -1);
    out.mlm = HeadResult{true, logits, xo.probs, xo.loss, xo.loss.item(), xo.n_supervised};
    out.mlm_rows = std::move(rows);
    losses.push_back(xo.loss);
  }
  if (heads & kNsp) {
    std::vector<Index> cls_rows(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) cls_rows[static_cast<std::size_t>(i)] = i * s;
    Tensor logits = linear(g, model, g.gather_rows(x, cls_rows), "head.nsp.w", "head.nsp.b");
    XentOut xo = g.softmax_xent(logits, batch.nsp_labels, -1);
    out.nsp = HeadResult{true, logits, xo.probs, xo.loss, xo.loss.item(), xo.n_supervised};
    losses.push_back(xo.loss);
  }
  if (heads & kBoundary) {
    Tensor logits = linear(g, model, x, "head.boundary.w", "head.boundary.b");
    XentOut xo = g.softmax_xent(logits, batch.boundary_labels, -1);
    out.boundary = HeadResult{true, logits, xo.probs, xo.loss, xo.loss.item(), xo.n_supervised};
    losses.push_back(xo.loss);
  }
  if (heads & kPadCls) {
    std::vector<Index> cls_rows(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) cls_rows[static_cast<std::size_t>(i)] = i * s;
    Tensor logits = linear(g, model, g.gather_rows(x, cls_rows), "head.pad.w", "head.pad.b");
    XentOut xo = g.softmax_xent(logits, batch.pad_labels, -1);
    out.pad = HeadResult{true, logits, xo.probs, xo.loss, xo.loss.item(), xo.n_supervised};
    losses.push_back(xo.loss);
  }

  Tensor combined = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) combined = g.add(combined, losses[i]);
  out.combined_loss = combined;
  out.combined_value = combined.item();
  combined.check_finite("combined loss");
  return out;
}

Scope parse_scope(const std::string& name) {
  if (name == "pred") return Scope::Pred;
  if (name == "pred+trm") return Scope::PredTrm;
  if (name == "pred+trm+emb") return Scope::PredTrmEmb;
  throw Error("SCOPE_UNKNOWN", "unknown scope '" + name + "'");
}

std::string scope_name(Scope s) {
  switch (s) {
    case Scope::Pred: return "pred";
    case Scope::PredTrm: return "pred+trm";
    case Scope::PredTrmEmb: return "pred+trm+emb";
  }
  return "?";
}

std::vector<Param*> scope_params(Model& model, Scope scope) {
  std::vector<Param*> out;
  for (auto& p : model.params) {
    const bool take = p.group == ParamGroup::Head ||
                      (scope != Scope::Pred && p.group == ParamGroup::Transformer) ||
                      (scope == Scope::PredTrmEmb && p.group == ParamGroup::Embedding);
    if (take) out.push_back(&p);
  }
  return out;
}

void reset_heads(Model& model, unsigned heads, std::uint64_t seed) {
  for (unsigned bit : {kMlm, kNsp, kBoundary, kPadCls}) {
    if (!(heads & bit)) continue;
    const std::string prefix = "head." + head_name(static_cast<Head>(bit)) + ".";
    Rng rng(derive_seed(seed, bit));
    bool found = false;
    for (auto& p : model.params) {
      if (p.name.rfind(prefix, 0) == 0) {
        init_param(p, rng);
        found = true;
      }
    }
    if (!found) throw Error("HEAD_UNKNOWN", "no parameters under " + prefix);
  }
  if (heads & ~kAllHeads) throw Error("HEAD_UNKNOWN", "unknown head bits in reset_heads");
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

constexpr char kMagic[8] = {'F', 'E', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("CKPT_CORRUPT", "checkpoint truncated");
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("IO", "cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  const std::string cfg = model.cfg.to_json().dump();
  write_pod(os, static_cast<std::uint64_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_pod(os, static_cast<std::uint64_t>(model.params.size()));
  for (const auto& p : model.params) {
    write_pod(os, static_cast<std::uint8_t>(p.group));
    write_pod(os, static_cast<std::uint8_t>(p.kind));
    write_pod(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod(os, static_cast<std::uint32_t>(p.tensor.ndim()));
    for (Index e : p.tensor.shape()) write_pod(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char*>(p.tensor.data()),
             static_cast<std::streamsize>(sizeof(double) * p.tensor.values().size()));
  }
  if (!os) throw Error("IO", "write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("IO", "cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error("CKPT_MAGIC", "not a model checkpoint: " + path);
  }
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != kVersion) {
    throw Error("CKPT_VERSION", "unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t cfg_len = 0;
  read_pod(is, cfg_len);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!is) throw Error("CKPT_CORRUPT", "checkpoint truncated in config");
  ModelConfig cfg = ModelConfig::from_json(nlohmann::json::parse(cfg_text));
  Model m = build_model(cfg);

  std::uint64_t n_params = 0;
  read_pod(is, n_params);
  if (n_params != m.params.size()) {
    throw Error("CKPT_SHAPE", "parameter count mismatch: file " + std::to_string(n_params) +
                                  " vs config " + std::to_string(m.params.size()));
  }
  for (auto& p : m.params) {
    std::uint8_t group = 0, kind = 0;
    read_pod(is, group);
    read_pod(is, kind);
    std::uint32_t name_len = 0;
    read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw Error("CKPT_CORRUPT", "checkpoint truncated in parameter name");
    if (name != p.name || group != static_cast<std::uint8_t>(p.group)) {
      throw Error("CKPT_SHAPE", "parameter record '" + name + "' does not match '" + p.name + "'");
    }
    std::uint32_t ndim = 0;
    read_pod(is, ndim);
    std::vector<Index> shape(ndim);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      read_pod(is, v);
      e = static_cast<Index>(v);
    }
    if (shape != p.tensor.shape()) {
      throw Error("CKPT_SHAPE", "shape mismatch for '" + name + "': file " + shape_str(shape) +
                                    " vs " + shape_str(p.tensor.shape()));
    }
    is.read(reinterpret_cast<char*>(p.tensor.data()),
            static_cast<std::streamsize>(sizeof(double) * p.tensor.values().size()));
    if (!is) throw Error("CKPT_CORRUPT", "checkpoint truncated in parameter values");
  }
  return m;
}

}  // namespace fel::model
