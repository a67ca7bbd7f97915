#include "fel/gradcheck.hpp"

#include <cmath>

#include "fel/rng.hpp"

namespace fel {

std::vector<std::vector<Scalar>> finite_diff_grad(const std::function<Scalar()>& f,
                                                  std::vector<Tensor>& params, Scalar h) {
  if (h <= 0.0) throw Error("FD_STEP", "finite difference step must be positive");
  std::vector<std::vector<Scalar>> grads;
  grads.reserve(params.size());
  for (auto& p : params) {
    std::vector<Scalar> g(static_cast<std::size_t>(p.numel()));
    for (Index i = 0; i < p.numel(); ++i) {
      const Scalar saved = p.data()[i];
      p.data()[i] = saved + h;
      const Scalar fp = f();
      p.data()[i] = saved - h;
      const Scalar fm = f();
      p.data()[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw Error("NONFINITE", "non-finite objective during finite differences");
      }
      g[static_cast<std::size_t>(i)] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

GradCheckReport grad_check(std::vector<NamedParam> params,
                           const std::function<Scalar()>& loss_eval,
                           const std::function<void()>& loss_backward, Scalar tol, Scalar h) {
  if (params.empty()) throw Error("NOTHING_TO_CHECK", "nothing to check");
  for (auto& p : params) p.tensor.zero_grad();
  loss_backward();

  std::vector<Tensor> tensors;
  tensors.reserve(params.size());
  for (auto& p : params) tensors.push_back(p.tensor);
  const auto numeric = finite_diff_grad(loss_eval, tensors, h);

  GradCheckReport report;
  report.tol = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& ga = params[pi].tensor.grad();
    const auto& gn = numeric[pi];
    for (std::size_t i = 0; i < gn.size(); ++i) {
      const Scalar denom = std::max({std::fabs(ga[i]), std::fabs(gn[i]), 1e-8});
      const Scalar rel = std::fabs(ga[i] - gn[i]) / denom;
      ++report.n_coords;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].name;
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

namespace {

// Deterministic toy batch that supervises every head at once.
model::Batch toy_batch(const model::ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xba7c4));
  model::Batch b;
  b.batch = 2;
  b.seq = 6;
  const Index n = b.batch * b.seq;
  b.ids.resize(n);
  b.segment_ids.assign(n, 0);
  b.attention.assign(n, 1);
  b.mlm_labels.assign(n, -1);
  b.boundary_labels.assign(n, -1);
  b.nsp_labels.resize(b.batch);
  b.pad_labels.resize(b.batch);
  for (Index s = 0; s < b.batch; ++s) {
    const Index base = s * b.seq;
    b.ids[base] = 2;               // [CLS]
    b.ids[base + b.seq - 1] = 3;   // [SEP]
    for (Index i = 1; i < b.seq - 1; ++i) {
      b.ids[base + i] =
          static_cast<std::int32_t>(rng.uniform_int(5, cfg.vocab_size - 1));
      b.boundary_labels[base + i] = static_cast<std::int32_t>(rng.uniform_int(0, 3));
    }
    // Two supervised MLM positions per sequence; the input already holds the
    // corrupted ids, so any in-range label works for a gradient check.
    b.mlm_labels[base + 1] = static_cast<std::int32_t>(rng.uniform_int(5, cfg.vocab_size - 1));
    b.ids[base + 1] = 4;  // [MASK]
    b.mlm_labels[base + 2] = static_cast<std::int32_t>(rng.uniform_int(5, cfg.vocab_size - 1));
    b.nsp_labels[s] = static_cast<std::int32_t>(rng.uniform_int(0, 1));
    b.pad_labels[s] = static_cast<std::int32_t>(rng.uniform_int(0, 1));
  }
  // One pad position so the attention mask path is exercised.
  b.attention[n - 2] = 0;
  b.boundary_labels[n - 2] = -1;
  return b;
}

}  // namespace

GradCheckReport grad_check_encoder(model::ModelConfig cfg, std::uint64_t seed, Scalar tol,
                                   Scalar h, unsigned heads) {
  cfg.dropout = 0.0;
  model::Model m = model::init_model(cfg, seed);
  const model::Batch batch = toy_batch(cfg, seed);

  Rng unused(0);
  auto loss_eval = [&]() {
    Graph g(false);
    return model::forward(m, g, batch, heads, true, unused).combined_value;
  };
  auto loss_backward = [&]() {
    Graph g;
    auto out = model::forward(m, g, batch, heads, true, unused);
    g.backward(out.combined_loss);
  };

  std::vector<NamedParam> params;
  params.reserve(m.params.size());
  for (auto& p : m.params) params.push_back(NamedParam{p.name, p.tensor});
  return grad_check(std::move(params), loss_eval, loss_backward, tol, h);
}

GradCheckReport grad_check_linear(std::uint64_t seed, Scalar tol, Scalar h) {
  Rng rng(seed);
  const Index n = 5, in_dim = 3, classes = 4;
  Tensor x = Tensor::zeros({n, in_dim});
  for (auto& v : x.values()) v = rng.normal(0.0, 1.0);
  Tensor w = Tensor::zeros({in_dim, classes});
  for (auto& v : w.values()) v = rng.normal(0.0, 0.5);
  w.set_requires_grad(true);
  Tensor bias = Tensor::zeros({classes});
  for (auto& v : bias.values()) v = rng.normal(0.0, 0.5);
  bias.set_requires_grad(true);
  std::vector<std::int32_t> targets(static_cast<std::size_t>(n));
  for (auto& t : targets) t = static_cast<std::int32_t>(rng.uniform_int(0, classes - 1));

  auto loss_eval = [&]() {
    Graph g(false);
    return g.softmax_xent(g.bias_add(g.matmul(x, w), bias), targets, -1).loss.item();
  };
  auto loss_backward = [&]() {
    Graph g;
    auto out = g.softmax_xent(g.bias_add(g.matmul(x, w), bias), targets, -1);
    g.backward(out.loss);
  };
  return grad_check({{"w", w}, {"b", bias}}, loss_eval, loss_backward, tol, h);
}

}  // namespace fel
