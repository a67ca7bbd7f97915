#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fel/model.hpp"
#include "fel/tensor.hpp"

namespace fel {

// Central differences (f(x+h) - f(x-h)) / 2h per coordinate of every listed
// parameter. f must be deterministic (dropout disabled) and is evaluated with
// the parameter values temporarily displaced in place.
std::vector<std::vector<Scalar>> finite_diff_grad(const std::function<Scalar()>& f,
                                                  std::vector<Tensor>& params, Scalar h);

struct GradCheckReport {
  Scalar max_rel_err = 0.0;
  Scalar tol = 0.0;
  bool pass = false;
  Index n_coords = 0;
  std::string worst_param;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Compares analytic gradients (loss_backward accumulates into param grads)
// against finite differences of loss_eval. rel err per coordinate is
// |ga - gn| / max(|ga|, |gn|, 1e-8).
GradCheckReport grad_check(std::vector<NamedParam> params,
                           const std::function<Scalar()>& loss_eval,
                           const std::function<void()>& loss_backward, Scalar tol, Scalar h);

// Toy encoder preset: small batch, all requested heads supervised, dropout
// forced off. Double precision throughout.
GradCheckReport grad_check_encoder(model::ModelConfig cfg, std::uint64_t seed, Scalar tol,
                                   Scalar h = 1e-5, unsigned heads = model::kAllHeads);

// Single linear + softmax cross entropy; gradients here are near machine
// precision, which pins down the finite-difference harness itself.
GradCheckReport grad_check_linear(std::uint64_t seed, Scalar tol, Scalar h = 1e-5);

}  // namespace fel
