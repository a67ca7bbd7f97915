#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fel/error.hpp"
#include "fel/rng.hpp"

namespace fel {

using Scalar = double;
using Index = std::int64_t;

std::string shape_str(const std::vector<Index>& shape);

struct TensorData {
  std::vector<Index> shape;
  std::vector<Scalar> values;
  std::vector<Scalar> grad;  // allocated on first use
  bool requires_grad = false;
  bool interior = false;  // produced by a recorded graph op
};

// Cheap value-semantics handle over shared dense storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<Index> shape);
  static Tensor full(std::vector<Index> shape, Scalar v);
  static Tensor from_values(std::vector<Index> shape, std::vector<Scalar> values);

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<Index>& shape() const { return d_->shape; }
  Index ndim() const { return static_cast<Index>(d_->shape.size()); }
  Index extent(Index axis) const { return d_->shape[static_cast<std::size_t>(axis)]; }
  Index numel() const { return static_cast<Index>(d_->values.size()); }

  Scalar* data() { return d_->values.data(); }
  const Scalar* data() const { return d_->values.data(); }
  std::vector<Scalar>& values() { return d_->values; }
  const std::vector<Scalar>& values() const { return d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  // Grad accumulator with the same shape; zeros on first access.
  std::vector<Scalar>& grad();
  const std::vector<Scalar>& grad() const;
  bool has_grad() const { return !d_->grad.empty(); }
  void zero_grad();

  Scalar item() const;
  void check_finite(const char* what) const;

  std::shared_ptr<TensorData> ptr() const { return d_; }
  static Tensor wrap(std::shared_ptr<TensorData> d) { return Tensor(std::move(d)); }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

struct XentOut {
  Tensor loss;   // scalar, on the graph
  Tensor probs;  // [n, C], detached from the graph
  Index n_supervised = 0;
};

// Reverse-mode tape. Graph construction is single threaded; each recorded op
// saves exactly what its backward closure needs. backward() walks the tape in
// reverse construction order (a valid reverse topological order) once,
// accumulating additively into leaf grads; interior grads are scratch that is
// reset at the start of every backward call.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Tensor matmul(const Tensor& a, const Tensor& b);
  // Batched matmuls over 3-D tensors [batch, rows, cols].
  Tensor bmm(const Tensor& a, const Tensor& b);     // a[B,m,k] * b[B,k,n]
  Tensor bmm_nt(const Tensor& a, const Tensor& b);  // a[B,m,k] * b[B,n,k]^T

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor bias_add(const Tensor& x, const Tensor& bias);  // broadcast last axis
  Tensor scale(const Tensor& x, Scalar c);
  Tensor gelu(const Tensor& x);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps);

  // scores: [B*H, S, S]; key_ok: one byte per (batch, position), 1 = real
  // token. Masked keys get exactly zero attention weight.
  Tensor attention_softmax(const Tensor& scores, const std::vector<std::uint8_t>& key_ok,
                           Index heads);

  // Inverted dropout; identity in eval mode or at rate 0.
  Tensor dropout(const Tensor& x, Scalar rate, bool train, Rng& rng);

  Tensor embedding(const Tensor& table, const std::vector<std::int32_t>& ids);
  Tensor gather_rows(const Tensor& x, const std::vector<Index>& rows);

  // [B*S, H*dh] <-> [B*H, S, dh]
  Tensor split_heads(const Tensor& x, Index batch, Index seq, Index heads);
  Tensor merge_heads(const Tensor& x, Index batch, Index seq, Index heads);

  Tensor sum(const Tensor& x);

  XentOut softmax_xent(const Tensor& logits, const std::vector<std::int32_t>& targets,
                       std::int32_t ignore_index);

  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return recording_; }

 private:
  struct Node {
    std::shared_ptr<TensorData> out;
    std::function<void()> backward;
  };

  Tensor make_out(std::vector<Index> shape);
  void record(const Tensor& out, std::function<void()> bw);

  std::vector<Node> nodes_;
  bool recording_ = true;
};

// Ensures grad is allocated and returns whether gradient should flow into t
// (it is a leaf that wants grads, or an interior node of some graph).
bool wants_grad(const Tensor& t);

}  // namespace fel
