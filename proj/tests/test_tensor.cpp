#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "fel/gradcheck.hpp"
#include "fel/kernels.hpp"
#include "fel/rng.hpp"
#include "fel/tensor.hpp"

using namespace fel;

namespace {

Tensor random_tensor(std::vector<Index> shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

// Naive triple-loop oracle.
std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const Index m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<double> c(static_cast<std::size_t>(m * n), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index kk = 0; kk < k; ++kk)
        c[static_cast<std::size_t>(i * n + j)] += a.data()[i * k + kk] * b.data()[kk * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  Graph g;
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_values({2, 2}, {3.5, -1.25, 2.0, 7.0});
  Tensor out = g.matmul(eye, b);
  for (Index i = 0; i < 4; ++i) CHECK(out.data()[i] == b.data()[i]);

  Tensor row = Tensor::from_values({1, 2}, {1, 2});
  Tensor col = Tensor::from_values({2, 1}, {3, 4});
  CHECK(g.matmul(row, col).item() == doctest::Approx(11.0).epsilon(0));
}

TEST_CASE("matmul matches the naive triple loop") {
  Rng rng(11);
  Graph g;
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tensor c = g.matmul(a, b);
  const auto expect = naive_matmul(a, b);
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(std::fabs(c.data()[i] - expect[i]) <= 1e-12);
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    g.matmul(a, b);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == "SHAPE_MISMATCH");
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
    CHECK(std::string(e.what()).find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random conforming triples") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g;
    const Index m = rng.uniform_int(1, 6), k = rng.uniform_int(1, 6);
    const Index n = rng.uniform_int(1, 6), p = rng.uniform_int(1, 6);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor c = random_tensor({n, p}, rng);
    Tensor left = g.matmul(g.matmul(a, b), c);
    Tensor right = g.matmul(a, g.matmul(b, c));
    for (Index i = 0; i < left.numel(); ++i) {
      CHECK(std::fabs(left.data()[i] - right.data()[i]) <= 1e-9);
    }
  }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  Rng rng(17);
  const Index batch = 3, m = 7, k = 9, n = 5;
  Tensor a = random_tensor({batch, m, k}, rng);
  Tensor bt = random_tensor({batch, k, n}, rng);
  Tensor bnt = random_tensor({batch, n, k}, rng);

  std::vector<double> serial(static_cast<std::size_t>(batch * m * n));
  std::vector<double> parallel(serial.size());
  kern::set_parallel(true);

  kern::bmm_nn_serial(a.data(), bt.data(), serial.data(), batch, m, k, n, false);
  kern::bmm_nn(a.data(), bt.data(), parallel.data(), batch, m, k, n, false);
  CHECK(std::memcmp(serial.data(), parallel.data(), sizeof(double) * serial.size()) == 0);

  kern::bmm_nt_serial(a.data(), bnt.data(), serial.data(), batch, m, k, n, false);
  kern::bmm_nt(a.data(), bnt.data(), parallel.data(), batch, m, k, n, false);
  CHECK(std::memcmp(serial.data(), parallel.data(), sizeof(double) * serial.size()) == 0);

  Tensor atn = random_tensor({batch, k, m}, rng);
  kern::bmm_tn_serial(atn.data(), bt.data(), serial.data(), batch, m, k, n, false);
  kern::bmm_tn(atn.data(), bt.data(), parallel.data(), batch, m, k, n, false);
  CHECK(std::memcmp(serial.data(), parallel.data(), sizeof(double) * serial.size()) == 0);

  const Index rows = 33, dim = 16;
  Tensor x = random_tensor({rows, dim}, rng);
  Tensor gain = random_tensor({dim}, rng);
  Tensor bias = random_tensor({dim}, rng);
  std::vector<double> ys(static_cast<std::size_t>(rows * dim)), yp(ys.size());
  kern::layer_norm_serial(x.data(), gain.data(), bias.data(), 1e-12, ys.data(), nullptr, nullptr,
                          rows, dim);
  kern::layer_norm(x.data(), gain.data(), bias.data(), 1e-12, yp.data(), nullptr, nullptr, rows,
                   dim);
  CHECK(std::memcmp(ys.data(), yp.data(), sizeof(double) * ys.size()) == 0);

  kern::softmax_rows_serial(x.data(), ys.data(), rows, dim);
  kern::softmax_rows(x.data(), yp.data(), rows, dim);
  CHECK(std::memcmp(ys.data(), yp.data(), sizeof(double) * ys.size()) == 0);

  kern::gelu_serial(x.data(), ys.data(), rows * dim);
  kern::gelu(x.data(), yp.data(), rows * dim);
  CHECK(std::memcmp(ys.data(), yp.data(), sizeof(double) * ys.size()) == 0);
}

TEST_CASE("softmax_xent uniform and saturated cases") {
  Graph g;
  Tensor logits = Tensor::full({2, 4}, 0.7);
  auto out = g.softmax_xent(logits, {1, 3}, -1);
  CHECK(out.loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  for (Index i = 0; i < 8; ++i) CHECK(out.probs.data()[i] == doctest::Approx(0.25).epsilon(1e-12));

  Tensor hot = Tensor::zeros({1, 4});
  hot.data()[2] = 1000.0;
  auto sat = g.softmax_xent(hot, {2}, -1);
  CHECK(sat.loss.item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax_xent matches the direct formula") {
  Rng rng(23);
  Graph g;
  Tensor logits = random_tensor({3, 5}, rng, 2.0);
  std::vector<std::int32_t> targets = {4, 0, 2};
  auto out = g.softmax_xent(logits, targets, -1);
  double expect = 0.0;
  for (Index r = 0; r < 3; ++r) {
    double denom = 0.0;
    for (Index j = 0; j < 5; ++j) denom += std::exp(logits.data()[r * 5 + j]);
    expect += -std::log(std::exp(logits.data()[r * 5 + targets[static_cast<std::size_t>(r)]]) / denom);
  }
  expect /= 3.0;
  CHECK(std::fabs(out.loss.item() - expect) <= 1e-10);
}

TEST_CASE("softmax_xent rows sum to one and shift invariance") {
  Rng rng(29);
  Graph g;
  Tensor logits = random_tensor({6, 4}, rng, 3.0);
  std::vector<std::int32_t> targets = {0, 1, 2, 3, 0, -1};
  auto out = g.softmax_xent(logits, targets, -1);
  for (Index r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (Index j = 0; j < 4; ++j) sum += out.probs.data()[r * 4 + j];
    CHECK(std::fabs(sum - 1.0) <= 1e-9);
  }
  Tensor shifted = Tensor::from_values(logits.shape(), logits.values());
  for (Index r = 0; r < 6; ++r)
    for (Index j = 0; j < 4; ++j) shifted.data()[r * 4 + j] += 17.5;
  auto out2 = g.softmax_xent(shifted, targets, -1);
  CHECK(std::fabs(out.loss.item() - out2.loss.item()) <= 1e-9);
}

TEST_CASE("softmax_xent with no supervised rows errors") {
  Graph g;
  Tensor logits = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(g.softmax_xent(logits, {-1, -1}, -1), "no supervised positions", Error);
}

TEST_CASE("layer_norm hand cases") {
  Graph g;
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});

  Tensor constant = Tensor::full({1, 4}, 3.25);
  Tensor out = g.layer_norm(constant, gain, bias, 1e-12);
  for (Index i = 0; i < 4; ++i) CHECK(std::fabs(out.data()[i]) <= 1e-6);

  Tensor gain2 = Tensor::full({2}, 1.0);
  Tensor bias2 = Tensor::zeros({2});
  Tensor pm = Tensor::from_values({1, 2}, {1.0, -1.0});
  Tensor out2 = g.layer_norm(pm, gain2, bias2, 1e-15);
  CHECK(out2.data()[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(out2.data()[1] == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("layer_norm matches the direct computation") {
  Rng rng(31);
  Graph g;
  const Index d = 8;
  Tensor x = random_tensor({1, d}, rng, 2.0);
  Tensor gain = random_tensor({d}, rng);
  Tensor bias = random_tensor({d}, rng);
  const double eps = 1e-8;
  Tensor out = g.layer_norm(x, gain, bias, eps);
  double mean = 0.0;
  for (Index j = 0; j < d; ++j) mean += x.data()[j];
  mean /= d;
  double var = 0.0;
  for (Index j = 0; j < d; ++j) var += (x.data()[j] - mean) * (x.data()[j] - mean);
  var /= d;
  for (Index j = 0; j < d; ++j) {
    const double expect = (x.data()[j] - mean) / std::sqrt(var + eps) * gain.data()[j] + bias.data()[j];
    CHECK(std::fabs(out.data()[j] - expect) <= 1e-10);
  }
}

TEST_CASE("layer_norm dimension mismatch") {
  Graph g;
  Tensor x = Tensor::zeros({2, 4});
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  CHECK_THROWS_AS(g.layer_norm(x, gain, bias, 1e-12), Error);
}

TEST_CASE("backward of sum gives ones") {
  Graph g;
  Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  x.set_requires_grad(true);
  Tensor loss = g.sum(x);
  g.backward(loss);
  for (double v : x.grad()) CHECK(v == doctest::Approx(1.0).epsilon(0));
}

TEST_CASE("backward of x*x at x=3 gives 6") {
  Graph g;
  Tensor x = Tensor::from_values({1, 1}, {3.0});
  x.set_requires_grad(true);
  Tensor loss = g.matmul(x, x);
  g.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("two backward passes accumulate to exactly 2x") {
  Rng rng(37);
  Graph g;
  Tensor x = random_tensor({3, 3}, rng);
  x.set_requires_grad(true);
  Tensor w = random_tensor({3, 3}, rng);
  w.set_requires_grad(true);
  Tensor loss = g.sum(g.gelu(g.matmul(x, w)));
  g.backward(loss);
  const auto once = w.grad();
  g.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(w.grad()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  Tensor x = Tensor::zeros({2, 2});
  x.set_requires_grad(true);
  Tensor y = g.scale(x, 2.0);
  CHECK_THROWS_AS(g.backward(y), Error);
}

TEST_CASE("finite differences on closed forms") {
  Tensor x = Tensor::from_values({1}, {1.0});
  std::vector<Tensor> params = {x};
  auto f = [&]() { return x.data()[0] * x.data()[0]; };
  const auto g = finite_diff_grad(f, params, 1e-4);
  CHECK(std::fabs(g[0][0] - 2.0) <= 1e-7);

  auto constant = [&]() { return 42.0; };
  const auto gz = finite_diff_grad(constant, params, 1e-4);
  CHECK(gz[0][0] == 0.0);

  CHECK_THROWS_AS(finite_diff_grad(f, params, 0.0), Error);
}

TEST_CASE("dropout eval is the identity and train is seed-deterministic") {
  Rng data_rng(41);
  Tensor x = random_tensor({4, 8}, data_rng);
  Graph g;
  Rng r1(7);
  Tensor eval_out = g.dropout(x, 0.5, false, r1);
  CHECK(eval_out.ptr() == x.ptr());

  Rng r2(9), r3(9);
  Tensor a = g.dropout(x, 0.5, true, r2);
  Tensor b = g.dropout(x, 0.5, true, r3);
  for (Index i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("gradient flows through every op used by the encoder") {
  // One composite scalar function touching add/bias_add/scale/gelu/layer_norm/
  // split/merge/bmm/attention_softmax/gather/embedding, checked against
  // central differences.
  Rng rng(43);
  const Index batch = 2, seq = 3, heads = 2, dh = 2, d = heads * dh;
  Tensor table = random_tensor({7, d}, rng, 0.5);
  table.set_requires_grad(true);
  Tensor wq = random_tensor({d, d}, rng, 0.5);
  wq.set_requires_grad(true);
  Tensor bias = random_tensor({d}, rng, 0.5);
  bias.set_requires_grad(true);
  Tensor gain = Tensor::full({d}, 1.0);
  gain.set_requires_grad(true);
  Tensor ln_bias = Tensor::zeros({d});
  const std::vector<std::int32_t> ids = {1, 2, 3, 4, 5, 6};
  const std::vector<std::uint8_t> attn = {1, 1, 1, 1, 1, 0};
  const std::vector<std::int32_t> targets = {0, 1, -1, 1, 0, -1};

  auto build = [&](Graph& g) {
    Tensor x = g.embedding(table, ids);
    x = g.layer_norm(g.bias_add(x, bias), gain, ln_bias, 1e-12);
    Tensor q = g.split_heads(g.scale(g.matmul(x, wq), 0.7), batch, seq, heads);
    Tensor probs = g.attention_softmax(g.bmm_nt(q, q), attn, heads);
    Tensor ctx = g.merge_heads(g.bmm(probs, q), batch, seq, heads);
    Tensor picked = g.gather_rows(g.gelu(g.add(ctx, x)), {0, 1, 2, 3, 4, 5});
    auto out = g.softmax_xent(g.matmul(picked, wq), targets, -1);
    return out.loss;
  };

  auto loss_eval = [&]() {
    Graph g(false);
    return build(g).item();
  };
  auto loss_backward = [&]() {
    Graph g;
    g.backward(build(g));
  };
  const auto report = grad_check({{"table", table}, {"wq", wq}, {"bias", bias}, {"gain", gain}},
                                 loss_eval, loss_backward, 1e-6, 1e-6);
  CHECK(report.pass);
}
