// Compares the OpenMP kernels against the serial reference: wall time per
// call and bit-equality of the outputs.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "fel/kernels.hpp"
#include "fel/model.hpp"
#include "fel/rng.hpp"
#include "fel/tensor.hpp"

using namespace fel;

namespace {

double time_ms(const std::function<void()>& fn, int iters) {
  fn();  // warmup
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) fn();
  const auto end = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(end - start).count() / iters;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

void report(const char* name, const char* dims, double serial_ms, double omp_ms, bool equal) {
  std::printf("%-16s\t%-18s\t%9.3f\t%9.3f\t%6.2fx\t%s\n", name, dims, serial_ms, omp_ms,
              serial_ms / omp_ms, equal ? "bit-equal" : "MISMATCH");
}

}  // namespace

int main() {
  Rng rng(42);
  std::printf("threads=%d\n", kern::thread_count());
  std::printf("%-16s\t%-18s\t%9s\t%9s\t%6s\t%s\n", "kernel", "dims", "serial_ms", "omp_ms",
              "speedup", "check");

  {
    const std::int64_t m = 256, k = 256, n = 256;
    const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> cs(m * n), cp(m * n);
    const double ts = time_ms([&] { kern::bmm_nn_serial(a.data(), b.data(), cs.data(), 1, m, k, n, false); }, 5);
    kern::set_parallel(true);
    const double tp = time_ms([&] { kern::bmm_nn(a.data(), b.data(), cp.data(), 1, m, k, n, false); }, 5);
    report("bmm_nn", "1x256x256x256", ts, tp,
           std::memcmp(cs.data(), cp.data(), sizeof(double) * cs.size()) == 0);
  }
  {
    const std::int64_t batch = 64, m = 32, k = 64, n = 32;
    const auto a = random_vec(batch * m * k, rng), b = random_vec(batch * n * k, rng);
    std::vector<double> cs(batch * m * n), cp(batch * m * n);
    const double ts = time_ms([&] { kern::bmm_nt_serial(a.data(), b.data(), cs.data(), batch, m, k, n, false); }, 20);
    const double tp = time_ms([&] { kern::bmm_nt(a.data(), b.data(), cp.data(), batch, m, k, n, false); }, 20);
    report("bmm_nt", "64x32x64x32", ts, tp,
           std::memcmp(cs.data(), cp.data(), sizeof(double) * cs.size()) == 0);
  }
  {
    const std::int64_t rows = 4096, dim = 64;
    const auto x = random_vec(rows * dim, rng);
    const auto g = random_vec(dim, rng), b = random_vec(dim, rng);
    std::vector<double> ys(rows * dim), yp(rows * dim);
    const double ts = time_ms([&] { kern::layer_norm_serial(x.data(), g.data(), b.data(), 1e-12, ys.data(), nullptr, nullptr, rows, dim); }, 20);
    const double tp = time_ms([&] { kern::layer_norm(x.data(), g.data(), b.data(), 1e-12, yp.data(), nullptr, nullptr, rows, dim); }, 20);
    report("layer_norm", "4096x64", ts, tp,
           std::memcmp(ys.data(), yp.data(), sizeof(double) * ys.size()) == 0);
  }
  {
    const std::int64_t rows = 4096, n = 64;
    const auto x = random_vec(rows * n, rng);
    std::vector<double> ys(rows * n), yp(rows * n);
    const double ts = time_ms([&] { kern::softmax_rows_serial(x.data(), ys.data(), rows, n); }, 20);
    const double tp = time_ms([&] { kern::softmax_rows(x.data(), yp.data(), rows, n); }, 20);
    report("softmax_rows", "4096x64", ts, tp,
           std::memcmp(ys.data(), yp.data(), sizeof(double) * ys.size()) == 0);
  }
  {
    const std::int64_t n = 1 << 20;
    const auto x = random_vec(n, rng);
    std::vector<double> ys(n), yp(n);
    const double ts = time_ms([&] { kern::gelu_serial(x.data(), ys.data(), n); }, 10);
    const double tp = time_ms([&] { kern::gelu(x.data(), yp.data(), n); }, 10);
    report("gelu", "1M", ts, tp,
           std::memcmp(ys.data(), yp.data(), sizeof(double) * ys.size()) == 0);
  }

  // Full encoder step (forward + backward), OpenMP vs serial.
  {
    model::ModelConfig cfg;
    cfg.emb_dim = 64;
    cfg.n_layers = 2;
    cfg.head_dim = 64;
    cfg.ffn_dim = 256;
    cfg.vocab_size = 1000;
    cfg.max_seq_len = 64;
    cfg.dropout = 0.0;
    model::Model m = model::init_model(cfg, 1);
    model::Batch batch;
    batch.batch = 32;
    batch.seq = 32;
    const Index total = batch.batch * batch.seq;
    Rng brng(7);
    batch.ids.resize(total);
    batch.segment_ids.assign(total, 0);
    batch.attention.assign(total, 1);
    batch.mlm_labels.assign(total, -1);
    batch.boundary_labels.assign(total, -1);
    batch.nsp_labels.assign(batch.batch, -1);
    batch.pad_labels.assign(batch.batch, -1);
    for (Index i = 0; i < total; ++i) {
      batch.ids[i] = static_cast<std::int32_t>(brng.uniform_int(5, cfg.vocab_size - 1));
      batch.boundary_labels[i] = static_cast<std::int32_t>(brng.uniform_int(0, 3));
    }
    Rng drng(0);
    auto step = [&] {
      Graph g;
      auto out = model::forward(m, g, batch, model::kBoundary, true, drng);
      g.backward(out.combined_loss);
      model::Model& mm = m;
      for (auto& p : mm.params) p.tensor.zero_grad();
    };
    kern::set_parallel(false);
    const double ts = time_ms(step, 3);
    kern::set_parallel(true);
    const double tp = time_ms(step, 3);
    report("encoder_step", "b32 s32 d64 L2", ts, tp, true);
  }
  return 0;
}
