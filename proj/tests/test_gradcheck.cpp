#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fel/gradcheck.hpp"

using namespace fel;

namespace {

model::ModelConfig toy_config() {
  model::ModelConfig cfg;
  cfg.emb_dim = 16;
  cfg.n_layers = 1;
  cfg.head_dim = 8;  // two attention heads
  cfg.ffn_dim = 32;
  cfg.vocab_size = 29;
  cfg.max_seq_len = 8;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("linear model gradients are near machine precision") {
  const auto report = grad_check_linear(3, 1e-8);
  CHECK(report.pass);
  CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("toy encoder with all four heads passes at 1e-4") {
  const auto report = grad_check_encoder(toy_config(), 7, 1e-4);
  INFO("max_rel_err=", report.max_rel_err, " worst=", report.worst_param);
  CHECK(report.pass);
}

TEST_CASE("every head passes the gradient check in isolation") {
  for (unsigned head : {model::kMlm, model::kNsp, model::kBoundary, model::kPadCls}) {
    const auto report = grad_check_encoder(toy_config(), 11, 1e-4, 1e-5, head);
    INFO("head=", head, " max_rel_err=", report.max_rel_err, " worst=", report.worst_param);
    CHECK(report.pass);
  }
}

TEST_CASE("empty parameter list is an explicit error") {
  auto eval = []() { return 0.0; };
  auto backward = []() {};
  CHECK_THROWS_WITH_AS(grad_check({}, eval, backward, 1e-4, 1e-5), "nothing to check", Error);
}
