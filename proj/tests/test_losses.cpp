#include "doctest.h"

#include "wal/training.hpp"

#include <algorithm>
#include <cmath>

using namespace wal;

namespace {

double naive_bce(int y, double f) {
  const double p = 1.0 / (1.0 + std::exp(-f));
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

ModelParams tiny_params() {
  Rng rng(1);
  ModelShape shape;
  shape.d_in = 3;
  shape.d_emb = 2;
  shape.bvf_count = 1;
  ModelParams p = init_params(shape, rng);
  p.disc.bvf = Mat::Constant(1, 2, 0.5);
  return p;
}

}  // namespace

TEST_CASE("bce loss reference values") {
  CHECK(bce_loss(1, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_loss(1, 30.0) <= 1e-12);
  CHECK(bce_loss(0, 2.0) == doctest::Approx(2.0 + std::log1p(std::exp(-2.0))).epsilon(1e-15));
  CHECK(bce_loss(0, 2.0) == doctest::Approx(2.126928).epsilon(1e-6));
  CHECK(bce_loss(0, -800.0) == 0.0);
  CHECK(std::isfinite(bce_loss(1, -800.0)));
  CHECK_THROWS_AS(bce_loss(2, 0.0), ValidationError);
  CHECK_THROWS_AS(bce_grad(-1, 0.0), ValidationError);
}

TEST_CASE("stable bce matches the naive formula and is convex") {
  for (int y : {0, 1}) {
    for (double f = -20.0; f <= 20.0; f += 0.25) {
      // The naive form cancels in 1 - p, so compare relative to its own magnitude.
      CHECK(std::abs(bce_loss(y, f) - naive_bce(y, f)) <= 1e-7 * std::max(1.0, naive_bce(y, f)));
      CHECK(bce_loss(y, f) >= 0.0);
      const double h = 1e-3;
      CHECK(bce_loss(y, f + h) - 2 * bce_loss(y, f) + bce_loss(y, f - h) > 0.0);
      CHECK(bce_grad(y, f) == doctest::Approx((bce_loss(y, f + 1e-6) - bce_loss(y, f - 1e-6)) / 2e-6).epsilon(1e-6));
    }
  }
}

TEST_CASE("adversarial loss is bce with the label fixed to zero") {
  CHECK(adversarial_loss(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(adversarial_loss(-30.0) <= 1e-12);
  CHECK(adversarial_loss(1.0) == doctest::Approx(1.0 + std::log1p(std::exp(-1.0))).epsilon(1e-15));
  CHECK(adversarial_loss(1.0) == doctest::Approx(1.313262).epsilon(1e-6));
}

TEST_CASE("pair loss routes by the gate") {
  GateDecision d;
  d.z = 0;
  d.f_adv = 3.0;
  PairLoss l = pair_loss(d, SamplerKind::gumbel_hard, 1, 0.0);
  CHECK(l.loss == doctest::Approx(std::log(2.0)));
  CHECK_FALSE(l.routed_adv);

  d.z = 1;
  d.f_adv = 0.0;
  for (int y : {0, 1}) {
    l = pair_loss(d, SamplerKind::gumbel_hard, y, 25.0);
    CHECK(l.loss == doctest::Approx(std::log(2.0)));
    CHECK(l.routed_adv);
  }

  d.soft_weight = 0.5;
  l = pair_loss(d, SamplerKind::softmax_soft, 1, 0.0);
  CHECK(l.loss == doctest::Approx(std::log(2.0)));
  d.soft_weight = 0.25;
  d.f_adv = 1.0;
  l = pair_loss(d, SamplerKind::softmax_soft, 0, 2.0);
  CHECK(l.loss == doctest::Approx(0.75 * naive_bce(0, 2.0) + 0.25 * naive_bce(0, 1.0)));
  CHECK_FALSE(l.routed_adv);
}

TEST_CASE("triplet loss reference values") {
  Mat sim = Mat::Constant(3, 3, 0.1);
  sim.diagonal().setConstant(0.9);
  CHECK(triplet_batch_loss(sim, 0.2) == 0.0);
  CHECK(triplet_batch_loss(Mat::Constant(2, 2, 0.5), 0.2) == doctest::Approx(0.4).epsilon(1e-15));
  Mat dominant = Mat::Zero(4, 4);
  dominant.diagonal().setConstant(0.01);
  CHECK(triplet_batch_loss(dominant, 0.0) == 0.0);

  // Only the hardest negative in each direction counts.
  Mat m(2, 2);
  m << 0.5, 0.6, 0.1, 0.3;
  // i=0: 0.2-0.5+0.6 and 0.2-0.5+0.1 -> 0.3 + 0; i=1: 0.2-0.3+0.1 and 0.2-0.3+0.6 -> 0 + 0.5.
  CHECK(triplet_batch_loss(m, 0.2) == doctest::Approx((0.3 + 0.5) / 2.0));
  CHECK_THROWS_AS(triplet_batch_loss(Mat::Ones(1, 1), 0.2), ValidationError);
  CHECK_THROWS_AS(triplet_batch_loss(Mat::Ones(2, 3), 0.2), ValidationError);
}

TEST_CASE("sgd step follows the momentum and weight decay update") {
  ModelParams p = tiny_params();
  const ModelParams start = p;
  ModelParams g = zeros_like(p);
  for_each_tensor(g, [](std::string_view, auto view) { view.setConstant(0.5); });

  OptimizerState plain = OptimizerState::zeros_for(p);
  sgd_step(p, g, plain, 0.1, 0.0, 0.0);
  for_each_tensor_pair(p, start, [](std::string_view, auto now, auto before) {
    if (now.size() > 0) CHECK(((before.array() - 0.05) - now.array()).abs().maxCoeff() <= 1e-15);
  });

  // Two momentum steps with a constant gradient move by -lr (g + 1.9 g).
  p = start;
  OptimizerState state = OptimizerState::zeros_for(p);
  sgd_step(p, g, state, 0.1, 0.9, 0.0);
  sgd_step(p, g, state, 0.1, 0.9, 0.0);
  for_each_tensor_pair(p, start, [](std::string_view, auto now, auto before) {
    if (now.size() > 0) CHECK(((before.array() - 0.29 * 0.5) - now.array()).abs().maxCoeff() <= 1e-14);
  });

  p = start;
  state = OptimizerState::zeros_for(p);
  sgd_step(p, zeros_like(p), state, 0.1, 0.9, 0.0);
  for_each_tensor_pair(p, start, [](std::string_view, auto now, auto before) { CHECK(now == before); });
}

TEST_CASE("weight decay alone shrinks every parameter norm") {
  ModelParams p = tiny_params();
  OptimizerState state = OptimizerState::zeros_for(p);
  for (int step = 0; step < 3; ++step) {
    const ModelParams before = p;
    sgd_step(p, zeros_like(p), state, 0.1, 0.9, 0.01);
    for_each_tensor_pair(p, before, [](std::string_view name, auto now, auto prev) {
      INFO(name);
      if (prev.norm() > 0) CHECK(now.norm() < prev.norm());
    });
  }
}

TEST_CASE("sgd skips frozen tensors and rejects shape mismatches") {
  ModelParams p = tiny_params();
  const ModelParams start = p;
  ModelParams g = zeros_like(p);
  for_each_tensor(g, [](std::string_view, auto view) { view.setConstant(1.0); });
  OptimizerState state = OptimizerState::zeros_for(p);
  sgd_step(p, g, state, 0.1, 0.9, 0.001, [](std::string_view name) { return !is_discriminator_tensor(name); });
  CHECK(p.disc.bvf == start.disc.bvf);
  CHECK(p.disc.coef == start.disc.coef);
  CHECK(p.disc.bias == start.disc.bias);
  CHECK(state.velocity.disc.bvf.isZero(0.0));
  CHECK(p.lvc_bias != start.lvc_bias);

  ModelParams bad = zeros_like(p);
  bad.vision.bias = Vec::Zero(7);
  const ModelParams before = p;
  CHECK_THROWS_AS(sgd_step(p, bad, state, 0.1, 0.9, 0.0), ValidationError);
  CHECK(p.language.weight == before.language.weight);
}
