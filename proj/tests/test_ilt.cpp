#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "test_support.hpp"

using namespace opckit;

TEST_CASE("relax is the elementwise sigmoid", "[ilt]") {
  Grid<double> theta(4, 0.0);
  theta(1, 0) = 1.0;
  theta(2, 0) = 1e6;
  theta(3, 0) = -1e6;
  const auto mask = relax(theta, 4.0);
  CHECK(mask(0, 0) == Catch::Approx(0.5));
  CHECK(mask(1, 0) == Catch::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-12));
  CHECK(mask(1, 0) == Catch::Approx(0.98201).margin(1e-5));
  CHECK(mask(2, 0) == Catch::Approx(1.0));
  CHECK(mask(3, 0) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("ilt_loss is non-negative and zero only at a perfect soft print", "[ilt]") {
  std::mt19937_64 rng(41);
  const auto model = testsupport::tiny_model(2);
  const auto target = testsupport::random_binary(16, 0.4, rng);
  std::uniform_real_distribution<double> tval(-1.0, 1.0);
  Grid<double> theta(16);
  for (auto& v : theta.data()) v = tval(rng);
  CHECK(ilt_loss(theta, target, model) >= 0.0);
}

TEST_CASE("ilt_loss matches an independent recomputation from primitives", "[ilt]") {
  std::mt19937_64 rng(42);
  const auto model = testsupport::tiny_model(2);
  const auto target = testsupport::random_binary(16, 0.4, rng);
  std::uniform_real_distribution<double> tval(-1.0, 1.0);
  Grid<double> theta(16);
  for (auto& v : theta.data()) v = tval(rng);

  IltConfig cfg;
  const double loss = ilt_loss(theta, target, model, cfg);

  // Recompose from the public primitives.
  const auto mask = relax(theta, cfg.mask_steepness);
  const auto intensity = aerial_image(mask, model, model.corners.nominal);
  double expect = 0.0;
  for (std::size_t i = 0; i < intensity.cell_count(); ++i) {
    const double z = 1.0 / (1.0 + std::exp(-cfg.resist_steepness * (intensity.data()[i] - model.resist_threshold)));
    const double err = z - target.data()[i];
    expect += err * err;
  }
  CHECK(loss == Catch::Approx(expect).margin(1e-10));
}

TEST_CASE("analytic gradient matches central finite differences", "[ilt]") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> tval(-0.8, 0.8);
  for (int trial = 0; trial < 3; ++trial) {
    const auto model = testsupport::tiny_model(2);
    const auto target = testsupport::random_binary(12, 0.4, rng);
    Grid<double> theta(12);
    for (auto& v : theta.data()) v = tval(rng);

    const auto grad = ilt_gradient(theta, target, model);
    const double h = 1e-5;
    double max_rel = 0.0;
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        auto plus = theta, minus = theta;
        plus(x, y) += h;
        minus(x, y) -= h;
        const double fd = (ilt_loss(plus, target, model) - ilt_loss(minus, target, model)) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(grad(x, y)), 1e-8});
        max_rel = std::max(max_rel, std::abs(grad(x, y) - fd) / scale);
      }
    CHECK(max_rel <= 1e-4);
  }
}

TEST_CASE("gradient is equivariant under cyclic shifts", "[ilt]") {
  std::mt19937_64 rng(44);
  const auto model = testsupport::tiny_model(2);
  const auto target = testsupport::random_binary(16, 0.4, rng);
  std::uniform_real_distribution<double> tval(-1.0, 1.0);
  Grid<double> theta(16);
  for (auto& v : theta.data()) v = tval(rng);

  const auto rolled_grad = ilt_gradient(roll(theta, 5, -2), roll(target, 5, -2), model);
  const auto grad_rolled = roll(ilt_gradient(theta, target, model), 5, -2);
  for (std::size_t i = 0; i < rolled_grad.cell_count(); ++i)
    CHECK(rolled_grad.data()[i] == Catch::Approx(grad_rolled.data()[i]).margin(1e-9));
}

TEST_CASE("optimize returns immediately on an already-solved warm start", "[ilt]") {
  std::mt19937_64 rng(45);
  const auto model = testsupport::desk_model();
  const auto cfg = testsupport::desk_ilt();
  const auto target = testsupport::make_via_pattern(256, 4, 24, 70, rng);
  const auto cold = optimize(target, std::nullopt, model, cfg);
  REQUIRE(cold.epe.violations == 0);

  const auto warm = optimize(target, cold.mask, model, cfg);
  CHECK(warm.iters_used <= 1);
  CHECK(warm.epe.violations == 0);
}

TEST_CASE("cold start reduces EPE with a non-increasing loss history", "[ilt]") {
  std::mt19937_64 rng(46);
  const auto model = testsupport::desk_model();
  const auto cfg = testsupport::desk_ilt();
  const auto target = testsupport::make_via_pattern(256, 4, 24, 70, rng);

  const auto initial = epe_violations(litho(to_mask(target), model), target, cfg.epe, 1.0);
  const auto result = optimize(target, std::nullopt, model, cfg);

  CHECK(result.epe.violations <= initial.violations);
  CHECK(result.iters_used <= cfg.max_iters);
  REQUIRE(result.loss_history.size() >= 2);
  for (std::size_t i = 1; i < result.loss_history.size(); ++i)
    CHECK(result.loss_history[i] <= result.loss_history[i - 1] + 1e-12);
  // The solver must report a binary mask.
  for (double v : result.mask.data()) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("optimize is deterministic", "[ilt]") {
  std::mt19937_64 rng(47);
  const auto model = testsupport::desk_model();
  const auto cfg = testsupport::desk_ilt();
  const auto target = testsupport::make_via_pattern(256, 3, 24, 70, rng);
  const auto a = optimize(target, std::nullopt, model, cfg);
  const auto b = optimize(target, std::nullopt, model, cfg);
  CHECK(a.mask == b.mask);
  CHECK(a.iters_used == b.iters_used);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.epe.violations == b.epe.violations);
}

TEST_CASE("fast_solver handles the empty target", "[ilt]") {
  const auto model = testsupport::desk_model();
  const auto result = fast_solver(PatternGrid(64), model, 8, testsupport::desk_epe());
  CHECK(count_ones(binarize(result.mask, 0.5)) == 0);
  CHECK(result.epe.violations == 0);
  CHECK(result.iters_used == 0);
}

TEST_CASE("biased mask prints a superset of the unbiased print", "[ilt]") {
  // Single non-negative kernel so mask growth cannot reduce intensity.
  const auto model = make_synthetic_model(1, 6.0, 0.5, 37, 0.1, 1.0);
  PatternGrid target(128);
  for (int y = 40; y < 88; ++y)
    for (int x = 40; x < 88; ++x) target(x, y) = 1;
  const auto plain = litho(to_mask(target), model);
  const auto biased = litho(to_mask(dilate(target, 8)), model);
  for (std::size_t i = 0; i < plain.cell_count(); ++i)
    if (plain.data()[i]) CHECK(biased.data()[i] == 1);
}

TEST_CASE("fast solver is no better than converged ILT on sparse vias", "[ilt]") {
  std::mt19937_64 rng(48);
  const auto model = testsupport::desk_model();
  const auto cfg = testsupport::desk_ilt();
  const auto target = testsupport::make_via_pattern(256, 5, 24, 60, rng);
  const auto fast = fast_solver(target, model, 8, cfg.epe);
  const auto rigorous = optimize(target, std::nullopt, model, cfg);
  CHECK(fast.epe.violations >= rigorous.epe.violations);
}
