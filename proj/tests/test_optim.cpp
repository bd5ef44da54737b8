#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "helpers.hpp"
#include "splatfit/jsonutil.hpp"
#include "splatfit/optim.hpp"

using namespace splatfit;
using namespace splatfit::testutil;

namespace {

SceneSpec small_scene(int size = 16, size_t points = 2000) {
  SceneSpec spec;
  SpherePrimitive s;
  s.radius = 0.5;
  spec.spheres.push_back(s);
  spec.rig.count = 3;
  spec.rig.elevation = 0.3;
  spec.image_size = size;
  spec.gt_point_count = points;
  return spec;
}

}  // namespace

TEST_CASE("zero gradients leave parameters untouched") {
  Rng rng = make_rng(1, "optim-zero");
  SplatSet splats = random_splat_cloud(rng, 5);
  // identity quaternions have an exactly representable unit norm, so the
  // post-step renormalization divides by exactly 1
  for (Splat& s : splats) {
    s.rot[0] = 1;
    s.rot[1] = s.rot[2] = s.rot[3] = 0;
  }
  const SplatSet before = splats;
  OptimizerState state;
  adam_step(splats, std::vector<SplatGrad>(5), state, {}, {});
  for (size_t i = 0; i < splats.size(); ++i)
    for (int k = 0; k < kSplatParamCount; ++k)
      CHECK(splat_param(splats[i], k) == splat_param(before[i], k));
  CHECK(state.step == 1);

  // a non-unit quaternion is only renormalized, never otherwise moved
  SplatSet one(1);
  one[0].rot[0] = 3.0;
  one[0].rot[2] = 4.0;
  OptimizerState st2;
  adam_step(one, std::vector<SplatGrad>(1), st2, {}, {});
  CHECK(one[0].rot[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(one[0].rot[2] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(one[0].rot[1] == 0.0);
}

TEST_CASE("the first adam step moves by the learning rate against the gradient") {
  SplatSet splats(1);
  splats[0].opacity_logit = 0.3;
  std::vector<SplatGrad> grads(1);
  grads[0][9] = 0.5;
  OptimizerState state;
  LearningRates lr;
  adam_step(splats, grads, state, lr, {});
  CHECK(splats[0].opacity_logit == doctest::Approx(0.3 - lr.opacity).epsilon(1e-12));

  // and a negative gradient moves the parameter up
  grads[0][9] = -2.0;
  SplatSet splats2(1);
  OptimizerState state2;
  adam_step(splats2, grads, state2, lr, {});
  CHECK(splats2[0].opacity_logit > 0.0);
}

TEST_CASE("adam moments follow the textbook recursion for two steps") {
  SplatSet splats(1);
  OptimizerState state;
  LearningRates lr;
  AdamParams adam;
  std::vector<SplatGrad> grads(1);

  double x = 0.0, m = 0.0, v = 0.0;
  const double gs[2] = {0.5, -0.2};
  for (int t = 1; t <= 2; ++t) {
    grads[0][9] = gs[t - 1];
    adam_step(splats, grads, state, lr, adam);
    m = adam.beta1 * m + (1 - adam.beta1) * gs[t - 1];
    v = adam.beta2 * v + (1 - adam.beta2) * gs[t - 1] * gs[t - 1];
    const double mhat = m / (1 - std::pow(adam.beta1, t));
    const double vhat = v / (1 - std::pow(adam.beta2, t));
    x -= lr.opacity * mhat / (std::sqrt(vhat) + adam.eps);
    CHECK(splats[0].opacity_logit == doctest::Approx(x).epsilon(1e-14));
  }
}

TEST_CASE("a scalar quadratic converges to its minimum") {
  SplatSet splats(1);
  splats[0].center = Vec3(10.0, 0, 0);
  OptimizerState state;
  LearningRates lr;
  lr.position = 0.01;
  std::vector<SplatGrad> grads(1);
  int steps = 0;
  for (; steps < 10000; ++steps) {
    grads[0][0] = splats[0].center.x() - 3.0;
    adam_step(splats, grads, state, lr, {});
    if (std::abs(splats[0].center.x() - 3.0) < 1e-3) break;
  }
  CHECK(std::abs(splats[0].center.x() - 3.0) < 1e-3);
  CHECK(steps < 10000);
}

TEST_CASE("non-finite gradients abort with the offending parameter named") {
  SplatSet splats(3);
  std::vector<SplatGrad> grads(3);
  grads[2][7] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState state;
  try {
    adam_step(splats, grads, state, {}, {});
    FAIL("expected NonFiniteGradientError");
  } catch (const NonFiniteGradientError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("splat 2") != std::string::npos);
    CHECK(msg.find(splat_param_name(7)) != std::string::npos);
  }
}

TEST_CASE("quaternions stay unit and log scales stay clamped") {
  SplatSet splats(1);
  splats[0].log_scales[0] = -0.05;
  splats[0].log_scales[1] = -9.2;
  OptimizerState state;
  LearningRates lr;
  lr.scale = 10.0;  // huge steps to slam into both clamp ends
  lr.rotation = 0.5;
  std::vector<SplatGrad> grads(1);
  grads[0][7] = -5.0;  // pushes log_scale_u up
  grads[0][8] = 5.0;   // pushes log_scale_v down
  grads[0][4] = 0.3;
  grads[0][5] = -0.2;
  for (int t = 0; t < 5; ++t) adam_step(splats, grads, state, lr, {});
  CHECK(splats[0].log_scales[0] <= 0.0);
  CHECK(splats[0].log_scales[1] >= std::log(1e-4) - 1e-12);
  const double qn = std::sqrt(
      splats[0].rot[0] * splats[0].rot[0] + splats[0].rot[1] * splats[0].rot[1] +
      splats[0].rot[2] * splats[0].rot[2] + splats[0].rot[3] * splats[0].rot[3]);
  CHECK(qn == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fit descends on a small scene and is deterministic") {
  const SceneBundle gt = generate_scene(small_scene());
  const SplatSet init =
      init_splats(gt, 40, 0.02, InitMode::SurfaceSample, 5);

  TrainConfig cfg;
  cfg.iterations = 60;
  cfg.feature_warmup = 15;
  cfg.init.count = 40;
  cfg.seed = 9;
  cfg.threads = 1;

  std::ostringstream log_a, log_b;
  const FitResult a = fit(gt, init, cfg, &log_a);
  REQUIRE(a.history.size() == 60);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += a.history[i].losses.total;
    last += a.history[50 + i].losses.total;
  }
  CHECK(last < first);
  for (const IterationLog& entry : a.history) CHECK(std::isfinite(entry.losses.total));

  const FitResult b = fit(gt, init, cfg, &log_b);
  CHECK(log_a.str() == log_b.str());
  for (size_t i = 0; i < a.splats.size(); ++i)
    for (int k = 0; k < kSplatParamCount; ++k)
      CHECK(splat_param(a.splats[i], k) == splat_param(b.splats[i], k));

  // one json object per iteration, in order
  std::istringstream lines(log_a.str());
  std::string line;
  int iter = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("iter") == iter++);
    CHECK(j.contains("L_c"));
    CHECK(j.contains("total"));
  }
  CHECK(iter == 60);
}

TEST_CASE("feature loss stays off until its warmup iteration") {
  const SceneBundle gt = generate_scene(small_scene());
  const SplatSet init = init_splats(gt, 30, 0.02, InitMode::SurfaceSample, 6);
  TrainConfig cfg;
  cfg.iterations = 8;
  cfg.feature_warmup = 4;
  cfg.threads = 1;
  const FitResult r = fit(gt, init, cfg);
  for (int i = 0; i < 4; ++i) CHECK(r.history[i].losses.feature == 0.0);
  bool any_on = false;
  for (int i = 4; i < 8; ++i) any_on |= r.history[i].losses.feature != 0.0;
  CHECK(any_on);
}

TEST_CASE("fit refuses fewer than two training views") {
  const SceneBundle gt = generate_scene(small_scene());
  const SplatSet init = init_splats(gt, 10, 0.02, InitMode::SurfaceSample, 7);
  TrainConfig cfg;
  cfg.iterations = 1;
  cfg.train_views = {1};
  CHECK_THROWS_AS(fit(gt, init, cfg), InsufficientViewsError);
  cfg.train_views = {0, 5};
  CHECK_THROWS_AS(fit(gt, init, cfg), InvalidSpecError);
}

TEST_CASE("checkpoints fire on the configured period and at the end") {
  const SceneBundle gt = generate_scene(small_scene());
  const SplatSet init = init_splats(gt, 10, 0.02, InitMode::SurfaceSample, 8);
  TrainConfig cfg;
  cfg.iterations = 7;
  cfg.checkpoint_every = 3;
  std::vector<int> fired;
  fit(gt, init, cfg, nullptr, [&](int iter, const SplatSet&) { fired.push_back(iter); });
  CHECK(fired == std::vector<int>{3, 6, 7});
}

TEST_CASE("gradient checks pass for the photometric and ranking objectives") {
  for (const std::string& sel : {std::string("color"), std::string("ranking")}) {
    const GradCheckReport r = gradient_check(sel, 0, 1e-4, 6);
    INFO(sel, " max_rel_err=", r.max_rel_err, " checked=", r.checked,
         " skipped=", r.skipped);
    CHECK(r.pass);
    CHECK(r.checked >= 30);
    // The primary sweep probes 6 splats x all fields; the top-up sweep may
    // add more, so checked + skipped is a lower bound, and every field must
    // end up with at least one accepted probe.
    CHECK(r.checked + r.skipped >= 6 * kSplatParamCount);
    REQUIRE(r.checked_per_param.size() == static_cast<size_t>(kSplatParamCount));
    for (size_t n : r.checked_per_param) CHECK(n > 0);
  }
  CHECK_THROWS_AS(gradient_check("bogus", 0), InvalidSpecError);
}

TEST_CASE("an impossible tolerance fails and reports the offenders") {
  const GradCheckReport r = gradient_check("color", 0, 1e-15, 3);
  CHECK(!r.pass);
  CHECK(!r.failures.empty());
  CHECK(r.failures[0].rel_err > 1e-15);
}

TEST_CASE("train config json roundtrips and accepts dotted overrides") {
  TrainConfig cfg;
  cfg.iterations = 1234;
  cfg.weights.lambda_feature = 0.125;
  cfg.train_views = {0, 2};
  cfg.init.mode = "depth-backproject";
  nlohmann::json j = train_config_to_json(cfg);
  const TrainConfig back = train_config_from_json(j);
  CHECK(back.iterations == 1234);
  CHECK(back.weights.lambda_feature == 0.125);
  CHECK(back.train_views == cfg.train_views);
  CHECK(back.init.mode == "depth-backproject");
  CHECK(back.lr.position == cfg.lr.position);
  CHECK(back.adam.eps == cfg.adam.eps);

  apply_dotted_override(j, "losses.l3=0");
  apply_dotted_override(j, "lr.opacity=0.1");
  apply_dotted_override(j, "iterations=5");
  const TrainConfig over = train_config_from_json(j);
  CHECK(over.weights.lambda_feature == 0.0);
  CHECK(over.lr.opacity == 0.1);
  CHECK(over.iterations == 5);

  // defaults from an empty object
  const TrainConfig defaults = train_config_from_json(nlohmann::json::object());
  CHECK(defaults.iterations == 3000);
  CHECK(defaults.weights.lambda_distortion == 100.0);
  CHECK(defaults.init.count == 5000);
}

TEST_CASE("invalid train configs are rejected") {
  TrainConfig cfg;
  validate_train_config(cfg);

  TrainConfig bad = cfg;
  bad.iterations = 0;
  CHECK_THROWS_AS(validate_train_config(bad), InvalidSpecError);
  bad = cfg;
  bad.lr.scale = 0.0;
  CHECK_THROWS_AS(validate_train_config(bad), InvalidSpecError);
  bad = cfg;
  bad.train_views = {1, 1};
  CHECK_THROWS_AS(validate_train_config(bad), InvalidSpecError);
  bad = cfg;
  bad.init.mode = "scatter";
  CHECK_THROWS_AS(validate_train_config(bad), InvalidSpecError);
  bad = cfg;
  bad.adam.beta2 = 1.0;
  CHECK_THROWS_AS(validate_train_config(bad), InvalidSpecError);
}
