#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "splatfit/errors.hpp"
#include "splatfit/features.hpp"
#include "splatfit/rng.hpp"

using namespace splatfit;

TEST_CASE("constant images produce near-zero normalized features") {
  Image3 img(16, 12);
  for (double& v : img.data()) v = 0.37;
  const FeatureImage f = build_feature_image(img);
  for (double v : f.data()) CHECK(std::abs(v) < 1e-8);
}

TEST_CASE("a vertical step edge lights up the horizontal gradient channel") {
  const int w = 16, h = 12, edge = 8;
  Image3 img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = x >= edge ? 1.0 : 0.0;

  const FeatureImage f = build_feature_image(img);
  for (int y = 2; y < h - 2; ++y) {
    // vertical gradient is exactly zero for a vertical edge
    CHECK(std::abs(f.at(edge, y, 5)) < 1e-9);
    // gradient response near the edge dwarfs the flat region
    CHECK(std::abs(f.at(edge, y, 4)) > 10.0 * std::abs(f.at(1, y, 4)));
    CHECK(std::abs(f.at(edge - 1, y, 6)) > 10.0 * std::abs(f.at(1, y, 6)));
  }
}

TEST_CASE("box downsample averages 2x2 blocks with floor dimensions") {
  Image3 img(5, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = x + 10.0 * y + 100.0 * c;

  const Image3 down = box_downsample2(img);
  CHECK(down.width() == 2);
  CHECK(down.height() == 1);
  CHECK(down.at(0, 0, 0) == doctest::Approx((0 + 1 + 10 + 11) / 4.0));
  CHECK(down.at(1, 0, 0) == doctest::Approx((2 + 3 + 12 + 13) / 4.0));
  CHECK(down.at(1, 0, 2) == doctest::Approx((2 + 3 + 12 + 13) / 4.0 + 200.0));
}

TEST_CASE("pyramid levels have floor-halved dimensions") {
  Image3 img(13, 9);
  for (double& v : img.data()) v = 0.5;
  const FeaturePyramid pyr = build_feature_pyramid(img, {1, 2, 4});
  REQUIRE(pyr.levels.size() == 3);
  CHECK(pyr.levels[0].features.width() == 13);
  CHECK(pyr.levels[0].features.height() == 9);
  CHECK(pyr.levels[1].features.width() == 6);
  CHECK(pyr.levels[1].features.height() == 4);
  CHECK(pyr.levels[2].features.width() == 3);
  CHECK(pyr.levels[2].features.height() == 2);
}

TEST_CASE("invalid pyramid scale lists are rejected") {
  Image3 img(16, 16);
  CHECK_THROWS_AS(build_feature_pyramid(img, {}), InvalidSpecError);
  CHECK_THROWS_AS(build_feature_pyramid(img, {2, 4}), InvalidSpecError);
  CHECK_THROWS_AS(build_feature_pyramid(img, {1, 3}), InvalidSpecError);
  CHECK_THROWS_AS(build_feature_pyramid(img, {1, 4, 2}), InvalidSpecError);
}

TEST_CASE("sampling at pixel centers reproduces stored features") {
  Rng rng = make_rng(61, "feature-sample");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image3 img(12, 10);
  for (double& v : img.data()) v = u(rng);
  const FeaturePyramid pyr = build_feature_pyramid(img, {1, 2});

  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 12; ++x) {
      const FeatureSample s = sample_feature(pyr, 1, Vec2(x + 0.5, y + 0.5));
      CHECK(s.in_frame);
      for (int c = 0; c < kFeatureChannels; ++c) {
        CHECK(s.f[c] == doctest::Approx(pyr.levels[0].features.at(x, y, c)).epsilon(1e-12));
      }
    }
  }

  // midpoint between two horizontal neighbors is their average
  const FeatureSample mid = sample_feature(pyr, 1, Vec2(4.0, 2.5));
  for (int c = 0; c < kFeatureChannels; ++c) {
    const double avg = 0.5 * (pyr.levels[0].features.at(3, 2, c) +
                              pyr.levels[0].features.at(4, 2, c));
    CHECK(mid.f[c] == doctest::Approx(avg).epsilon(1e-12));
  }
}

TEST_CASE("out-of-frame positions are flagged but still clamp-sample") {
  Image3 img(8, 6);
  for (double& v : img.data()) v = 0.25;
  const FeaturePyramid pyr = build_feature_pyramid(img, {1});
  CHECK(sample_feature(pyr, 1, Vec2(0.0, 0.0)).in_frame);
  CHECK(sample_feature(pyr, 1, Vec2(7.99, 5.99)).in_frame);
  CHECK(!sample_feature(pyr, 1, Vec2(-0.01, 3.0)).in_frame);
  CHECK(!sample_feature(pyr, 1, Vec2(8.0, 3.0)).in_frame);
  CHECK(!sample_feature(pyr, 1, Vec2(4.0, 6.0)).in_frame);
  CHECK(std::isfinite(sample_feature(pyr, 1, Vec2(-5.0, 40.0)).f[0]));
}

TEST_CASE("requesting a missing scale throws") {
  Image3 img(8, 8);
  const FeaturePyramid pyr = build_feature_pyramid(img, {1, 2});
  CHECK_THROWS_AS(sample_feature(pyr, 4, Vec2(1, 1)), InvalidSpecError);
}

TEST_CASE("sampling gradients match finite differences") {
  Rng rng = make_rng(67, "feature-grad");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image3 img(20, 16);
  for (double& v : img.data()) v = u(rng);
  const FeaturePyramid pyr = build_feature_pyramid(img, {1, 2, 4});

  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 60; ++trial) {
    const int scale = std::array{1, 2, 4}[trial % 3];
    Vec2 p(1.0 + 18.0 * u(rng), 1.0 + 14.0 * u(rng));
    // stay away from bilinear cell crossings at this scale
    const double cx = p.x() / scale - 0.5, cy = p.y() / scale - 0.5;
    if (std::abs(cx - std::round(cx)) < 4 * h / scale ||
        std::abs(cy - std::round(cy)) < 4 * h / scale) {
      continue;
    }
    ++checked;
    const FeatureSample s = sample_feature(pyr, scale, p);
    const FeatureSample xp = sample_feature(pyr, scale, p + Vec2(h, 0));
    const FeatureSample xm = sample_feature(pyr, scale, p - Vec2(h, 0));
    const FeatureSample yp = sample_feature(pyr, scale, p + Vec2(0, h));
    const FeatureSample ym = sample_feature(pyr, scale, p - Vec2(0, h));
    for (int c = 0; c < kFeatureChannels; ++c) {
      CHECK(std::abs((xp.f[c] - xm.f[c]) / (2 * h) - s.dfdx[c]) < 1e-5);
      CHECK(std::abs((yp.f[c] - ym.f[c]) / (2 * h) - s.dfdy[c]) < 1e-5);
    }
  }
  CHECK(checked >= 60);
}
