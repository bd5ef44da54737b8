#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "splatfit/errors.hpp"
#include "splatfit/losses.hpp"
#include "splatfit/rng.hpp"

using namespace splatfit;

namespace {

Image3 random_image3(Rng& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image3 img(w, h);
  for (double& v : img.data()) v = u(rng);
  return img;
}

Image1 random_image1(Rng& rng, int w, int h, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image1 img(w, h);
  for (double& v : img.data()) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("ssim of identical images is one") {
  Rng rng = make_rng(71, "ssim-identity");
  const Image3 img = random_image3(rng, 14, 11);
  CHECK(ssim_mean(img, img) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim of constant images matches the closed form") {
  const double c1 = 0.3, c2 = 0.7;
  Image3 a(9, 7), b(9, 7);
  for (double& v : a.data()) v = c1;
  for (double& v : b.data()) v = c2;
  const double expected =
      (2 * c1 * c2 + 1e-4) / (c1 * c1 + c2 * c2 + 1e-4);
  CHECK(ssim_mean(a, b) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("pure L1 color loss on a constant offset") {
  Image3 a(8, 8), b(8, 8);
  for (double& v : a.data()) v = 0.6;
  for (double& v : b.data()) v = 0.4;
  const ColorLossResult r = color_loss(a, b, 0.0);
  CHECK(r.loss == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(r.mae == doctest::Approx(0.2).epsilon(1e-12));
  for (double v : r.d_rendered.data()) {
    CHECK(v == doctest::Approx(1.0 / (3 * 64)).epsilon(1e-12));
  }
}

TEST_CASE("color loss of identical images is zero") {
  Rng rng = make_rng(73, "color-zero");
  const Image3 img = random_image3(rng, 10, 10);
  const ColorLossResult r = color_loss(img, img, 0.2);
  CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("color loss gradient matches finite differences") {
  Rng rng = make_rng(79, "color-grad");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Image3 target = random_image3(rng, 12, 9);
  Image3 rendered = random_image3(rng, 12, 9);

  const ColorLossResult r = color_loss(rendered, target, 0.2);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int x = static_cast<int>(u(rng) * 12), y = static_cast<int>(u(rng) * 9);
    const int c = static_cast<int>(u(rng) * 3);
    // stay away from the L1 kink
    if (std::abs(rendered.at(x, y, c) - target.at(x, y, c)) < 1e-3) continue;
    ++checked;
    Image3 rp = rendered, rm = rendered;
    rp.at(x, y, c) += h;
    rm.at(x, y, c) -= h;
    const double lp = color_loss(rp, target, 0.2).loss;
    const double lm = color_loss(rm, target, 0.2).loss;
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(fd - r.d_rendered.at(x, y, c)) <
          1e-6 * std::max(1.0, std::abs(fd)));
  }
  CHECK(checked > 30);
}

TEST_CASE("ranking hinge on a two-pixel swap") {
  const double rendered[2] = {2.0, 1.0};
  const double mono[2] = {1.0, 2.0};
  const uint8_t valid[2] = {1, 1};
  const int perm[2] = {1, 0};
  double grad[2] = {0, 0};
  const PatchRankResult r =
      ranking_patch(rendered, mono, valid, perm, 0.01, 0.0, grad);
  CHECK(r.pairs == 2);
  CHECK(r.sum == doctest::Approx(2.02).epsilon(1e-12));
  CHECK(r.sum / r.pairs == doctest::Approx(1.01).epsilon(1e-12));
  // both pairs push pixel 0 shallower and pixel 1 deeper
  CHECK(grad[0] == doctest::Approx(2.0));
  CHECK(grad[1] == doctest::Approx(-2.0));
}

TEST_CASE("correctly ordered depths with wide gaps incur no ranking loss") {
  const double rendered[3] = {1.0, 1.5, 2.2};
  const double mono[3] = {0.1, 0.4, 0.9};
  const uint8_t valid[3] = {1, 1, 1};
  const int perm[3] = {2, 0, 1};
  const PatchRankResult r =
      ranking_patch(rendered, mono, valid, perm, 1e-3, 0.0, {});
  CHECK(r.pairs == 3);
  CHECK(r.sum == 0.0);
}

TEST_CASE("ties and invalid pixels are skipped") {
  const double rendered[2] = {2.0, 1.0};
  const double mono_tied[2] = {1.0, 1.0};
  const uint8_t valid[2] = {1, 1};
  const int perm[2] = {1, 0};
  CHECK(ranking_patch(rendered, mono_tied, valid, perm, 0.01, 0.0, {}).pairs == 0);

  const double mono[2] = {1.0, 2.0};
  const uint8_t invalid[2] = {1, 0};
  CHECK(ranking_patch(rendered, mono, invalid, perm, 0.01, 0.0, {}).pairs == 0);

  // near-tie under the epsilon is skipped as well
  const double mono_close[2] = {1.0, 1.0 + 1e-9};
  CHECK(ranking_patch(rendered, mono_close, valid, perm, 0.01, 1e-8, {}).pairs == 0);
}

TEST_CASE("ranking is exactly invariant under monotone mono warps") {
  Rng rng = make_rng(83, "rank-warp");
  std::uniform_real_distribution<double> u(0.5, 2.0);
  const int n = 64;
  std::vector<double> rendered(n), mono(n);
  std::vector<uint8_t> valid(n, 1);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) {
    rendered[i] = u(rng);
    mono[i] = 0.5 + 0.02 * i;  // strictly increasing with wide gaps
    perm[i] = (i + 17) % n;
  }
  std::shuffle(mono.begin(), mono.end(), rng);

  const PatchRankResult base =
      ranking_patch(rendered, mono, valid, perm, 1e-3, 1e-9, {});
  std::vector<double> warped(n);
  for (int i = 0; i < n; ++i) warped[i] = 0.3 * mono[i] * mono[i] + 1.7;  // monotone
  const PatchRankResult after =
      ranking_patch(rendered, warped, valid, perm, 1e-3, 1e-9, {});
  CHECK(base.pairs == after.pairs);
  CHECK(base.sum == after.sum);  // bitwise: the same branch pattern
}

TEST_CASE("image-level ranking gradient matches finite differences") {
  Rng rng = make_rng(89, "rank-grad");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int w = 16, h = 16;
  Image1 depth = random_image1(rng, w, h, 1.0, 2.0);
  const Image1 mono = random_image1(rng, w, h, 0.2, 0.8);
  Image1 acc(w, h, 1.0);
  acc.at(3, 3) = 0.0;  // one uncovered pixel exercises the validity gate

  Rng prng = make_rng(89, "rank-patches");
  const auto patches = make_patch_permutations(w, h, 8, prng);
  REQUIRE(patches.size() == 4);

  const ImageLossResult r = ranking_loss(depth, mono, acc, patches, 1e-3);
  CHECK(r.terms > 0);
  const double hstep = 1e-7;
  for (int trial = 0; trial < 40; ++trial) {
    const int x = static_cast<int>(u(rng) * w), y = static_cast<int>(u(rng) * h);
    if (acc.at(x, y) == 0.0) continue;
    Image1 dp = depth, dm = depth;
    dp.at(x, y) += hstep;
    dm.at(x, y) -= hstep;
    const double fd = (ranking_loss(dp, mono, acc, patches, 1e-3).loss -
                       ranking_loss(dm, mono, acc, patches, 1e-3).loss) /
                      (2 * hstep);
    CHECK(std::abs(fd - r.d_depth.at(x, y)) < 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("patch tiling covers full tiles with valid permutations") {
  Rng rng = make_rng(97, "patch-tiling");
  const auto patches = make_patch_permutations(40, 24, 16, rng);
  REQUIRE(patches.size() == 2);  // 2 full tiles horizontally, 1 vertically
  for (const auto& p : patches) {
    CHECK(p.x0 + p.side <= 40);
    CHECK(p.y0 + p.side <= 24);
    std::vector<int> seen(p.perm.size(), 0);
    for (int v : p.perm) {
      REQUIRE(v >= 0);
      REQUIRE(v < static_cast<int>(p.perm.size()));
      seen[v]++;
    }
    for (int s : seen) CHECK(s == 1);
  }
}

TEST_CASE("flat depth incurs no smoothness loss") {
  Image1 depth(6, 6, 1.5), mono(6, 6, 0.4), acc(6, 6, 1.0);
  const ImageLossResult r = smoothness_loss(depth, mono, acc, 0.01, 1e-3);
  CHECK(r.loss == 0.0);
  CHECK(r.terms == 2 * 5 * 6);  // right and down pairs of a 6x6 grid
}

TEST_CASE("a depth step across a flat mono region is penalized") {
  Image1 depth(2, 1), mono(2, 1, 5.0), acc(2, 1, 1.0);
  depth.at(0, 0) = 1.0;
  depth.at(1, 0) = 2.0;
  const ImageLossResult r = smoothness_loss(depth, mono, acc, 0.01, 1e-3);
  CHECK(r.terms == 1);
  CHECK(r.loss == doctest::Approx(1.0 - 1e-3).epsilon(1e-12));
  CHECK(r.d_depth.at(1, 0) == doctest::Approx(1.0));
  CHECK(r.d_depth.at(0, 0) == doctest::Approx(-1.0));
}

TEST_CASE("a mono edge exempts the pair from smoothing") {
  Image1 depth(2, 1), mono(2, 1), acc(2, 1, 1.0);
  depth.at(0, 0) = 1.0;
  depth.at(1, 0) = 2.0;
  mono.at(0, 0) = 0.0;
  mono.at(1, 0) = 1.0;  // normalized difference 1 >= m_e
  const ImageLossResult r = smoothness_loss(depth, mono, acc, 0.01, 1e-3);
  CHECK(r.terms == 0);
  CHECK(r.loss == 0.0);
}

TEST_CASE("smoothness gradient matches finite differences") {
  Rng rng = make_rng(101, "smooth-grad");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int w = 12, h = 12;
  // near-constant mono with two outliers: the outliers stretch the
  // normalization range so ordinary pairs stay inside the margin gate while
  // pairs touching an outlier are exempt
  Image1 mono(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      mono.at(x, y) = 0.3 + 1e-5 * std::sin(2.1 * x + 1.3 * y);
  mono.at(2, 9) = 1.0;
  mono.at(8, 4) = 1.0;
  Image1 depth = random_image1(rng, w, h, 1.0, 1.5);
  Image1 acc(w, h, 1.0);
  acc.at(7, 2) = 0.0;

  const ImageLossResult r = smoothness_loss(depth, mono, acc, 0.01, 1e-3);
  CHECK(r.terms > 0);
  const double hstep = 1e-7;
  for (int trial = 0; trial < 40; ++trial) {
    const int x = static_cast<int>(u(rng) * w), y = static_cast<int>(u(rng) * h);
    Image1 dp = depth, dm = depth;
    dp.at(x, y) += hstep;
    dm.at(x, y) -= hstep;
    const double fd =
        (smoothness_loss(dp, mono, acc, 0.01, 1e-3).loss -
         smoothness_loss(dm, mono, acc, 0.01, 1e-3).loss) / (2 * hstep);
    CHECK(std::abs(fd - r.d_depth.at(x, y)) < 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("pyramid scale lists are powers of two") {
  CHECK(pyramid_scales(1) == std::vector<int>{1});
  CHECK(pyramid_scales(3) == std::vector<int>{1, 2, 4});
  CHECK_THROWS_AS(pyramid_scales(0), InvalidSpecError);
}
