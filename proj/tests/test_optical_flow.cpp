#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "flow_fixtures.hpp"
#include "modgen/optical_flow.hpp"

using namespace modgen;
using modgen::testing::mean_flow;
using modgen::testing::periodic_texture;
using modgen::testing::roll;

namespace {

// Independent RGB -> hue for fully saturated colours.
double rgb_hue(const float* c) {
  const double r = c[0], g = c[1], b = c[2];
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  double h;
  if (mx == r)
    h = 60.0 * std::fmod((g - b) / d, 6.0);
  else if (mx == g)
    h = 60.0 * ((b - r) / d + 2.0);
  else
    h = 60.0 * ((r - g) / d + 4.0);
  return h < 0 ? h + 360.0 : h;
}

}  // namespace

TEST(Flow, IdenticalFramesGiveZero) {
  std::mt19937 rng(4);
  for (int t = 0; t < 3; ++t) {
    auto a = periodic_texture(rng, 48, 48);
    auto f = estimate_flow(a, a);
    float worst = 0.0f;
    for (float v : f.values()) worst = std::max(worst, std::abs(v));
    EXPECT_LE(worst, 1e-3f);
  }
}

TEST(Flow, RecoversHorizontalAndVerticalShift) {
  std::mt19937 rng(8);
  auto a = periodic_texture(rng, 64, 64);
  auto [u, v] = mean_flow(estimate_flow(a, roll(a, 2, 0)), 10);
  EXPECT_NEAR(u, 2.0, 0.5);
  EXPECT_NEAR(v, 0.0, 0.5);
  auto [u2, v2] = mean_flow(estimate_flow(a, roll(a, 0, -3)), 10);
  EXPECT_NEAR(u2, 0.0, 0.5);
  EXPECT_NEAR(v2, -3.0, 0.5);
}

TEST(Flow, ApproximateAntisymmetry) {
  std::mt19937 rng(15);
  auto a = periodic_texture(rng, 64, 64);
  auto b = roll(a, -2, 1);
  auto fwd = estimate_flow(a, b);
  auto bwd = estimate_flow(b, a);
  double err = 0.0;
  int n = 0;
  for (int y = 10; y < 54; ++y)
    for (int x = 10; x < 54; ++x) {
      const Index i = (y * 64 + x) * 2;
      err += std::hypot(fwd[i] + bwd[i], fwd[i + 1] + bwd[i + 1]);
      ++n;
    }
  EXPECT_LT(err / n, 0.5);
}

TEST(Flow, ShapeMismatchThrows) {
  Plane a(Shape{8, 8}), b(Shape{8, 9});
  EXPECT_THROW(estimate_flow(a, b), std::invalid_argument);
  FlowConfig bad;
  bad.iterations = 0;
  EXPECT_THROW(estimate_flow(a, a, bad), std::invalid_argument);
}

TEST(FlowImage, ZeroFlowIsConstantBlack) {
  FlowField f(Shape{5, 7, 2});
  auto img = flow_to_image(f, 10.0);
  EXPECT_EQ(img.modality, Modality::kFlow);
  for (float v : img.pixels.values()) EXPECT_EQ(v, 0.0f);
}

TEST(FlowImage, SaturatesAtMaxMagnitude) {
  FlowField f(Shape{1, 2, 2});
  f[0] = 30.0f;  // beyond max
  f[2] = 2.5f;   // quarter of max
  auto img = flow_to_image(f, 10.0);
  EXPECT_FLOAT_EQ(std::max({img.pixels[0], img.pixels[1], img.pixels[2]}), 1.0f);
  EXPECT_FLOAT_EQ(std::min({img.pixels[0], img.pixels[1], img.pixels[2]}), 0.0f);
  EXPECT_FLOAT_EQ(std::max({img.pixels[3], img.pixels[4], img.pixels[5]}), 0.25f);
}

TEST(FlowImage, OppositeVectorsAreHalfTurnApart) {
  for (double ang : {0.0, 0.3, 1.0, 2.5, 4.0, 5.9}) {
    FlowField f(Shape{1, 2, 2});
    const float u = static_cast<float>(5.0 * std::cos(ang)), v = static_cast<float>(5.0 * std::sin(ang));
    f[0] = u;
    f[1] = v;
    f[2] = -u;
    f[3] = -v;
    EXPECT_NEAR(std::fmod(flow_hue(u, v) - flow_hue(-u, -v) + 360.0, 360.0), 180.0, 1e-9);
    auto img = flow_to_image(f, 5.0);
    const double dh = std::fmod(rgb_hue(&img.pixels[0]) - rgb_hue(&img.pixels[3]) + 360.0, 360.0);
    EXPECT_NEAR(dh, 180.0, 1e-3) << "angle " << ang;
    // Complementary colours at full saturation and value.
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(img.pixels[c] + img.pixels[3 + c], 1.0f, 1e-5);
  }
}

TEST(FlowImage, OutputInUnitCube) {
  std::mt19937 rng(2);
  std::normal_distribution<float> n(0.0f, 8.0f);
  FlowField f(Shape{16, 16, 2});
  for (auto& v : f.storage()) v = n(rng);
  auto img = flow_to_image(f, 4.0);
  for (float v : img.pixels.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(flow_to_image(f, 0.0), std::invalid_argument);
  EXPECT_THROW(to_modality_image(f, 16, 15, 4.0), std::invalid_argument);
}

TEST(Grayscale, LuminanceWeights) {
  Tensor<float> rgb(Shape{1, 1, 3});
  rgb[0] = 1.0f;
  rgb[1] = 0.5f;
  rgb[2] = 0.25f;
  EXPECT_NEAR(to_grayscale(rgb)[0], 0.299 + 0.2935 + 0.0285, 1e-6);
}
