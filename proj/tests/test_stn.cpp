#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rstn/gradcheck.hpp"
#include "rstn/stn.hpp"

using namespace rstn;

namespace {

using A = AffineParams<double>;

Tensor<double> rand_t(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return random_uniform<double>(std::move(s), lo, hi, rng);
}

// A random transform that keeps sample points mostly inside the source.
A random_affine(Rng& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  return {{0.7 + u(rng), u(rng), u(rng), u(rng), 0.7 + u(rng), u(rng)}};
}

}  // namespace

TEST(Grid, ThreeByThree) {
  const auto g = make_grid<double>(3, 3);
  EXPECT_EQ(g.ys, (std::vector<double>{-1, 0, 1}));
  EXPECT_EQ(g.xs, (std::vector<double>{-1, 0, 1}));
}

TEST(Grid, TwoByTwoIsCorners) {
  const auto g = make_grid<double>(2, 2);
  EXPECT_EQ(g.at(0, 0), (Point<double>{-1, -1}));
  EXPECT_EQ(g.at(1, 1), (Point<double>{1, 1}));
  EXPECT_EQ(g.at(0, 1), (Point<double>{-1, 1}));
}

TEST(Grid, CropGridForDownsampleThree) {
  const auto e = output_extent(100, 100, 3);
  const auto g = make_grid<double>(e.h, e.w);
  EXPECT_EQ(g.size(), 1089u);
  EXPECT_EQ(g.h, 33u);
}

TEST(Grid, EndpointsAndEqualSpacing) {
  for (std::size_t n : {1u, 2u, 5u, 17u, 50u}) {
    const auto g = make_grid<double>(n, n + 1);
    if (n == 1) {
      EXPECT_EQ(g.ys[0], 0.0);
      continue;
    }
    EXPECT_EQ(g.ys.front(), -1.0);
    EXPECT_EQ(g.ys.back(), 1.0);
    for (std::size_t i = 1; i < n; ++i) EXPECT_NEAR(g.ys[i] - g.ys[i - 1], 2.0 / static_cast<double>(n - 1), 1e-15);
  }
  EXPECT_THROW(make_grid<double>(0, 3), ShapeError);
}

TEST(Transform, IdentityReproducesGrid) {
  const auto g = make_grid<double>(7, 5);
  const auto s = transform_grid(A::identity(), g);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(s.at(i, j), g.at(i, j));
}

TEST(Transform, HalfScaleZoomsOntoCentre) {
  const auto s = transform_grid(A{{0.5, 0, 0, 0, 0.5, 0}}, make_grid<double>(2, 2));
  EXPECT_EQ(s.at(0, 0), (Point<double>{-0.5, -0.5}));
  EXPECT_EQ(s.at(1, 1), (Point<double>{0.5, 0.5}));
}

TEST(Transform, TranslationShiftsY) {
  const auto g = make_grid<double>(4, 4);
  const auto s = transform_grid(A{{1, 0, 0.25, 0, 1, 0}}, g);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(s.at(i, j).y, g.ys[i] + 0.25);
      EXPECT_EQ(s.at(i, j).x, g.xs[j]);
    }
}

TEST(Transform, GridLinesStayCollinear) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = transform_grid(random_affine(rng), make_grid<double>(6, 9));
    for (std::size_t i = 0; i < 6; ++i) {
      const auto a = s.at(i, 0), b = s.at(i, 8);
      for (std::size_t j = 1; j < 8; ++j) {
        const auto p = s.at(i, j);
        const double cross = (b.y - a.y) * (p.x - a.x) - (b.x - a.x) * (p.y - a.y);
        EXPECT_NEAR(cross, 0.0, 1e-9);
      }
    }
  }
}

TEST(Transform, CompositionMatchesSequentialApplication) {
  Rng rng(2);
  const auto g = make_grid<double>(5, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const A outer = random_affine(rng), inner = random_affine(rng);
    const auto composed = transform_grid(outer.compose(inner), g);
    const auto s_inner = transform_grid(inner, g);
    for (std::size_t k = 0; k < s_inner.points.size(); ++k) {
      const auto p = s_inner.points[k];
      const auto& t = outer.theta;
      EXPECT_NEAR(composed.points[k].y, t[0] * p.y + t[1] * p.x + t[2], 1e-12);
      EXPECT_NEAR(composed.points[k].x, t[3] * p.y + t[4] * p.x + t[5], 1e-12);
    }
  }
}

TEST(Downsample, ExtentArithmetic) {
  EXPECT_EQ(output_extent(100, 100, 3), (Extent{33, 33}));
  EXPECT_EQ(output_extent(100, 100, 2), (Extent{50, 50}));
  EXPECT_EQ(output_extent(100, 100, 2).points(), 2500u);
  EXPECT_EQ(output_extent(100, 100, 1), (Extent{100, 100}));
  EXPECT_EQ(output_extent(100, 100, 4), (Extent{25, 25}));
  EXPECT_THROW(output_extent(100, 100, 0.5), std::invalid_argument);
  EXPECT_THROW(output_extent(100, 100, 0.0), std::invalid_argument);
}

TEST(Bilinear, HandEvaluatedCentre) {
  const Tensor<double> img({1, 2, 2}, {0, 1, 2, 3});
  const SampleMap<double> s{1, 1, {{0.0, 0.0}}};
  EXPECT_EQ(bilinear_sample(img, s)[0], 1.5);
}

TEST(Bilinear, FarOutsideIsZero) {
  const auto img = rand_t({2, 6, 6}, 1, 0.5, 1.0);
  const SampleMap<double> s{1, 3, {{-3.0, 0.0}, {-3.0, 0.7}, {0.2, 5.0}}};
  const auto out = bilinear_sample(img, s);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Bilinear, IdentityFullResolutionReproducesInput) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::size_t h = 3 + seed * 5, w = 4 + seed * 7;
    const auto img = rand_t({2, h, w}, seed, -100.0, 100.0);
    const auto out = bilinear_sample(img, transform_grid(A::identity(), make_grid<double>(h, w)));
    ASSERT_EQ(out.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(out[i], img[i], 1e-12);
  }
}

TEST(Bilinear, MatchesBruteForceOracleExactly) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    const auto img = random_uniform<double>({2, 8, 8}, -1.0, 1.0, rng);
    std::uniform_real_distribution<double> coord(-1.3, 1.3);
    SampleMap<double> s{6, 7, {}};
    for (int k = 0; k < 42; ++k) s.points.push_back({coord(rng), coord(rng)});
    const auto out = bilinear_sample(img, s);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < 42; ++k)
        EXPECT_EQ(out[c * 42 + k], oracle::bilinear_point(img, c, s.points[k].y, s.points[k].x)) << "seed " << seed;
  }
}

TEST(Bilinear, LinearInTheImage) {
  Rng rng(4);
  const auto i1 = rand_t({1, 8, 8}, 5), i2 = rand_t({1, 8, 8}, 6);
  const double a = 0.7, b = -1.3;
  const auto s = transform_grid(random_affine(rng), make_grid<double>(5, 5));
  const auto lhs = bilinear_sample(add(scale(i1, a), scale(i2, b)), s);
  const auto r1 = bilinear_sample(i1, s), r2 = bilinear_sample(i2, s);
  for (std::size_t k = 0; k < lhs.size(); ++k) EXPECT_NEAR(lhs[k], a * r1[k] + b * r2[k], 1e-10);
}

TEST(Bilinear, ZeroUpstreamGradientGivesZero) {
  SpatialTransformer<double> stn(4, 4);
  const auto img = rand_t({1, 1, 8, 8}, 1);
  Tensor<double> theta({1, 6}, {0.8, 0.1, 0.05, -0.1, 0.9, 0.0});
  const auto y = stn.forward(img, theta);
  const auto g = stn.backward(Tensor<double>(y.shape()));
  for (double v : g.images.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.theta.data()) EXPECT_EQ(v, 0.0);
}

TEST(Bilinear, BackwardBeforeForwardIsRejected) {
  SpatialTransformer<double> stn(4, 4);
  EXPECT_THROW(stn.backward(Tensor<double>({1, 1, 4, 4})), StateError);
}

TEST(Bilinear, TranslationGradientMatchesFiniteDifferences) {
  const auto img = rand_t({1, 8, 8}, 7);
  const auto g = make_grid<double>(6, 6);
  const auto proj = rand_t({1, 6, 6}, 8);
  Tensor<double> t3({1}, {0.113});
  const auto loss = [&] {
    A a{{0.9, 0.05, t3[0], -0.04, 0.85, 0.07}};
    const auto y = bilinear_sample(img, transform_grid(a, g));
    double s = 0;
    for (std::size_t k = 0; k < y.size(); ++k) s += proj[k] * y[k];
    return s;
  };
  const auto sg = bilinear_sample_backward(proj, img, transform_grid(A{{0.9, 0.05, t3[0], -0.04, 0.85, 0.07}}, g));
  const auto ga = affine_gradient(sg.points, g);
  const auto r = gradcheck(loss, {{"theta3", &t3, Tensor<double>({1}, {ga.theta[2]})}});
  EXPECT_TRUE(r.passed()) << r.summary();
  EXPECT_EQ(r.kinks, 0u);
}

TEST(SpatialTransformer, GradientsForImageAndAllSixParameters) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    auto img = random_uniform<double>({2, 2, 8, 8}, -1.0, 1.0, rng);
    Tensor<double> theta({4, 6});
    for (std::size_t r = 0; r < 4; ++r) {
      const auto a = random_affine(rng);
      std::copy(a.theta.begin(), a.theta.end(), theta.raw() + r * 6);
    }
    SpatialTransformer<double> stn(5, 6);
    const auto proj = random_uniform<double>({4, 2, 5, 6}, -1.0, 1.0, rng);
    const auto loss = [&] {
      const auto y = stn.forward(img, theta);
      double s = 0;
      for (std::size_t k = 0; k < y.size(); ++k) s += proj[k] * y[k];
      return s;
    };
    stn.forward(img, theta);
    const auto g = stn.backward(proj);
    const auto r = gradcheck(loss, {{"image", &img, g.images}, {"theta", &theta, g.theta}}, {.seed = seed});
    EXPECT_TRUE(r.passed()) << r.summary();
    EXPECT_LT(r.max_error(), 1e-4);
  }
}

TEST(SpatialTransformer, RowsCycleOverBatch) {
  SpatialTransformer<double> stn(8, 8);
  const auto img = rand_t({2, 1, 8, 8}, 3);
  Tensor<double> theta({4, 6});
  for (std::size_t r = 0; r < 4; ++r) {
    const auto id = A::identity();
    std::copy(id.theta.begin(), id.theta.end(), theta.raw() + r * 6);
  }
  const auto y = stn.forward(img, theta);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(y[r * 64 + k], img[(r % 2) * 64 + k], 1e-12);
  EXPECT_THROW(stn.forward(img, Tensor<double>({3, 6})), ShapeError);
  EXPECT_THROW(stn.forward(img, Tensor<double>({2, 5})), ShapeError);
}

TEST(SpatialTransformer, DownsampledIdentityCropSize) {
  const auto stn = SpatialTransformer<double>::for_downsampling(100, 100, 3);
  EXPECT_EQ(stn.extent(), (Extent{33, 33}));
}
