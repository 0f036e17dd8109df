#include <doctest.h>

#include "metric_oracles.hpp"
#include "octalign/metrics.hpp"
#include "support.hpp"

using namespace octalign;

TEST_CASE("mad examples") {
  std::mt19937_64 rng(1);
  const auto gt = testing::random_ordered(rng, 3, 4, 5, 1.0, 40.0);
  CHECK(mad(gt, gt, 3.24).overall == 0.0);
  SurfaceSet<double> flat(1, 2, 3), off(1, 2, 3);
  flat.surface(0).setConstant(10.0);
  off.surface(0).setConstant(12.0);
  const auto m = mad(off, flat, 3.24);
  CHECK(m.overall == 6.48);
  CHECK(m.per_surface == std::vector<double>{6.48});
  CHECK_THROWS_AS(mad(flat, SurfaceSet<double>(1, 2, 4), 3.24), DimensionError);
}

TEST_CASE("mad of a uniform integer offset is exactly k times dz") {
  std::mt19937_64 rng(2);
  for (int k = -3; k <= 5; ++k) {
    const auto gt = testing::random_ordered(rng, 2, 3, 7, 1.0, 30.0, true);
    SurfaceSet<double> pred = gt;
    for (Index l = 0; l < 2; ++l) pred.surface(l).array() += k;
    CHECK(mad(pred, gt, 3.24).overall == std::abs(k) * 3.24);
  }
}

TEST_CASE("mad honours the evaluation mask") {
  SurfaceSet<double> gt(1, 1, 4), pred(1, 1, 4);
  pred.surface(0) << 1, 2, 3, 40;
  EvalMask mask{Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(1, 4, true)};
  mask[0](0, 3) = false;
  CHECK(mad(pred, gt, 1.0, &mask).overall == 2.0);
  EvalMask wrong{};
  CHECK_THROWS_AS(mad(pred, gt, 1.0, &wrong), DimensionError);
}

TEST_CASE("aggregation across volumes uses the population deviation") {
  const auto s = aggregate({2.0, 4.0});
  CHECK(s.mean == 3.0);
  CHECK(s.std == 1.0);
  CHECK(s.count == 2);
  CHECK(aggregate({}).count == 0);
}

TEST_CASE("quantile interpolates linearly") {
  CHECK(quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.5) == 3.0);
  CHECK(quantile({4.0, 1.0}, 0.95) == doctest::Approx(3.85));
  CHECK(quantile({7.0}, 0.95) == 7.0);
  CHECK_THROWS_AS(quantile({}, 0.5), DimensionError);
}

TEST_CASE("hd95 frozen value") {
  Eigen::RowVectorXd pred(6), gt(6);
  pred << 3, 3.5, 5, 4.2, 4, 6;
  gt << 3.2, 3.1, 4.4, 4.9, 4.1, 5.5;
  CHECK(hd95_curve(pred, gt, 3.24, 6.7) == doctest::Approx(2.2680000000000007).epsilon(1e-12));
  CHECK(hd95_curve(gt, gt, 3.24, 6.7) == 0.0);
}

TEST_CASE("hd95 equals the all-pairs oracle on small curves") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<Index> len(1, 32);
  std::uniform_real_distribution<double> amp(0.0, 30.0);
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = len(rng);
    const double a = amp(rng);
    const Eigen::RowVectorXd p = testing::random_matrix(rng, 1, n, 20.0, 20.0 + a);
    const Eigen::RowVectorXd g = testing::random_matrix(rng, 1, n, 20.0, 20.0 + a);
    CHECK(hd95_curve(p, g, 3.24, 6.7) == testing::brute_hd95_curve(p, g, 3.24, 6.7));
  }
}

TEST_CASE("hd95 of a one-row offset is at most dz") {
  std::mt19937_64 rng(5);
  const auto gt = testing::random_ordered(rng, 2, 3, 16, 10.0, 30.0);
  SurfaceSet<double> pred = gt;
  for (Index l = 0; l < 2; ++l) pred.surface(l).array() += 1.0;
  const auto h = hd95(pred, gt, 3.24, 6.7);
  CHECK(h.overall <= 3.24 + 1e-12);
  CHECK(h.overall > 0.0);
  CHECK(hd95(gt, gt, 3.24, 6.7).overall == 0.0);
  CHECK_THROWS_AS(hd95(gt, SurfaceSet<double>(2, 3, 15), 3.24, 6.7), DimensionError);
  CHECK_THROWS_AS(hd95_curve(Eigen::RowVectorXd(), Eigen::RowVectorXd(), 1.0, 1.0), DimensionError);
}

TEST_CASE("ncc_adjacent") {
  const auto t = testing::textured(40, 16);
  CHECK(ncc_adjacent(Volume<double>({t, t, t}, {})) == doctest::Approx(1.0).epsilon(1e-12));
  std::mt19937_64 rng(6);
  const Index n_r = 64, n_a = 48;
  const auto noise = testing::random_volume(rng, 30, n_a, n_r);
  const double bound = 3.0 / std::sqrt(static_cast<double>(n_a * n_r));
  for (Index b = 0; b + 1 < 30; ++b)
    CHECK(std::abs(global_ncc(noise.bscan(b), noise.bscan(b + 1))) <= bound);
  CHECK(std::abs(ncc_adjacent(noise)) <= bound);
  CHECK_THROWS_AS(ncc_adjacent(Volume<double>({t}, {})), DimensionError);
}

TEST_CASE("connectivity histogram") {
  SurfaceSet<double> flat(2, 4, 3);
  flat.surface(0).setConstant(5.0);
  flat.surface(1).setConstant(9.0);
  auto h = connectivity_histogram(flat);
  CHECK(h.counts[0] == 2 * 3 * 3);
  CHECK(h.total() == 18);

  SurfaceSet<double> zig(1, 5, 4);
  for (Index b = 0; b < 5; ++b) zig.surface(0).row(b).setConstant(b % 2 ? 6.0 : 5.0);
  h = connectivity_histogram(zig);
  CHECK(h.counts[1] == 16);
  CHECK(h.total() == 16);

  std::mt19937_64 rng(7);
  const auto s = testing::random_ordered(rng, 3, 6, 5, 1.0, 60.0);
  h = connectivity_histogram(s, 8, 2.0);
  CHECK(h.total() == 3 * 5 * 5);
  CHECK(h.counts.size() == 8);

  CHECK_THROWS_AS(connectivity_histogram(SurfaceSet<double>(1, 1, 3)), DimensionError);
  CHECK_THROWS_AS(connectivity_histogram(s, 0), ConfigError);
}

TEST_CASE("motion error removes the gauge") {
  MotionSpec truth{Eigen::Vector4d(1.0, -2.0, 3.5, 0.0), Eigen::Vector4i(0, 0, 4, -3), {0, 2, 3}};
  DisplacementField<double> est{truth.axial_truth, truth.transverse_truth};
  auto e = motion_error(est, truth);
  CHECK(e.axial == 0.0);
  CHECK(e.transverse == 0.0);
  est.axial.array() += 7.25;
  est.transverse.array() += 2;
  e = motion_error(est, truth);
  CHECK(e.axial == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(e.transverse == 0.0);
  est.axial(0) += 4.0;  // mean-zero spreads a single error: 3 + 1 + 1 + 1 over 4
  CHECK(motion_error(est, truth).axial == doctest::Approx(1.5));
  DisplacementField<double> short_est{Eigen::Vector3d::Zero(), Eigen::Vector3i::Zero()};
  CHECK_THROWS_AS(motion_error(short_est, truth), DimensionError);
}
