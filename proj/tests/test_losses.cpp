#include <doctest.h>

#include "fd_checks.hpp"
#include "octalign/losses.hpp"
#include "support.hpp"

using namespace octalign;

namespace {

SurfaceDistribution<double> single_column(const Eigen::VectorXd& col) {
  return SurfaceDistribution<double>({Eigen::MatrixXd(col)});
}

Eigen::VectorXd gaussian_column() {
  Eigen::VectorXd w(10);
  for (Index i = 0; i < 10; ++i) w(i) = std::exp(-0.5 * std::pow((i + 1 - 4.3) / 1.7, 2));
  return w / w.sum();
}

// Surface with a unit step between neighbouring A-scans: sum of gradient norms = n_a - 1.
SurfaceSet<double> ramp_surface(Index n_a, double slope) {
  SurfaceSet<double> s(1, 1, n_a);
  for (Index a = 0; a < n_a; ++a) s(0, 0, a) = 10.0 + slope * static_cast<double>(a);
  return s;
}

}  // namespace

TEST_CASE("soft_argmax examples") {
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(10);
  delta(6) = 1.0;
  CHECK(soft_argmax(single_column(delta))(0, 0) == 7.0);
  CHECK(soft_argmax(single_column(Eigen::VectorXd::Constant(10, 0.1)))(0, 0) == doctest::Approx(5.5).epsilon(1e-12));
  CHECK(soft_argmax(single_column(gaussian_column()))(0, 0) ==
        doctest::Approx(4.3524233236567786).epsilon(1e-12));
  Eigen::VectorXd bad = Eigen::VectorXd::Constant(10, 0.1);
  bad(0) += 1e-5;
  CHECK_THROWS_AS(soft_argmax(single_column(bad)), NormalizationError);
}

TEST_CASE("soft_argmax matches a direct dot product and is reversal equivariant") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd m = testing::random_matrix(rng, 16, 5, 0.0, 1.0);
    m = (m.array().rowwise() / m.colwise().sum().array()).matrix();
    const auto got = soft_argmax(SurfaceDistribution<double>({m}));
    const Eigen::MatrixXd rev = m.colwise().reverse();
    const auto flipped = soft_argmax(SurfaceDistribution<double>({rev}));
    for (Index a = 0; a < 5; ++a) {
      double expect = 0.0;
      for (Index i = 0; i < 16; ++i) expect += static_cast<double>(i + 1) * m(i, a);
      CHECK(got(0, a) == doctest::Approx(expect).epsilon(1e-12));
      CHECK(flipped(0, a) == doctest::Approx(17.0 - got(0, a)).epsilon(1e-12));
      CHECK(got(0, a) >= 1.0);
      CHECK(got(0, a) <= 16.0);
    }
  }
}

TEST_CASE("cross entropy examples") {
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(10);
  delta(3) = 1.0;
  CHECK(loss_ce(single_column(delta), Eigen::MatrixXd::Constant(1, 1, 4.0)) == 0.0);
  CHECK(loss_ce(single_column(Eigen::VectorXd::Constant(10, 0.1)), Eigen::MatrixXd::Constant(1, 1, 3.0)) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(loss_ce(single_column(gaussian_column()), Eigen::MatrixXd::Constant(1, 1, 6.0)) ==
        doctest::Approx(1.9377246419648175).epsilon(1e-12));
  // The floor keeps zero probability finite.
  CHECK(loss_ce(single_column(delta), Eigen::MatrixXd::Constant(1, 1, 5.0)) ==
        doctest::Approx(-std::log(kProbabilityFloor)));
}

TEST_CASE("cross entropy matches direct summation and rejects bad rows") {
  std::mt19937_64 rng(6);
  Eigen::MatrixXd m0 = testing::random_matrix(rng, 8, 4, 0.1, 1.0), m1 = testing::random_matrix(rng, 8, 4, 0.1, 1.0);
  m0 = (m0.array().rowwise() / m0.colwise().sum().array()).matrix();
  m1 = (m1.array().rowwise() / m1.colwise().sum().array()).matrix();
  const SurfaceDistribution<double> q({m0, m1});
  Eigen::MatrixXd gt(2, 4);
  gt << 1, 8, 3, 5, 2, 2, 7, 4;
  double expect = 0.0;
  for (Index a = 0; a < 4; ++a)
    expect -= std::log(m0(static_cast<Index>(gt(0, a)) - 1, a)) + std::log(m1(static_cast<Index>(gt(1, a)) - 1, a));
  CHECK(loss_ce(q, gt) == doctest::Approx(expect).epsilon(1e-12));
  gt(1, 2) = 9;
  CHECK_THROWS_AS(loss_ce(q, gt), RangeError);
  gt(1, 2) = 2.5;
  CHECK_THROWS_AS(loss_ce(q, gt), RangeError);
  gt(1, 2) = 0;
  CHECK_THROWS_AS(loss_ce(q, gt), RangeError);
  CHECK_THROWS_AS(loss_ce(q, Eigen::MatrixXd::Ones(1, 4)), DimensionError);
}

TEST_CASE("smooth L1 pieces") {
  const Eigen::MatrixXd gt = Eigen::MatrixXd::Constant(1, 1, 3.0);
  CHECK(loss_smooth_l1(gt, gt) == 0.0);
  CHECK(loss_smooth_l1(Eigen::MatrixXd::Constant(1, 1, 3.5), gt) == 0.125);
  CHECK(loss_smooth_l1(Eigen::MatrixXd::Constant(1, 1, 1.0), gt) == 1.5);
  CHECK_THROWS_AS(loss_smooth_l1(Eigen::MatrixXd::Zero(2, 1), gt), DimensionError);
  // Slope is continuous at |t| = 1.
  for (double t : {-1.0, 1.0}) {
    const Eigen::MatrixXd p = Eigen::MatrixXd::Constant(1, 1, 3.0 + t);
    const double h = 1e-7;
    const double fd = (loss_smooth_l1((p.array() + h).matrix(), gt) - loss_smooth_l1((p.array() - h).matrix(), gt)) / (2 * h);
    CHECK(std::abs(fd - grad_smooth_l1(p, gt)(0, 0)) < 1e-6);
  }
}

TEST_CASE("global smoothness") {
  Eigen::MatrixXd s(2, 2);
  s << 0, 1, 0, 1;
  CHECK(loss_smooth_s(s) == 2.0);
  CHECK(loss_smooth_s(Eigen::MatrixXd::Constant(3, 4, 7.0)) == 0.0);
  CHECK(grad_smooth_s(Eigen::MatrixXd::Constant(3, 4, 7.0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loss_smooth_s(Eigen::MatrixXd::Constant(1, 1, 7.0)) == 0.0);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd g = testing::random_matrix(rng, 1 + trial % 4, 1 + trial % 5, 0.0, 20.0);
    double brute = 0.0;
    for (Index b = 0; b < g.rows(); ++b)
      for (Index a = 0; a < g.cols(); ++a) {
        if (a + 1 < g.cols()) brute += std::pow(g(b, a + 1) - g(b, a), 2);
        if (b + 1 < g.rows()) brute += std::pow(g(b + 1, a) - g(b, a), 2);
      }
    CHECK(loss_smooth_s(g) == doctest::Approx(brute).epsilon(1e-12));
    CHECK(loss_smooth_s((g.array() + 3.5).matrix()) == doctest::Approx(brute).epsilon(1e-12));
    if (g.size() > 1) CHECK(loss_smooth_s(g) > 0.0);
  }
}

TEST_CASE("dice and cross entropy head") {
  std::mt19937_64 rng(3);
  const auto s = testing::random_ordered(rng, 2, 3, 5, 1.0, 12.0, true);
  const auto m = surfaces_to_labels(s, 12);
  const auto perfect = loss_dice_ce(one_hot(m), m);
  CHECK(perfect.ce == 0.0);
  CHECK(std::abs(perfect.total) < 1e-5);

  SurfaceSet<double> half(1, 1, 4);
  half.surface(0).setConstant(3.0);
  const auto m2 = surfaces_to_labels(half, 4);
  ClassProbabilities<double> uniform;
  uniform.probs.push_back({Eigen::MatrixXd::Constant(4, 4, 0.5), Eigen::MatrixXd::Constant(4, 4, 0.5)});
  const auto u = loss_dice_ce(uniform, m2);
  CHECK(u.ce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(u.dice == doctest::Approx(0.5).epsilon(1e-6));

  ClassProbabilities<double> wrong;
  wrong.probs.push_back({Eigen::MatrixXd::Constant(4, 4, 1.0)});
  CHECK_THROWS_AS(loss_dice_ce(wrong, m2), DimensionError);
}

TEST_CASE("dice and cross entropy match direct summation") {
  std::mt19937_64 rng(13);
  const auto s = testing::random_ordered(rng, 2, 2, 3, 1.0, 6.0, true);
  const auto m = surfaces_to_labels(s, 6);
  ClassProbabilities<double> p;
  for (Index b = 0; b < 2; ++b) {
    std::vector<Eigen::MatrixXd> c{testing::random_matrix(rng, 6, 3, 0.1, 1.0), testing::random_matrix(rng, 6, 3, 0.1, 1.0),
                                   testing::random_matrix(rng, 6, 3, 0.1, 1.0)};
    const Eigen::MatrixXd sum = c[0] + c[1] + c[2];
    for (auto& x : c) x = x.cwiseQuotient(sum);
    p.probs.push_back(c);
  }
  double ce = 0.0;
  std::vector<double> inter(3, 0.0), pm(3, 0.0), gm(3, 0.0);
  for (Index b = 0; b < 2; ++b)
    for (Index a = 0; a < 3; ++a)
      for (Index r = 0; r < 6; ++r) {
        const int k = m.labels[static_cast<std::size_t>(b)](r, a);
        ce -= std::log(p.at(b, k)(r, a));
        for (int c = 0; c < 3; ++c) {
          pm[c] += p.at(b, c)(r, a);
          if (c == k) {
            inter[c] += p.at(b, c)(r, a);
            gm[c] += 1.0;
          }
        }
      }
  double dice = 0.0;
  for (int c = 0; c < 3; ++c) dice += (2 * inter[c] + 1e-6) / (pm[c] + gm[c] + 1e-6);
  const double expect = ce / 36.0 + 1.0 - dice / 3.0;
  CHECK(loss_dice_ce(p, m).total == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("lambda weights") {
  CHECK(lambda_weights<double>({ramp_surface(21, 1.0)}, 0.1).lambda_l[0] == doctest::Approx(0.005).epsilon(1e-12));
  // 0.1 / 25 = 0.004 and 0.1 / (50 / 3) = 0.006.
  const auto w = lambda_weights<double>({ramp_surface(26, 1.0), ramp_surface(26, 2.0 / 3.0)}, 0.1);
  CHECK(w.lambda_l[0] == doctest::Approx(0.005).epsilon(1e-12));
  std::mt19937_64 rng(9);
  auto s = testing::random_ordered(rng, 3, 4, 6, 1.0, 30.0);
  const auto w1 = lambda_weights<double>({s}, 0.03);
  for (Index l = 0; l < 3; ++l) s.surface(l) *= 2.0;
  const auto w2 = lambda_weights<double>({s}, 0.03);
  for (std::size_t l = 0; l < 3; ++l) CHECK(w2.lambda_l[l] == doctest::Approx(0.5 * w1.lambda_l[l]).epsilon(1e-12));
  CHECK_THROWS_AS(lambda_weights<double>({ramp_surface(5, 0.0)}, 0.1), DegenerateError);
  CHECK_THROWS_AS(lambda_weights<double>({}, 0.1), DimensionError);
  CHECK_THROWS_AS(lambda_weights<double>({ramp_surface(5, 1.0)}, -0.1), ConfigError);
}

TEST_CASE("segmentation total") {
  std::mt19937_64 rng(17);
  const Index n_r = 12;
  SUBCASE("perfect prediction of flat surfaces costs nothing") {
    SurfaceSet<double> gt(2, 2, 3);
    gt.surface(0).setConstant(4.0);
    gt.surface(1).setConstant(9.0);
    const auto weights = lambda_weights<double>({testing::random_ordered(rng, 2, 2, 3, 1.0, 12.0)}, 0.1);
    std::vector<SurfaceDistribution<double>> q;
    for (Index l = 0; l < 2; ++l) {
      std::vector<Eigen::MatrixXd> bs(2, Eigen::MatrixXd::Zero(n_r, 3));
      for (auto& img : bs) img.row(static_cast<Index>(gt(l, 0, 0)) - 1).setOnes();
      q.emplace_back(bs);
    }
    const auto m = surfaces_to_labels(gt, n_r);
    const auto seg = loss_seg_total(q, one_hot(m), gt, m, weights);
    CHECK(std::abs(seg.total) < 1e-5);
  }
  SUBCASE("total is the sum of independently computed terms") {
    const auto gt = testing::random_ordered(rng, 2, 3, 4, 1.0, static_cast<double>(n_r), true);
    const auto m = surfaces_to_labels(gt, n_r);
    std::vector<SurfaceDistribution<double>> q;
    for (Index l = 0; l < 2; ++l) {
      std::vector<Eigen::MatrixXd> bs;
      for (Index b = 0; b < 3; ++b) {
        Eigen::MatrixXd x = testing::random_matrix(rng, n_r, 4, 0.05, 1.0);
        bs.push_back((x.array().rowwise() / x.colwise().sum().array()).matrix());
      }
      q.emplace_back(bs);
    }
    ClassProbabilities<double> p = one_hot(m);
    for (auto& per_b : p.probs)
      for (auto& img : per_b) img = (0.8 * img.array() + 0.2 / 3.0).matrix();
    const LossWeights weights{0.1, {0.02, 0.005}};
    const auto seg = loss_seg_total(q, p, gt, m, weights);
    double expect = loss_dice_ce(p, m).total;
    for (Index l = 0; l < 2; ++l) {
      const auto pred = soft_argmax(q[static_cast<std::size_t>(l)]);
      expect += loss_ce(q[static_cast<std::size_t>(l)], gt.surface(l)) + loss_smooth_l1(pred, gt.surface(l)) +
                weights.lambda_l[static_cast<std::size_t>(l)] * loss_smooth_s(pred);
    }
    CHECK(std::abs(seg.total - expect) <= 1e-10);
    CHECK(seg.total == seg.dice_ce + seg.ce + seg.l1 + seg.smooth_s);
    const auto plain = loss_seg_total(q, p, gt, m, LossWeights{0.1, {0.0, 0.0}});
    CHECK(plain.smooth_s == 0.0);
    CHECK(plain.total == doctest::Approx(seg.dice_ce + seg.ce + seg.l1).epsilon(1e-14));
    CHECK_THROWS_AS(loss_seg_total(q, p, gt, m, LossWeights{0.1, {0.1}}), DimensionError);
  }
}

TEST_CASE("semi-supervised smoothness reductions") {
  std::mt19937_64 rng(23);
  const auto gt = testing::random_ordered(rng, 2, 5, 4, 1.0, 40.0);
  const auto pred = testing::random_ordered(rng, 2, 5, 4, 1.0, 40.0);
  const Eigen::VectorXd d = testing::random_matrix(rng, 5, 1, -3.0, 3.0);
  const BScanMask all = BScanMask::Constant(5, true), none = BScanMask::Constant(5, false);
  CHECK(loss_smooth_a_semi(gt, pred, d, all) == loss_smooth_a(gt, d));
  CHECK(loss_smooth_a_semi(gt, gt, d, none) == loss_smooth_a(gt, d));
  BScanMask mix(5);
  mix << true, false, false, true, false;
  SurfaceSet<double> mixed = gt;
  for (Index l = 0; l < 2; ++l)
    for (Index b : {1, 2, 4}) mixed.surface(l).row(b) = pred.surface(l).row(b);
  CHECK(loss_smooth_a_semi(gt, pred, d, mix) == loss_smooth_a(mixed, d));
  const auto g = grad_smooth_a_semi(gt, pred, d, mix);
  CHECK(g.wrt_pred.surface(1).row(0).isZero());
  CHECK(g.wrt_pred.surface(1).row(3).isZero());
  CHECK_THROWS_AS(loss_smooth_a_semi(gt, pred, d, BScanMask::Constant(4, true)), DimensionError);
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 20; ++i) {
    CHECK(testing::fd_error_ce(rng) <= 1e-5);
    CHECK(testing::fd_error_smooth_l1(rng) <= 1e-5);
    CHECK(testing::fd_error_smooth_s(rng) <= 1e-5);
    CHECK(testing::fd_error_smooth_a(rng) <= 1e-5);
    CHECK(testing::fd_error_smooth_a_semi(rng) <= 1e-5);
  }
}

TEST_CASE("gradient lookup by name") {
  CHECK(parse_loss_name("smooth_a_semi") == LossName::smooth_a_semi);
  CHECK_THROWS_AS(parse_loss_name("smooth_b"), ConfigError);
  CHECK_THROWS_AS(gradient<double>("dice", LossInputs<double>{}), ConfigError);
  CHECK_THROWS_AS(gradient<double>("smooth_s", LossInputs<double>{}), ConfigError);
}

TEST_CASE("descent on global smoothness flattens the surface") {
  std::mt19937_64 rng(41);
  const auto run = testing::descend_smooth_s(testing::random_matrix(rng, 6, 9, 10.0, 30.0));
  CHECK(run.monotone);
  CHECK(run.final_grad <= 1e-6);
  CHECK(run.final_spread < 1e-5);
}
