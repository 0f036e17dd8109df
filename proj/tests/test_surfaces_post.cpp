#include <doctest.h>

#include "octalign/surfaces_post.hpp"
#include "octalign/synth.hpp"
#include "support.hpp"

using namespace octalign;

TEST_CASE("swap trick sorts each A-scan") {
  SurfaceSet<double> s(3, 1, 1);
  s(0, 0, 0) = 3;
  s(1, 0, 0) = 1;
  s(2, 0, 0) = 2;
  const auto fixed = swap_trick(s);
  CHECK(fixed(0, 0, 0) == 1);
  CHECK(fixed(1, 0, 0) == 2);
  CHECK(fixed(2, 0, 0) == 3);

  std::mt19937_64 rng(5);
  const auto ordered = testing::random_ordered(rng, 4, 2, 3, 1.0, 20.0);
  CHECK(swap_trick(ordered) == ordered);
}

TEST_CASE("swap trick equals a per-column sort and is idempotent") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(1.0, 50.0);
  for (int trial = 0; trial < 20; ++trial) {
    SurfaceSet<double> s(5, 3, 4);
    for (Index l = 0; l < 5; ++l)
      for (Index b = 0; b < 3; ++b)
        for (Index a = 0; a < 4; ++a) s(l, b, a) = std::round(u(rng));  // ties included
    const auto once = swap_trick(s);
    CHECK(once.is_ordered());
    CHECK(swap_trick(once) == once);
    for (Index b = 0; b < 3; ++b)
      for (Index a = 0; a < 4; ++a) {
        std::vector<double> col;
        for (Index l = 0; l < 5; ++l) col.push_back(s(l, b, a));
        std::sort(col.begin(), col.end());
        for (Index l = 0; l < 5; ++l) CHECK(once(l, b, a) == col[static_cast<std::size_t>(l)]);
      }
  }
}

TEST_CASE("membrane estimate on a two-band A-scan") {
  Eigen::VectorXd ascan = Eigen::VectorXd::Constant(60, 0.9);
  ascan.tail(60 - 41).setConstant(0.1);  // rows 42.. are dark
  CHECK(std::abs(estimate_bm_row(ascan, 2.0) - 42.0) <= 1.0);
}

TEST_CASE("membrane estimate tracks the outermost phantom surface") {
  PhantomSpec spec;
  spec.seed = 8;
  const auto ph = generate_phantom(spec);
  const Index bm = ph.surfaces.n_surfaces() - 1;
  const auto res = flatten_to_bm(ph.volume);
  // Per-A-scan estimates without the strong noise below the membrane.
  PhantomSpec quiet = spec;
  quiet.background_noise_sigma = 0.0;
  const auto ph_quiet = generate_phantom(quiet);
  Index raw_ok = 0, filtered_ok = 0;
  for (Index b = 0; b < spec.n_b; ++b)
    for (Index a = 0; a < spec.n_a; ++a) {
      const double truth = ph.surfaces(bm, b, a);
      raw_ok += std::abs(estimate_bm_row(ph_quiet.volume.bscan(b).col(a), 2.0) - truth) <= 2.0;
      filtered_ok += std::abs(res.bm_rows(b, a) - truth) <= 2.0;
    }
  const double total = static_cast<double>(spec.n_b * spec.n_a);
  CHECK(static_cast<double>(raw_ok) >= 0.95 * total);
  CHECK(static_cast<double>(filtered_ok) >= 0.95 * total);

  // Surfaces follow the flattening: the membrane lands near the target row.
  const double target = 0.75 * static_cast<double>(spec.n_r);
  const Eigen::MatrixXd moved = ph.surfaces.surface(bm) - res.shifts;
  Index near = 0;
  for (Index i = 0; i < moved.size(); ++i) near += std::abs(moved(i) - target) <= 2.0;
  CHECK(static_cast<double>(near) >= 0.95 * total);
}

TEST_CASE("flat phantom yields a nearly constant shift map") {
  PhantomSpec spec;
  spec.bump_amplitude = 0.0;
  spec.fovea_depth = 0.0;
  spec.thickness_ripple = 0.0;
  spec.fovea_thinning = 0.0;
  const auto spread = [](const Eigen::MatrixXd& shifts) {
    std::vector<double> vals(shifts.data(), shifts.data() + shifts.size());
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    return (shifts.array() - vals[vals.size() / 2]).abs().eval();
  };
  PhantomSpec clean = spec;
  clean.speckle_variance = 0.0;
  clean.noise_sigma = 0.0;
  clean.background_noise_sigma = 0.0;
  CHECK(spread(flatten_to_bm(generate_phantom(clean).volume).shifts).maxCoeff() <= 1.0);
  // With speckle and background noise a few isolated A-scans slip past the median filter.
  const auto noisy = spread(flatten_to_bm(generate_phantom(spec).volume).shifts);
  CHECK(static_cast<double>((noisy <= 1.0).count()) >= 0.99 * static_cast<double>(noisy.size()));
}

TEST_CASE("flattening shifts are inverted by the opposite field") {
  PhantomSpec spec;
  spec.n_b = 4;
  spec.n_a = 20;
  const auto ph = generate_phantom(spec);
  const auto res = flatten_to_bm(ph.volume);
  // Rows linear in r survive two linear interpolations exactly away from the clamped edges.
  Volume<double> lin(spec.n_b, spec.n_a, spec.n_r);
  for (Index b = 0; b < spec.n_b; ++b)
    for (Index a = 0; a < spec.n_a; ++a)
      for (Index i = 0; i < spec.n_r; ++i) lin(b, a, i) = 0.01 * static_cast<double>(i) + std::sin(0.3 * a + b);
  const auto back = resample_axial_field(resample_axial_field(lin, res.shifts), (-res.shifts).eval());
  const Index band = static_cast<Index>(std::ceil(res.shifts.cwiseAbs().maxCoeff())) + 1;
  for (Index b = 0; b < spec.n_b; ++b)
    CHECK((back.bscan(b) - lin.bscan(b)).middleRows(band, spec.n_r - 2 * band).cwiseAbs().maxCoeff() < 1e-9);

  const auto restored = resample_axial_field(res.volume, (-res.shifts).eval());
  double err = 0.0;
  Index count = 0;
  for (Index b = 0; b < spec.n_b; ++b) {
    err += (restored.bscan(b) - ph.volume.bscan(b)).middleRows(band, spec.n_r - 2 * band).cwiseAbs().sum();
    count += (spec.n_r - 2 * band) * spec.n_a;
  }
  CHECK(err / static_cast<double>(count) < 0.05);
}

TEST_CASE("flatten config validation") {
  std::mt19937_64 rng(1);
  const auto v = testing::random_volume(rng, 2, 3, 10);
  FlattenConfig c;
  c.sigma = 0.0;
  CHECK_THROWS_AS(flatten_to_bm(v, c), ConfigError);
  c = {};
  c.median_size = 4;
  CHECK_THROWS_AS(flatten_to_bm(v, c), ConfigError);
  c = {};
  c.target_row = 4.0;
  CHECK(flatten_to_bm(v, c).shifts == (flatten_to_bm(v).bm_rows.array() - 4.0).matrix());
}

TEST_CASE("crop re-bases surfaces and guards the range") {
  std::mt19937_64 rng(3);
  const auto v = testing::random_volume(rng, 2, 3, 12);
  SurfaceSet<double> s(1, 2, 3);
  s.surface(0).setConstant(5.0);
  const auto full = crop_rows(v, s, 1, 12);
  CHECK(full.volume == v);
  CHECK(full.surfaces == s);
  const auto c = crop_rows(v, s, 3, 10);
  CHECK(c.volume.n_r() == 8);
  CHECK((c.surfaces.surface(0).array() == 3.0).all());
  CHECK(c.volume.bscan(1).row(0) == v.bscan(1).row(2));

  s(0, 1, 2) = 11.5;
  try {
    crop_rows(v, s, 3, 10);
    FAIL("expected a range error");
  } catch (const RangeError& e) {
    CHECK(std::string(e.what()).find("(l=1, b=2, a=3") != std::string::npos);
  }
  CHECK_THROWS_AS(crop_rows(v, s, 0, 12), RangeError);
  CHECK_THROWS_AS(crop_rows(v, s, 1, 13), RangeError);
  CHECK_THROWS_AS(crop_rows(v, s, 6, 6), RangeError);
}

TEST_CASE("crop then uncrop round-trips surfaces exactly") {
  std::mt19937_64 rng(4);
  const auto v = testing::random_volume(rng, 3, 4, 30);
  const auto s = testing::random_ordered(rng, 3, 3, 4, 6.0, 22.0);
  const auto c = crop_rows(v, s, 5, 25);
  const auto u = uncrop_rows(c.volume, c.surfaces, 5, 30, -1.0);
  CHECK(u.surfaces == s);
  for (Index b = 0; b < 3; ++b) {
    CHECK(u.volume.bscan(b).middleRows(4, 21) == v.bscan(b).middleRows(4, 21));
    CHECK((u.volume.bscan(b).topRows(4).array() == -1.0).all());
  }
  CHECK_THROWS_AS(uncrop_rows(c.volume, c.surfaces, 11, 30), RangeError);
}
