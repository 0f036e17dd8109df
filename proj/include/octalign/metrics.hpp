#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "octalign/ncc.hpp"
#include "octalign/types.hpp"

namespace octalign {

/// Mean and population standard deviation of volume-wise values.
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

inline MeanStd aggregate(const std::vector<double>& values) {
  MeanStd out;
  out.count = values.size();
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : values) ss += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(ss / n);
  return out;
}

/// Per-surface evaluation mask (true = evaluate). Used to skip positions
/// without a reference delineation.
using EvalMask = std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>>;

struct SurfaceMetric {
  std::vector<double> per_surface;
  double overall = 0.0;
};

/// Volume-wise mean absolute distance in micrometers. `overall` averages all
/// evaluated (l, b, a) differences.
template <typename Scalar>
SurfaceMetric mad(const SurfaceSet<Scalar>& pred, const SurfaceSet<Scalar>& gt, double dz,
                  const EvalMask* mask = nullptr) {
  if (!pred.same_shape(gt)) throw DimensionError("mad: prediction and reference shapes differ");
  if (mask && static_cast<Index>(mask->size()) != gt.n_surfaces())
    throw DimensionError("mad: mask surface count mismatch");
  SurfaceMetric out;
  double all_sum = 0.0, all_n = 0.0;
  for (Index l = 0; l < gt.n_surfaces(); ++l) {
    // Averaged in pixels and scaled once, so a uniform k-px offset gives k * dz exactly.
    const Eigen::ArrayXXd diff = (pred.surface(l) - gt.surface(l)).template cast<double>().array().abs();
    double sum = 0.0, n = 0.0;
    if (mask) {
      const auto& m = (*mask)[static_cast<std::size_t>(l)];
      if (m.rows() != diff.rows() || m.cols() != diff.cols())
        throw DimensionError("mad: mask shape mismatch");
      sum = m.select(diff, 0.0).sum();
      n = static_cast<double>(m.count());
    } else {
      sum = diff.sum();
      n = static_cast<double>(diff.size());
    }
    out.per_surface.push_back(n > 0 ? sum / n * dz : 0.0);
    all_sum += sum;
    all_n += n;
  }
  out.overall = all_n > 0 ? all_sum / all_n * dz : 0.0;
  return out;
}

/// Linear-interpolated quantile of an unsorted sample (p in [0, 1]).
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DimensionError("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double h = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace detail {

/// Nearest-neighbour distance from every point of `from` to the curve `to`.
/// Points are (x_i, z_i) with x increasing in i, which bounds the search.
inline void directed_distances(const Eigen::VectorXd& fx, const Eigen::VectorXd& fz,
                               const Eigen::VectorXd& tx, const Eigen::VectorXd& tz,
                               std::vector<double>& out) {
  const Index n = tx.size();
  for (Index i = 0; i < fx.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    const auto visit = [&](Index j) {
      const double ddx = fx(i) - tx(j), ddz = fz(i) - tz(j);
      best = std::min(best, std::sqrt(ddx * ddx + ddz * ddz));
    };
    const Index start = std::clamp<Index>(i, 0, n - 1);
    visit(start);
    // |dx| alone lower-bounds the distance; the slack absorbs rounding.
    const auto beyond = [&](Index j) { return std::abs(fx(i) - tx(j)) > best * (1.0 + 1e-9); };
    for (Index j = start + 1; j < n && !beyond(j); ++j) visit(j);
    for (Index j = start - 1; j >= 0 && !beyond(j); --j) visit(j);
    out.push_back(best);
  }
}

}  // namespace detail

/// HD95 of one B-scan: both curves become point sets {(a*dx, r*dz)}; the
/// result is the 95th percentile of the union of both directed nearest-
/// neighbour distance sets.
template <typename DA, typename DB>
double hd95_curve(const Eigen::MatrixBase<DA>& pred, const Eigen::MatrixBase<DB>& gt, double dz,
                  double dx) {
  const Index n = pred.size();
  if (n == 0 || gt.size() == 0) throw DimensionError("hd95: empty surface");
  if (gt.size() != n) throw DimensionError("hd95: curve lengths differ");
  Eigen::VectorXd x(n), pz(n), gz(n);
  for (Index a = 0; a < n; ++a) {
    x(a) = static_cast<double>(a) * dx;
    pz(a) = static_cast<double>(pred(a)) * dz;
    gz(a) = static_cast<double>(gt(a)) * dz;
  }
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(2 * n));
  detail::directed_distances(x, pz, x, gz, dist);
  detail::directed_distances(x, gz, x, pz, dist);
  return quantile(std::move(dist), 0.95);
}

/// Per surface: mean over B-scans of hd95_curve. `overall` is the mean over
/// surfaces.
template <typename Scalar>
SurfaceMetric hd95(const SurfaceSet<Scalar>& pred, const SurfaceSet<Scalar>& gt, double dz,
                   double dx) {
  if (!pred.same_shape(gt)) throw DimensionError("hd95: prediction and reference shapes differ");
  if (gt.n_a() == 0 || gt.n_b() == 0) throw DimensionError("hd95: empty surface");
  SurfaceMetric out;
  for (Index l = 0; l < gt.n_surfaces(); ++l) {
    double sum = 0.0;
    for (Index b = 0; b < gt.n_b(); ++b)
      sum += hd95_curve(pred.surface(l).row(b), gt.surface(l).row(b), dz, dx);
    out.per_surface.push_back(sum / static_cast<double>(gt.n_b()));
  }
  if (!out.per_surface.empty())
    out.overall = std::accumulate(out.per_surface.begin(), out.per_surface.end(), 0.0) /
                  static_cast<double>(out.per_surface.size());
  return out;
}

/// Mean global NCC between consecutive B-scans.
template <typename Scalar>
double ncc_adjacent(const Volume<Scalar>& v, double eps = kVarianceEps) {
  if (v.n_b() < 2) throw DimensionError("ncc_adjacent: need at least two B-scans");
  double sum = 0.0;
  for (Index b = 0; b + 1 < v.n_b(); ++b) sum += global_ncc(v.bscan(b), v.bscan(b + 1), eps);
  return sum / static_cast<double>(v.n_b() - 1);
}

struct Histogram {
  double bin_width = 1.0;
  /// counts[k] holds distances in [k*w, (k+1)*w); the last bin also takes
  /// everything beyond.
  std::vector<long long> counts;

  long long total() const { return std::accumulate(counts.begin(), counts.end(), 0LL); }
};

/// Histogram of |r_{b+1,a} - r_{b,a}| over every surface and A-scan.
template <typename Scalar>
Histogram connectivity_histogram(const SurfaceSet<Scalar>& s, int bins = 16, double bin_width = 1.0) {
  if (s.n_b() < 2) throw DimensionError("connectivity_histogram: need at least two B-scans");
  if (bins < 1 || !(bin_width > 0.0)) throw ConfigError("connectivity_histogram: bad binning");
  Histogram h{bin_width, std::vector<long long>(static_cast<std::size_t>(bins), 0)};
  for (Index l = 0; l < s.n_surfaces(); ++l)
    for (Index b = 0; b + 1 < s.n_b(); ++b)
      for (Index a = 0; a < s.n_a(); ++a) {
        const double dist = std::abs(static_cast<double>(s(l, b + 1, a) - s(l, b, a)));
        const double k = std::floor(dist / bin_width);
        const auto idx = static_cast<std::size_t>(std::min(k, static_cast<double>(bins - 1)));
        ++h.counts[idx];
      }
  return h;
}

struct MotionError {
  double axial = 0.0;
  double transverse = 0.0;
};

/// Mean absolute recovery error per axis after mapping both estimate and
/// truth to the canonical gauge (mean-zero axial, mode-zero transverse).
template <typename Scalar>
MotionError motion_error(const DisplacementField<Scalar>& est, const MotionSpec& truth) {
  if (est.axial.size() != truth.axial_truth.size() ||
      est.transverse.size() != truth.transverse_truth.size())
    throw DimensionError("motion_error: length mismatch");
  MotionError e;
  if (est.axial.size() > 0)
    e.axial = (mean_zero(est.axial.template cast<double>()) - mean_zero(truth.axial_truth))
                  .cwiseAbs()
                  .mean();
  if (est.transverse.size() > 0)
    e.transverse = (mode_zero(est.transverse) - mode_zero(truth.transverse_truth))
                       .template cast<double>()
                       .cwiseAbs()
                       .mean();
  return e;
}

}  // namespace octalign
