#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "octalign/types.hpp"

namespace octalign {

/// Column resampling: output column a takes input column a + shift, clamped
/// to the valid range (edge columns are replicated).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> shift_columns(
    const Eigen::MatrixBase<Derived>& img, int shift) {
  const Index n = img.cols();
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(img.rows(), n);
  for (Index a = 0; a < n; ++a) out.col(a) = img.col(std::clamp<Index>(a + shift, 0, n - 1));
  return out;
}

/// Undo transverse motion: every B-scan is resampled at a + t_b.
template <typename Scalar>
Volume<Scalar> apply_transverse(const Volume<Scalar>& v, const Eigen::VectorXi& t) {
  if (t.size() != v.n_b()) throw DimensionError("apply_transverse: shift length mismatch");
  std::vector<Image<Scalar>> out;
  out.reserve(static_cast<std::size_t>(v.n_b()));
  for (Index b = 0; b < v.n_b(); ++b) out.push_back(shift_columns(v.bscan(b), t(b)));
  return Volume<Scalar>(std::move(out), v.spacing());
}

/// Same resampling applied to every surface's B-scan row.
template <typename Scalar>
SurfaceSet<Scalar> apply_transverse(const SurfaceSet<Scalar>& s, const Eigen::VectorXi& t) {
  if (t.size() != s.n_b()) throw DimensionError("apply_transverse: shift length mismatch");
  std::vector<Image<Scalar>> out;
  for (Index l = 0; l < s.n_surfaces(); ++l) {
    Image<Scalar> g(s.n_b(), s.n_a());
    for (Index b = 0; b < s.n_b(); ++b)
      g.row(b) = shift_columns(s.surface(l).row(b), t(b));
    out.push_back(std::move(g));
  }
  return SurfaceSet<Scalar>(std::move(out), s.names());
}

struct Projection {
  /// N_B x N_A; row b is the projection strip of B-scan b.
  Eigen::MatrixXd values;
  /// A-scans whose retina band contained no row (value set to 0).
  Index empty = 0;
};

/// Mean intensity of each A-scan. With `retina_only`, the mean runs over the
/// integer rows between the first and last surface (inclusive); otherwise
/// over the whole A-scan.
template <typename Scalar>
Projection mean_projection(const Volume<Scalar>& v, const SurfaceSet<Scalar>& s,
                           bool retina_only = true) {
  Projection p{Eigen::MatrixXd::Zero(v.n_b(), v.n_a()), 0};
  if (!retina_only) {
    for (Index b = 0; b < v.n_b(); ++b)
      p.values.row(b) = v.bscan(b).template cast<double>().colwise().mean();
    return p;
  }
  if (s.n_b() != v.n_b() || s.n_a() != v.n_a() || s.n_surfaces() < 1)
    throw DimensionError("mean_projection: surfaces do not match the volume");
  const Index top = 0, bottom = s.n_surfaces() - 1;
  const Index n_r = v.n_r();
  for (Index b = 0; b < v.n_b(); ++b)
    for (Index a = 0; a < v.n_a(); ++a) {
      const double r0 = static_cast<double>(s(top, b, a));
      const double r1 = static_cast<double>(s(bottom, b, a));
      // Rows are 1-based positions; storage index = row - 1.
      const Index lo = std::max<Index>(1, static_cast<Index>(std::ceil(r0)));
      const Index hi = std::min<Index>(n_r, static_cast<Index>(std::floor(r1)));
      if (hi < lo) {
        ++p.empty;
        continue;
      }
      p.values(b, a) = v.bscan(b).col(a).segment(lo - 1, hi - lo + 1).template cast<double>().mean();
    }
  return p;
}

/// Mean squared difference between `fixed(a)` and `moving(a + t)` over the
/// overlapping A-scans.
inline double overlap_mse(const Eigen::Ref<const Eigen::RowVectorXd>& fixed,
                          const Eigen::Ref<const Eigen::RowVectorXd>& moving, int t) {
  const Index n = fixed.size();
  const Index lo = std::max<Index>(0, -t), hi = std::min<Index>(n, n - t);
  if (hi <= lo) return std::numeric_limits<double>::infinity();
  const Index len = hi - lo;
  return (fixed.segment(lo, len) - moving.segment(lo + t, len)).squaredNorm() /
         static_cast<double>(len);
}

/// Best relative shift of `moving` against `fixed` in [-span, span]; ties go
/// to the smaller |t|.
inline int best_projection_shift(const Eigen::Ref<const Eigen::RowVectorXd>& fixed,
                                 const Eigen::Ref<const Eigen::RowVectorXd>& moving, int span) {
  int best = 0;
  double best_mse = overlap_mse(fixed, moving, 0);
  for (int t = -span; t <= span; ++t) {
    const double m = overlap_mse(fixed, moving, t);
    if (m < best_mse || (m == best_mse && std::abs(t) < std::abs(best))) {
      best = t;
      best_mse = m;
    }
  }
  return best;
}

/// Estimated transverse motion per B-scan (mode-zero gauge). `radius` bounds
/// the absolute motion; neighbouring B-scans are compared over twice that,
/// limited by the strip width.
inline Eigen::VectorXi align_projections(const Eigen::MatrixXd& proj, int radius) {
  const Index n_b = proj.rows(), n_a = proj.cols();
  if (n_b < 2) throw DimensionError("align_transverse: need at least two B-scans");
  if (radius < 1) throw ConfigError("align_transverse: radius must be >= 1");
  if (n_a <= radius)
    throw ConfigError("align_transverse: " + std::to_string(n_a) +
                      " A-scans cannot support search radius " + std::to_string(radius));
  const int span = static_cast<int>(std::min<Index>(2 * radius, n_a - 1));
  Eigen::VectorXi t = Eigen::VectorXi::Zero(n_b);
  for (Index b = 0; b + 1 < n_b; ++b)
    t(b + 1) = t(b) + best_projection_shift(proj.row(b), proj.row(b + 1), span);
  return mode_zero(t);
}

template <typename Scalar>
DisplacementField<Scalar> align_transverse(const Volume<Scalar>& v, const SurfaceSet<Scalar>& s,
                                           int radius = 15, bool retina_only = true) {
  DisplacementField<Scalar> out = DisplacementField<Scalar>::zeros(v.n_b());
  if (v.n_b() < 2) throw DimensionError("align_transverse: need at least two B-scans");
  if (v.n_a() <= radius)
    throw ConfigError("align_transverse: " + std::to_string(v.n_a()) +
                      " A-scans cannot support search radius " + std::to_string(radius));
  out.transverse = align_projections(mean_projection(v, s, retina_only).values, radius);
  return out;
}

}  // namespace octalign
