#pragma once

#include <cmath>

#include "octalign/types.hpp"

// Axial spatial transformer. Output pixel (r, a) samples the source at
// (r + d, a) with linear interpolation between the two bracketing rows, so a
// positive shift moves image content toward smaller row indices. Samples
// falling outside [1, R] take the nearest edge row.

namespace octalign {

namespace detail {

struct RowSample {
  Index lo;
  Index hi;
  double frac;  // weight of `hi`
};

inline RowSample sample_row(Index i, double shift, Index n_r) {
  const double src = static_cast<double>(i) + shift;
  if (src <= 0.0) return {0, 0, 0.0};
  const double last = static_cast<double>(n_r - 1);
  if (src >= last) return {n_r - 1, n_r - 1, 0.0};
  const double lo = std::floor(src);
  const Index lo_i = static_cast<Index>(lo);
  return {lo_i, lo_i + 1, src - lo};
}

}  // namespace detail

/// Shift one image (or feature map) of shape rows x columns by `shift` rows.
template <typename Derived>
Image<typename Derived::Scalar> resample_image_axial(const Eigen::MatrixBase<Derived>& img,
                                                     double shift) {
  using S = typename Derived::Scalar;
  const Index n_r = img.rows();
  Image<S> out(n_r, img.cols());
  for (Index i = 0; i < n_r; ++i) {
    const auto s = detail::sample_row(i, shift, n_r);
    if (s.frac == 0.0) {
      out.row(i) = img.row(s.lo);
    } else {
      const S w_hi = S(s.frac);
      const S w_lo = S(1) - w_hi;
      out.row(i) = w_lo * img.row(s.lo) + w_hi * img.row(s.hi);
    }
  }
  return out;
}

/// Analytic derivative of resample_image_axial with respect to the shift.
/// Zero where the sample is clamped; at exact integer sample positions the
/// right-hand derivative is returned.
template <typename Derived>
Image<typename Derived::Scalar> resample_image_axial_derivative(
    const Eigen::MatrixBase<Derived>& img, double shift) {
  using S = typename Derived::Scalar;
  const Index n_r = img.rows();
  Image<S> out = Image<S>::Zero(n_r, img.cols());
  for (Index i = 0; i < n_r; ++i) {
    const double src = static_cast<double>(i) + shift;
    if (src < 0.0 || src >= static_cast<double>(n_r - 1)) continue;
    const Index lo = static_cast<Index>(std::floor(src));
    out.row(i) = img.row(lo + 1) - img.row(lo);
  }
  return out;
}

/// Apply per-B-scan axial displacements (one per B-scan, in rows).
template <typename Scalar, typename Derived>
Volume<Scalar> resample_axial(const Volume<Scalar>& v, const Eigen::MatrixBase<Derived>& d) {
  if (d.size() != v.n_b())
    throw DimensionError("resample_axial: " + std::to_string(d.size()) +
                         " displacements for " + std::to_string(v.n_b()) + " B-scans");
  if (!d.allFinite()) throw NumericalError("resample_axial: non-finite displacement");
  std::vector<Image<Scalar>> out;
  out.reserve(static_cast<std::size_t>(v.n_b()));
  for (Index b = 0; b < v.n_b(); ++b)
    out.push_back(resample_image_axial(v.bscan(b), static_cast<double>(d(b))));
  return Volume<Scalar>(std::move(out), v.spacing());
}

/// Per-A-scan variant: `shifts` is N_B x N_A. Used by flattening, where each
/// column moves independently.
template <typename Scalar, typename Derived>
Volume<Scalar> resample_axial_field(const Volume<Scalar>& v,
                                    const Eigen::MatrixBase<Derived>& shifts) {
  if (shifts.rows() != v.n_b() || shifts.cols() != v.n_a())
    throw DimensionError("resample_axial_field: shift map shape mismatch");
  if (!shifts.allFinite()) throw NumericalError("resample_axial_field: non-finite shift");
  std::vector<Image<Scalar>> out;
  out.reserve(static_cast<std::size_t>(v.n_b()));
  const Index n_r = v.n_r();
  for (Index b = 0; b < v.n_b(); ++b) {
    const auto& src = v.bscan(b);
    Image<Scalar> img(n_r, v.n_a());
    for (Index a = 0; a < v.n_a(); ++a) {
      const double shift = static_cast<double>(shifts(b, a));
      for (Index i = 0; i < n_r; ++i) {
        const auto s = detail::sample_row(i, shift, n_r);
        img(i, a) = s.frac == 0.0 ? src(s.lo, a)
                                  : (Scalar(1) - Scalar(s.frac)) * src(s.lo, a) +
                                        Scalar(s.frac) * src(s.hi, a);
      }
    }
    out.push_back(std::move(img));
  }
  return Volume<Scalar>(std::move(out), v.spacing());
}

/// Displacements for a grid downsampled by `factor` along rows.
template <typename Derived>
Vector<typename Derived::Scalar> rescale_displacements(const Eigen::MatrixBase<Derived>& d,
                                                       double factor) {
  using S = typename Derived::Scalar;
  if (!(factor > 0.0) || !std::isfinite(factor))
    throw ConfigError("rescale_displacements: factor must be positive and finite");
  return (d / S(factor)).eval();
}

}  // namespace octalign
