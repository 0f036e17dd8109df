#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "octalign/stm.hpp"
#include "octalign/types.hpp"

namespace octalign {

/// Restore anatomical order: neighbouring surfaces that are out of order are
/// swapped, pass after pass, until every A-scan is sorted.
template <typename Scalar>
SurfaceSet<Scalar> swap_trick(SurfaceSet<Scalar> s) {
  const Index n_l = s.n_surfaces();
  for (Index b = 0; b < s.n_b(); ++b)
    for (Index a = 0; a < s.n_a(); ++a) {
      bool swapped = true;
      while (swapped) {
        swapped = false;
        for (Index l = 0; l + 1 < n_l; ++l)
          if (s(l, b, a) > s(l + 1, b, a)) {
            std::swap(s(l, b, a), s(l + 1, b, a));
            swapped = true;
          }
      }
    }
  return s;
}

// ---------------------------------------------------------------------------
// Flattening to an estimated Bruch's membrane.

struct FlattenConfig {
  double sigma = 2.0;     // Gaussian smoothing along each A-scan, rows
  int median_size = 5;    // median filter over (b, a)
  /// 1-based row the membrane is moved to; defaults to 0.75 * R.
  std::optional<double> target_row;
};

template <typename Scalar>
struct FlattenResult {
  Volume<Scalar> volume;
  /// Estimated membrane position per (b, a), 1-based, after median filtering.
  Eigen::MatrixXd bm_rows;
  /// Shift applied to each A-scan; resample_axial_field(flat, -shifts) inverts.
  Eigen::MatrixXd shifts;
};

namespace detail {

inline Eigen::VectorXd gaussian_kernel(double sigma) {
  const Index half = std::max<Index>(1, static_cast<Index>(std::ceil(3.0 * sigma)));
  Eigen::VectorXd k(2 * half + 1);
  for (Index i = -half; i <= half; ++i)
    k(i + half) = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  return k / k.sum();
}

inline Eigen::VectorXd convolve_replicate(const Eigen::VectorXd& x, const Eigen::VectorXd& k) {
  const Index n = x.size(), half = k.size() / 2;
  Eigen::VectorXd out(n);
  for (Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Index j = -half; j <= half; ++j) acc += k(j + half) * x(std::clamp<Index>(i + j, 0, n - 1));
    out(i) = acc;
  }
  return out;
}

inline Eigen::MatrixXd median_filter(const Eigen::MatrixXd& m, int size) {
  const Index h = size / 2;
  Eigen::MatrixXd out(m.rows(), m.cols());
  std::vector<double> buf;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      buf.clear();
      for (Index u = std::max<Index>(0, i - h); u <= std::min<Index>(m.rows() - 1, i + h); ++u)
        for (Index v = std::max<Index>(0, j - h); v <= std::min<Index>(m.cols() - 1, j + h); ++v)
          buf.push_back(m(u, v));
      std::sort(buf.begin(), buf.end());
      const std::size_t n = buf.size();
      out(i, j) = n % 2 ? buf[n / 2] : 0.5 * (buf[n / 2 - 1] + buf[n / 2]);
    }
  return out;
}

}  // namespace detail

/// Membrane position of one A-scan: the strongest bright-to-dark step in the
/// lower half after Gaussian smoothing, as a 1-based row (sub-row by parabolic
/// fit on the step).
inline double estimate_bm_row(const Eigen::VectorXd& ascan, double sigma) {
  const Index n = ascan.size();
  const Eigen::VectorXd s = detail::convolve_replicate(ascan, detail::gaussian_kernel(sigma));
  // step(i) = s(i+1) - s(i): most negative where intensity drops hardest.
  Index best = std::max<Index>(n / 2, 0);
  double best_step = std::numeric_limits<double>::infinity();
  for (Index i = n / 2; i + 1 < n; ++i) {
    const double step = s(i + 1) - s(i);
    if (step < best_step) {
      best_step = step;
      best = i;
    }
  }
  double pos = static_cast<double>(best);
  if (best > n / 2 && best + 2 < n) {
    const double fm = s(best) - s(best - 1), fp = s(best + 2) - s(best + 1);
    const double curv = fm - 2.0 * best_step + fp;
    if (curv > 0.0) pos += std::clamp(0.5 * (fm - fp) / curv, -0.5, 0.5);
  }
  // The edge lies halfway between storage rows pos and pos+1, i.e. 1-based
  // row pos + 1.5. A surface at S darkens rows >= ceil(S), so this is unbiased.
  return pos + 1.5;
}

template <typename Scalar>
FlattenResult<Scalar> flatten_to_bm(const Volume<Scalar>& v, const FlattenConfig& cfg = {}) {
  if (!(cfg.sigma > 0.0)) throw ConfigError("flatten: sigma must be positive");
  if (cfg.median_size < 1 || cfg.median_size % 2 == 0)
    throw ConfigError("flatten: median size must be odd and positive");
  const double target = cfg.target_row.value_or(0.75 * static_cast<double>(v.n_r()));
  Eigen::MatrixXd bm(v.n_b(), v.n_a());
  for (Index b = 0; b < v.n_b(); ++b)
    for (Index a = 0; a < v.n_a(); ++a)
      bm(b, a) = estimate_bm_row(v.bscan(b).col(a).template cast<double>(), cfg.sigma);
  bm = detail::median_filter(bm, cfg.median_size);
  Eigen::MatrixXd shifts = (bm.array() - target).matrix();
  Volume<Scalar> flat = resample_axial_field(v, shifts);
  return {std::move(flat), std::move(bm), std::move(shifts)};
}

// ---------------------------------------------------------------------------
// Row cropping. Row ranges are 1-based and inclusive.

template <typename Scalar>
struct Cropped {
  Volume<Scalar> volume;
  SurfaceSet<Scalar> surfaces;
};

template <typename Scalar>
Cropped<Scalar> crop_rows(const Volume<Scalar>& v, const SurfaceSet<Scalar>& s, Index first,
                          Index last) {
  if (first < 1 || last > v.n_r() || last - first + 1 < 2)
    throw RangeError("crop_rows: range " + std::to_string(first) + ":" + std::to_string(last) +
                     " is not within [1, " + std::to_string(v.n_r()) + "] or spans < 2 rows");
  std::string offenders;
  int n_off = 0;
  for (Index l = 0; l < s.n_surfaces(); ++l)
    for (Index b = 0; b < s.n_b(); ++b)
      for (Index a = 0; a < s.n_a(); ++a) {
        const double r = static_cast<double>(s(l, b, a));
        if (r < static_cast<double>(first) || r > static_cast<double>(last)) {
          if (n_off < 8)
            offenders += " (l=" + std::to_string(l + 1) + ", b=" + std::to_string(b + 1) +
                         ", a=" + std::to_string(a + 1) + ", r=" + std::to_string(r) + ")";
          ++n_off;
        }
      }
  if (n_off > 0)
    throw RangeError("crop_rows: " + std::to_string(n_off) + " surface positions outside " +
                     std::to_string(first) + ":" + std::to_string(last) + ":" + offenders);

  std::vector<Image<Scalar>> bscans;
  for (Index b = 0; b < v.n_b(); ++b) bscans.push_back(v.bscan(b).middleRows(first - 1, last - first + 1));
  std::vector<Image<Scalar>> grids;
  for (Index l = 0; l < s.n_surfaces(); ++l)
    grids.push_back((s.surface(l).array() - Scalar(first - 1)).matrix());
  return {Volume<Scalar>(std::move(bscans), v.spacing()),
          SurfaceSet<Scalar>(std::move(grids), s.names())};
}

/// Inverse of crop_rows: pads back to `n_r` rows with `fill`.
template <typename Scalar>
Cropped<Scalar> uncrop_rows(const Volume<Scalar>& v, const SurfaceSet<Scalar>& s, Index first,
                            Index n_r, Scalar fill = Scalar(0)) {
  if (first < 1 || first - 1 + v.n_r() > n_r)
    throw RangeError("uncrop_rows: cropped block does not fit the original rows");
  std::vector<Image<Scalar>> bscans;
  for (Index b = 0; b < v.n_b(); ++b) {
    Image<Scalar> img = Image<Scalar>::Constant(n_r, v.n_a(), fill);
    img.middleRows(first - 1, v.n_r()) = v.bscan(b);
    bscans.push_back(std::move(img));
  }
  std::vector<Image<Scalar>> grids;
  for (Index l = 0; l < s.n_surfaces(); ++l)
    grids.push_back((s.surface(l).array() + Scalar(first - 1)).matrix());
  return {Volume<Scalar>(std::move(bscans), v.spacing()),
          SurfaceSet<Scalar>(std::move(grids), s.names())};
}

}  // namespace octalign
