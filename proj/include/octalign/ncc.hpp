#pragma once

#include <algorithm>

#include "octalign/types.hpp"

namespace octalign {

/// Windowed variance below this counts as flat; flat windows score 0.
inline constexpr double kVarianceEps = 1e-5;

namespace detail {

/// (R+1) x (C+1) summed-area table with a zero first row and column.
template <typename Derived>
Eigen::MatrixXd summed_area(const Eigen::MatrixBase<Derived>& img) {
  Eigen::MatrixXd sat = Eigen::MatrixXd::Zero(img.rows() + 1, img.cols() + 1);
  for (Index c = 0; c < img.cols(); ++c)
    for (Index r = 0; r < img.rows(); ++r)
      sat(r + 1, c + 1) = static_cast<double>(img(r, c)) + sat(r, c + 1) + sat(r + 1, c) -
                          sat(r, c);
  return sat;
}

inline double box_sum(const Eigen::MatrixXd& sat, Index r0, Index r1, Index c0, Index c1) {
  // Inclusive-exclusive bounds [r0, r1) x [c0, c1).
  return sat(r1, c1) - sat(r0, c1) - sat(r1, c0) + sat(r0, c0);
}

}  // namespace detail

/// Per-pixel squared local normalized cross-correlation between two images
/// over an n x n window centred on each pixel. Windows are clipped at the
/// image border and statistics use the pixels actually inside.
template <typename DA, typename DB>
Eigen::MatrixXd local_ncc_map(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                              int window, double eps = kVarianceEps) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("local_ncc: image shapes differ");
  if (window < 1 || window % 2 == 0) throw ConfigError("local_ncc: window must be odd");
  const Index n_r = a.rows(), n_c = a.cols();
  const Eigen::MatrixXd ad = a.template cast<double>();
  const Eigen::MatrixXd bd = b.template cast<double>();
  const auto sa = detail::summed_area(ad);
  const auto sb = detail::summed_area(bd);
  const auto saa = detail::summed_area(ad.cwiseProduct(ad));
  const auto sbb = detail::summed_area(bd.cwiseProduct(bd));
  const auto sab = detail::summed_area(ad.cwiseProduct(bd));
  const Index h = window / 2;

  Eigen::MatrixXd out(n_r, n_c);
  for (Index c = 0; c < n_c; ++c) {
    const Index c0 = std::max<Index>(0, c - h), c1 = std::min<Index>(n_c, c + h + 1);
    for (Index r = 0; r < n_r; ++r) {
      const Index r0 = std::max<Index>(0, r - h), r1 = std::min<Index>(n_r, r + h + 1);
      const double n = static_cast<double>((r1 - r0) * (c1 - c0));
      const double ma = detail::box_sum(sa, r0, r1, c0, c1);
      const double mb = detail::box_sum(sb, r0, r1, c0, c1);
      const double va = detail::box_sum(saa, r0, r1, c0, c1) - ma * ma / n;
      const double vb = detail::box_sum(sbb, r0, r1, c0, c1) - mb * mb / n;
      if (va / n < eps || vb / n < eps) {
        out(r, c) = 0.0;
        continue;
      }
      const double cross = detail::box_sum(sab, r0, r1, c0, c1) - ma * mb / n;
      out(r, c) = cross * cross / (va * vb);
    }
  }
  return out;
}

template <typename DA, typename DB>
double local_ncc_sum(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, int window,
                     double eps = kVarianceEps) {
  return local_ncc_map(a, b, window, eps).sum();
}

/// Pearson correlation of two equally sized images; 0 if either is flat.
template <typename DA, typename DB>
double global_ncc(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                  double eps = kVarianceEps) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("global_ncc: image shapes differ");
  if (a.size() == 0) return 0.0;
  const Eigen::ArrayXXd ad = a.template cast<double>().array();
  const Eigen::ArrayXXd bd = b.template cast<double>().array();
  const Eigen::ArrayXXd za = ad - ad.mean();
  const Eigen::ArrayXXd zb = bd - bd.mean();
  const double n = static_cast<double>(a.size());
  const double va = za.square().sum() / n;
  const double vb = zb.square().sum() / n;
  if (va < eps || vb < eps) return 0.0;
  return (za * zb).sum() / n / std::sqrt(va * vb);
}

}  // namespace octalign
