#pragma once

#include <random>

#include "octalign/types.hpp"

namespace testing {

using octalign::Index;

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Index rows, Index cols, double lo = -1.0,
                                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = u(rng);
  return m;
}

inline octalign::Volume<double> random_volume(std::mt19937_64& rng, Index n_b, Index n_a, Index n_r) {
  std::vector<Eigen::MatrixXd> bscans;
  for (Index b = 0; b < n_b; ++b) bscans.push_back(random_matrix(rng, n_r, n_a, 0.0, 1.0));
  return {std::move(bscans), {3.24, 6.7, 67.0}};
}

/// Ordered surfaces with positions in [lo, hi].
inline octalign::SurfaceSet<double> random_ordered(std::mt19937_64& rng, Index n_l, Index n_b, Index n_a,
                                                   double lo, double hi, bool integer = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  octalign::SurfaceSet<double> s(n_l, n_b, n_a);
  std::vector<double> col(static_cast<std::size_t>(n_l));
  for (Index b = 0; b < n_b; ++b)
    for (Index a = 0; a < n_a; ++a) {
      for (auto& x : col) x = integer ? std::round(u(rng)) : u(rng);
      std::sort(col.begin(), col.end());
      for (Index l = 0; l < n_l; ++l) s(l, b, a) = col[static_cast<std::size_t>(l)];
    }
  return s;
}

/// Smooth, textured B-scan with features along both axes.
inline Eigen::MatrixXd textured(Index n_r, Index n_a, double phase = 0.0) {
  Eigen::MatrixXd m(n_r, n_a);
  for (Index a = 0; a < n_a; ++a)
    for (Index r = 0; r < n_r; ++r)
      m(r, a) = std::sin(0.37 * static_cast<double>(r) + phase) +
                0.5 * std::cos(0.23 * static_cast<double>(a) + 0.11 * static_cast<double>(r * a) / 8.0);
  return m;
}

}  // namespace testing
