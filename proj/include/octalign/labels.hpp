#pragma once

#include <string>

#include "octalign/types.hpp"

namespace octalign {

inline std::string describe(const OrderViolation& v) {
  return "(b=" + std::to_string(v.b + 1) + ", a=" + std::to_string(v.a + 1) +
         ", l=" + std::to_string(v.l + 1) + ")";
}

/// Pixel (b, a, r) gets the number of surfaces with position <= r.
template <typename Scalar>
LabelMap surfaces_to_labels(const SurfaceSet<Scalar>& s, Index n_r) {
  if (n_r < 1) throw DimensionError("surfaces_to_labels: row count must be positive");
  if (auto v = s.first_order_violation())
    throw OrderingError("surfaces_to_labels: surfaces out of order at " + describe(*v));

  LabelMap m;
  m.n_surfaces = s.n_surfaces();
  m.labels.assign(static_cast<std::size_t>(s.n_b()), Eigen::MatrixXi::Zero(n_r, s.n_a()));
  for (Index b = 0; b < s.n_b(); ++b) {
    auto& img = m.labels[static_cast<std::size_t>(b)];
    for (Index a = 0; a < s.n_a(); ++a)
      for (Index i = 0; i < n_r; ++i) {
        const Scalar row = Scalar(i + 1);
        int label = 0;
        for (Index l = 0; l < s.n_surfaces(); ++l)
          if (s(l, b, a) <= row) ++label;
        img(i, a) = label;
      }
  }
  return m;
}

template <typename Scalar>
struct LabelSurfaces {
  SurfaceSet<Scalar> surfaces;
  /// Number of (b, a, l) positions that had no pixel labelled >= l and were
  /// clamped to the last row.
  Index clamped = 0;
};

/// Inverse of surfaces_to_labels: surface l sits at 1 + (number of pixels in
/// the A-scan labelled below l).
template <typename Scalar = double>
LabelSurfaces<Scalar> labels_to_surfaces(const LabelMap& m) {
  const Index n_b = m.n_b(), n_a = m.n_a(), n_r = m.n_r();
  LabelSurfaces<Scalar> out{SurfaceSet<Scalar>(m.n_surfaces, n_b, n_a), 0};
  for (Index b = 0; b < n_b; ++b) {
    const auto& img = m.labels[static_cast<std::size_t>(b)];
    if (img.rows() != n_r || img.cols() != n_a)
      throw DimensionError("labels_to_surfaces: inconsistent label image shapes");
    for (Index a = 0; a < n_a; ++a) {
      for (Index i = 0; i < n_r; ++i) {
        const int v = img(i, a);
        if (v < 0 || v > m.n_surfaces)
          throw RangeError("labels_to_surfaces: label " + std::to_string(v) +
                           " out of range at (b=" + std::to_string(b + 1) +
                           ", a=" + std::to_string(a + 1) + ")");
        if (i > 0 && v < img(i - 1, a))
          throw OrderingError("labels_to_surfaces: non-monotone A-scan at (b=" +
                              std::to_string(b + 1) + ", a=" + std::to_string(a + 1) + ")");
      }
      for (Index l = 1; l <= m.n_surfaces; ++l) {
        const Index below = (img.col(a).array() < static_cast<int>(l)).count();
        Index pos = 1 + below;
        if (pos > n_r) {
          pos = n_r;
          ++out.clamped;
        }
        out.surfaces(l - 1, b, a) = Scalar(pos);
      }
    }
  }
  return out;
}

}  // namespace octalign
