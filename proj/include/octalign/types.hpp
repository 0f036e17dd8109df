#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "octalign/errors.hpp"

namespace octalign {

using Index = Eigen::Index;

/// A 2D image stored rows x A-scans. Column-major, so each A-scan is contiguous.
template <typename Scalar>
using Image = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Voxel size in micrometers along row (z), A-scan (x) and B-scan (y).
struct Spacing {
  double dz = 1.0;
  double dx = 1.0;
  double dy = 1.0;

  bool valid() const { return dz > 0.0 && dx > 0.0 && dy > 0.0; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Volumetric OCT intensities V(b, a, r). Storage indices are 0-based; row
/// *positions* (surfaces, displacements) elsewhere in the library are
/// 1-based, so storage row i holds position i + 1.
template <typename Scalar>
class Volume {
 public:
  using ImageType = Image<Scalar>;

  Volume() = default;

  Volume(Index n_b, Index n_a, Index n_r, Spacing spacing = {})
      : bscans_(static_cast<std::size_t>(std::max<Index>(n_b, 0)),
                ImageType::Zero(std::max<Index>(n_r, 0), std::max<Index>(n_a, 0))),
        spacing_(spacing) {
    check_shape(n_b, n_a, n_r);
  }

  Volume(std::vector<ImageType> bscans, Spacing spacing)
      : bscans_(std::move(bscans)), spacing_(spacing) {
    const Index n_r = bscans_.empty() ? 0 : bscans_.front().rows();
    const Index n_a = bscans_.empty() ? 0 : bscans_.front().cols();
    check_shape(static_cast<Index>(bscans_.size()), n_a, n_r);
    for (const auto& img : bscans_) {
      if (img.rows() != n_r || img.cols() != n_a)
        throw DimensionError("volume: B-scans have inconsistent shapes");
      if (!img.allFinite()) throw NumericalError("volume: non-finite intensity");
    }
  }

  Index n_b() const { return static_cast<Index>(bscans_.size()); }
  Index n_a() const { return bscans_.empty() ? 0 : bscans_.front().cols(); }
  Index n_r() const { return bscans_.empty() ? 0 : bscans_.front().rows(); }
  const Spacing& spacing() const { return spacing_; }

  ImageType& bscan(Index b) { return bscans_[static_cast<std::size_t>(b)]; }
  const ImageType& bscan(Index b) const { return bscans_[static_cast<std::size_t>(b)]; }
  const std::vector<ImageType>& bscans() const { return bscans_; }

  Scalar& operator()(Index b, Index a, Index r) { return bscan(b)(r, a); }
  Scalar operator()(Index b, Index a, Index r) const { return bscan(b)(r, a); }

  bool same_shape(const Volume& o) const {
    return n_b() == o.n_b() && n_a() == o.n_a() && n_r() == o.n_r();
  }

  bool all_finite() const {
    return std::all_of(bscans_.begin(), bscans_.end(),
                       [](const ImageType& img) { return img.allFinite(); });
  }

  friend bool operator==(const Volume& x, const Volume& y) {
    if (!x.same_shape(y) || !(x.spacing_ == y.spacing_)) return false;
    for (Index b = 0; b < x.n_b(); ++b)
      if (x.bscan(b) != y.bscan(b)) return false;
    return true;
  }

 private:
  void check_shape(Index n_b, Index n_a, Index n_r) const {
    // A single B-scan is representable so callers get a meaningful error
    // from the algorithms that need neighbours.
    if (n_b < 1 || n_a < 1 || n_r < 2)
      throw DimensionError("volume: need n_b >= 1, n_a >= 1, n_r >= 2 (got " +
                           std::to_string(n_b) + "x" + std::to_string(n_a) + "x" +
                           std::to_string(n_r) + ")");
    if (!spacing_.valid()) throw DimensionError("volume: spacing must be strictly positive");
  }

  std::vector<ImageType> bscans_;
  Spacing spacing_;
};

/// Location of a violated ordering constraint, 0-based (b, a) and the
/// 0-based index l of the upper surface of the offending pair.
struct OrderViolation {
  Index b = 0;
  Index a = 0;
  Index l = 0;
};

/// L surfaces, each an N_B x N_A grid of 1-based row positions.
template <typename Scalar>
class SurfaceSet {
 public:
  using Grid = Image<Scalar>;

  SurfaceSet() = default;

  SurfaceSet(Index n_surfaces, Index n_b, Index n_a)
      : positions_(static_cast<std::size_t>(n_surfaces), Grid::Zero(n_b, n_a)) {
    for (Index l = 0; l < n_surfaces; ++l) names_.push_back(default_name(l));
    n_b_ = n_b;
    n_a_ = n_a;
  }

  SurfaceSet(std::vector<Grid> positions, std::vector<std::string> names = {})
      : positions_(std::move(positions)), names_(std::move(names)) {
    if (!positions_.empty()) {
      n_b_ = positions_.front().rows();
      n_a_ = positions_.front().cols();
    }
    for (const auto& g : positions_)
      if (g.rows() != n_b_ || g.cols() != n_a_)
        throw DimensionError("surface set: inconsistent surface grid shapes");
    if (names_.empty())
      for (Index l = 0; l < n_surfaces(); ++l) names_.push_back(default_name(l));
    if (static_cast<Index>(names_.size()) != n_surfaces())
      throw DimensionError("surface set: name count does not match surface count");
  }

  Index n_surfaces() const { return static_cast<Index>(positions_.size()); }
  Index n_b() const { return n_b_; }
  Index n_a() const { return n_a_; }

  Grid& surface(Index l) { return positions_[static_cast<std::size_t>(l)]; }
  const Grid& surface(Index l) const { return positions_[static_cast<std::size_t>(l)]; }
  const std::vector<Grid>& surfaces() const { return positions_; }
  const std::vector<std::string>& names() const { return names_; }

  Scalar& operator()(Index l, Index b, Index a) { return surface(l)(b, a); }
  Scalar operator()(Index l, Index b, Index a) const { return surface(l)(b, a); }

  bool same_shape(const SurfaceSet& o) const {
    return n_surfaces() == o.n_surfaces() && n_b() == o.n_b() && n_a() == o.n_a();
  }

  /// First (b, a, l) in b-major order with r_l > r_{l+1}.
  std::optional<OrderViolation> first_order_violation() const {
    for (Index b = 0; b < n_b_; ++b)
      for (Index a = 0; a < n_a_; ++a)
        for (Index l = 0; l + 1 < n_surfaces(); ++l)
          if (surface(l)(b, a) > surface(l + 1)(b, a)) return OrderViolation{b, a, l};
    return std::nullopt;
  }

  bool is_ordered() const { return !first_order_violation().has_value(); }

  /// True if every position lies in [1, n_r].
  bool within_rows(Index n_r) const {
    for (const auto& g : positions_)
      if (g.size() > 0 && (g.minCoeff() < Scalar(1) || g.maxCoeff() > Scalar(n_r)))
        return false;
    return true;
  }

  friend bool operator==(const SurfaceSet& x, const SurfaceSet& y) {
    if (!x.same_shape(y)) return false;
    for (Index l = 0; l < x.n_surfaces(); ++l)
      if (x.surface(l) != y.surface(l)) return false;
    return true;
  }

 private:
  static std::string default_name(Index l) { return "S" + std::to_string(l + 1); }

  std::vector<Grid> positions_;
  std::vector<std::string> names_;
  Index n_b_ = 0;
  Index n_a_ = 0;
};

/// Per-A-scan probability over rows for one surface: one R x N_A image per
/// B-scan, each column a distribution over rows 1..R.
template <typename Scalar>
class SurfaceDistribution {
 public:
  using ImageType = Image<Scalar>;

  SurfaceDistribution() = default;
  explicit SurfaceDistribution(std::vector<ImageType> probs) : probs_(std::move(probs)) {
    for (const auto& p : probs_)
      if (p.rows() != n_r() || p.cols() != n_a())
        throw DimensionError("surface distribution: inconsistent shapes");
  }

  Index n_b() const { return static_cast<Index>(probs_.size()); }
  Index n_a() const { return probs_.empty() ? 0 : probs_.front().cols(); }
  Index n_r() const { return probs_.empty() ? 0 : probs_.front().rows(); }

  ImageType& bscan(Index b) { return probs_[static_cast<std::size_t>(b)]; }
  const ImageType& bscan(Index b) const { return probs_[static_cast<std::size_t>(b)]; }

  /// Throws NormalizationError naming the first A-scan whose vector is
  /// negative somewhere or does not sum to one within `tol`.
  void check_normalized(double tol = 1e-6) const {
    for (Index b = 0; b < n_b(); ++b)
      for (Index a = 0; a < n_a(); ++a) {
        const auto col = bscan(b).col(a);
        const double sum = static_cast<double>(col.sum());
        if (col.minCoeff() < Scalar(0) || std::abs(sum - 1.0) > tol)
          throw NormalizationError("surface distribution: A-scan (b=" + std::to_string(b) +
                                   ", a=" + std::to_string(a) + ") sums to " +
                                   std::to_string(sum));
      }
  }

 private:
  std::vector<ImageType> probs_;
};

/// Per-B-scan motion: continuous axial shift in rows, integer transverse
/// shift in A-scans.
template <typename Scalar>
struct DisplacementField {
  Vector<Scalar> axial;
  Eigen::VectorXi transverse;

  static DisplacementField zeros(Index n_b) {
    return {Vector<Scalar>::Zero(n_b), Eigen::VectorXi::Zero(n_b)};
  }
  Index n_b() const { return axial.size(); }
};

/// Simulated ground-truth motion. Displacements follow the same convention as
/// DisplacementField: resampling with them undoes the motion.
struct MotionSpec {
  Eigen::VectorXd axial_truth;
  Eigen::VectorXi transverse_truth;
  /// First B-scan (0-based) of every transverse group, ascending, starting at 0.
  std::vector<Index> group_boundaries;
};

/// Pixel-wise layer labels: one R x N_A integer image per B-scan with values
/// in [0, n_surfaces].
struct LabelMap {
  std::vector<Eigen::MatrixXi> labels;
  Index n_surfaces = 0;

  Index n_b() const { return static_cast<Index>(labels.size()); }
  Index n_a() const { return labels.empty() ? 0 : labels.front().cols(); }
  Index n_r() const { return labels.empty() ? 0 : labels.front().rows(); }
};

// ---------------------------------------------------------------------------
// Gauge fixing. Alignment objectives only see differences between B-scans, so
// displacements are compared after mapping to a canonical representative.

template <typename Derived>
Vector<typename Derived::Scalar> mean_zero(const Eigen::MatrixBase<Derived>& d) {
  using S = typename Derived::Scalar;
  if (d.size() == 0) return Vector<S>();
  return (d.array() - d.mean()).matrix();
}

/// Most frequent value of `t`; ties go to the smaller |value|, then the
/// smaller value.
inline int mode_of(const Eigen::VectorXi& t) {
  std::map<int, int> counts;
  for (Index i = 0; i < t.size(); ++i) ++counts[t(i)];
  int best = 0;
  int best_count = -1;
  for (const auto& [value, count] : counts) {
    const bool better = count > best_count ||
                        (count == best_count && std::abs(value) < std::abs(best));
    if (better) {
      best = value;
      best_count = count;
    }
  }
  return best;
}

inline Eigen::VectorXi mode_zero(const Eigen::VectorXi& t) {
  if (t.size() == 0) return t;
  return (t.array() - mode_of(t)).matrix();
}

}  // namespace octalign
