#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "octalign/align_axial.hpp"
#include "octalign/labels.hpp"
#include "octalign/types.hpp"

namespace octalign {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kDiceSmoothing = 1e-6;

using BScanMask = Eigen::Array<bool, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Surface distribution head.

/// Expected row position of every A-scan: sum_r r * q(r), rows 1..R.
template <typename Scalar>
Image<Scalar> soft_argmax(const SurfaceDistribution<Scalar>& q, double tol = 1e-6) {
  q.check_normalized(tol);
  const Vector<Scalar> rows = Vector<Scalar>::LinSpaced(q.n_r(), Scalar(1), Scalar(q.n_r()));
  Image<Scalar> out(q.n_b(), q.n_a());
  for (Index b = 0; b < q.n_b(); ++b) out.row(b) = rows.transpose() * q.bscan(b);
  return out;
}

template <typename Scalar>
SurfaceSet<Scalar> soft_argmax(const std::vector<SurfaceDistribution<Scalar>>& qs,
                               double tol = 1e-6) {
  std::vector<Image<Scalar>> out;
  for (const auto& q : qs) out.push_back(soft_argmax(q, tol));
  return SurfaceSet<Scalar>(std::move(out));
}

namespace detail {

template <typename Scalar, typename Derived>
void check_gt_rows(const SurfaceDistribution<Scalar>& q, const Eigen::MatrixBase<Derived>& gt) {
  if (gt.rows() != q.n_b() || gt.cols() != q.n_a())
    throw DimensionError("loss_ce: ground truth shape does not match distribution");
  for (Index b = 0; b < gt.rows(); ++b)
    for (Index a = 0; a < gt.cols(); ++a) {
      const double r = static_cast<double>(gt(b, a));
      if (r != std::floor(r) || r < 1.0 || r > static_cast<double>(q.n_r()))
        throw RangeError("loss_ce: ground-truth row " + std::to_string(r) + " at (b=" +
                         std::to_string(b + 1) + ", a=" + std::to_string(a + 1) +
                         ") is not an integer in [1, R]");
    }
}

}  // namespace detail

/// Cross entropy of the surface distribution against integer ground-truth rows.
template <typename Scalar, typename Derived>
Scalar loss_ce(const SurfaceDistribution<Scalar>& q, const Eigen::MatrixBase<Derived>& gt) {
  detail::check_gt_rows(q, gt);
  Scalar total(0);
  for (Index b = 0; b < q.n_b(); ++b)
    for (Index a = 0; a < q.n_a(); ++a) {
      const Index i = static_cast<Index>(gt(b, a)) - 1;
      total -= std::log(std::max(q.bscan(b)(i, a), Scalar(kProbabilityFloor)));
    }
  return total;
}

/// Gradient of loss_ce with respect to every entry of q.
template <typename Scalar, typename Derived>
std::vector<Image<Scalar>> grad_ce(const SurfaceDistribution<Scalar>& q,
                                   const Eigen::MatrixBase<Derived>& gt) {
  detail::check_gt_rows(q, gt);
  std::vector<Image<Scalar>> g(static_cast<std::size_t>(q.n_b()),
                               Image<Scalar>::Zero(q.n_r(), q.n_a()));
  for (Index b = 0; b < q.n_b(); ++b)
    for (Index a = 0; a < q.n_a(); ++a) {
      const Index i = static_cast<Index>(gt(b, a)) - 1;
      const Scalar p = q.bscan(b)(i, a);
      if (p > Scalar(kProbabilityFloor)) g[static_cast<std::size_t>(b)](i, a) = Scalar(-1) / p;
    }
  return g;
}

// ---------------------------------------------------------------------------
// Smooth L1 between predicted and ground-truth positions.

template <typename DA, typename DB>
typename DA::Scalar loss_smooth_l1(const Eigen::MatrixBase<DA>& pred,
                                   const Eigen::MatrixBase<DB>& gt) {
  using S = typename DA::Scalar;
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw DimensionError("loss_smooth_l1: shape mismatch");
  const auto t = (pred - gt.template cast<S>()).array().eval();
  const auto abs_t = t.abs();
  return (abs_t < S(1)).select(S(0.5) * t.square(), abs_t - S(0.5)).sum();
}

template <typename DA, typename DB>
Image<typename DA::Scalar> grad_smooth_l1(const Eigen::MatrixBase<DA>& pred,
                                          const Eigen::MatrixBase<DB>& gt) {
  using S = typename DA::Scalar;
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw DimensionError("grad_smooth_l1: shape mismatch");
  const auto t = (pred - gt.template cast<S>()).array().eval();
  return (t.abs() < S(1)).select(t, t.sign()).matrix();
}

// ---------------------------------------------------------------------------
// Global coherence: squared forward differences along A-scans and B-scans.

template <typename Derived>
typename Derived::Scalar loss_smooth_s(const Eigen::MatrixBase<Derived>& s) {
  using S = typename Derived::Scalar;
  S total(0);
  if (s.cols() > 1) total += (s.rightCols(s.cols() - 1) - s.leftCols(s.cols() - 1)).squaredNorm();
  if (s.rows() > 1) total += (s.bottomRows(s.rows() - 1) - s.topRows(s.rows() - 1)).squaredNorm();
  return total;
}

template <typename Scalar>
Scalar loss_smooth_s(const SurfaceSet<Scalar>& s) {
  Scalar total(0);
  for (const auto& g : s.surfaces()) total += loss_smooth_s(g);
  return total;
}

template <typename Derived>
Image<typename Derived::Scalar> grad_smooth_s(const Eigen::MatrixBase<Derived>& s) {
  using S = typename Derived::Scalar;
  Image<S> g = Image<S>::Zero(s.rows(), s.cols());
  if (s.cols() > 1) {
    const Image<S> e = s.rightCols(s.cols() - 1) - s.leftCols(s.cols() - 1);
    g.rightCols(s.cols() - 1) += S(2) * e;
    g.leftCols(s.cols() - 1) -= S(2) * e;
  }
  if (s.rows() > 1) {
    const Image<S> e = s.bottomRows(s.rows() - 1) - s.topRows(s.rows() - 1);
    g.bottomRows(s.rows() - 1) += S(2) * e;
    g.topRows(s.rows() - 1) -= S(2) * e;
  }
  return g;
}

/// Sum over (b, a) of the unsquared forward-difference gradient norm.
template <typename Derived>
double gradient_norm_sum(const Eigen::MatrixBase<Derived>& s) {
  double total = 0.0;
  for (Index b = 0; b < s.rows(); ++b)
    for (Index a = 0; a < s.cols(); ++a) {
      double sq = 0.0;
      if (a + 1 < s.cols()) sq += std::pow(static_cast<double>(s(b, a + 1) - s(b, a)), 2);
      if (b + 1 < s.rows()) sq += std::pow(static_cast<double>(s(b + 1, a) - s(b, a)), 2);
      total += std::sqrt(sq);
    }
  return total;
}

// ---------------------------------------------------------------------------
// Per-surface smoothness weights.

struct LossWeights {
  double lambda_base = 0.1;
  std::vector<double> lambda_l;

  void validate() const {
    if (!std::isfinite(lambda_base) || lambda_base < 0.0)
      throw ConfigError("loss weights: lambda_base must be finite and nonnegative");
    for (double w : lambda_l)
      if (!std::isfinite(w) || w < 0.0)
        throw ConfigError("loss weights: lambda_l must be finite and nonnegative");
  }
};

/// lambda_l = lambda_base / sum_{b,a} |grad S_l|, averaged over volumes.
template <typename Scalar>
LossWeights lambda_weights(const std::vector<SurfaceSet<Scalar>>& gt_volumes, double lambda_base) {
  if (gt_volumes.empty()) throw DimensionError("lambda_weights: need at least one volume");
  const Index n_surfaces = gt_volumes.front().n_surfaces();
  LossWeights w{lambda_base, std::vector<double>(static_cast<std::size_t>(n_surfaces), 0.0)};
  for (std::size_t v = 0; v < gt_volumes.size(); ++v) {
    const auto& s = gt_volumes[v];
    if (s.n_surfaces() != n_surfaces)
      throw DimensionError("lambda_weights: volumes disagree on surface count");
    for (Index l = 0; l < n_surfaces; ++l) {
      const double denom = gradient_norm_sum(s.surface(l));
      if (!(denom > 0.0))
        throw DegenerateError("lambda_weights: surface " + s.names()[static_cast<std::size_t>(l)] +
                              " of volume " + std::to_string(v) + " is perfectly flat");
      w.lambda_l[static_cast<std::size_t>(l)] += lambda_base / denom;
    }
  }
  for (double& x : w.lambda_l) x /= static_cast<double>(gt_volumes.size());
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Secondary head: pixel-wise class probabilities scored with Dice + CE.

/// probs[b][c] is the R x N_A probability image of class c in B-scan b.
template <typename Scalar>
struct ClassProbabilities {
  std::vector<std::vector<Image<Scalar>>> probs;

  Index n_b() const { return static_cast<Index>(probs.size()); }
  Index n_classes() const { return probs.empty() ? 0 : static_cast<Index>(probs.front().size()); }
  const Image<Scalar>& at(Index b, Index c) const {
    return probs[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)];
  }
};

/// One-hot class probabilities from a label map.
template <typename Scalar = double>
ClassProbabilities<Scalar> one_hot(const LabelMap& m) {
  ClassProbabilities<Scalar> p;
  for (const auto& img : m.labels) {
    std::vector<Image<Scalar>> per_class;
    for (Index c = 0; c <= m.n_surfaces; ++c)
      per_class.push_back((img.array() == static_cast<int>(c)).template cast<Scalar>().matrix());
    p.probs.push_back(std::move(per_class));
  }
  return p;
}

struct DiceCe {
  double ce = 0.0;
  double dice = 0.0;  // mean soft Dice over classes
  double total = 0.0;
};

template <typename Scalar>
DiceCe loss_dice_ce(const ClassProbabilities<Scalar>& p, const LabelMap& gt) {
  const Index n_classes = gt.n_surfaces + 1;
  if (p.n_classes() != n_classes)
    throw DimensionError("loss_dice_ce: " + std::to_string(p.n_classes()) +
                         " probability classes for " + std::to_string(n_classes) + " labels");
  if (p.n_b() != gt.n_b()) throw DimensionError("loss_dice_ce: B-scan count mismatch");
  std::vector<double> inter(static_cast<std::size_t>(n_classes), 0.0);
  std::vector<double> p_mass(static_cast<std::size_t>(n_classes), 0.0);
  std::vector<double> g_mass(static_cast<std::size_t>(n_classes), 0.0);
  double ce = 0.0;
  double voxels = 0.0;
  for (Index b = 0; b < gt.n_b(); ++b) {
    const auto& lab = gt.labels[static_cast<std::size_t>(b)];
    for (Index c = 0; c < n_classes; ++c)
      if (p.at(b, c).rows() != lab.rows() || p.at(b, c).cols() != lab.cols())
        throw DimensionError("loss_dice_ce: probability image shape mismatch");
    for (Index a = 0; a < lab.cols(); ++a)
      for (Index r = 0; r < lab.rows(); ++r) {
        const int k = lab(r, a);
        if (k < 0 || k >= n_classes) throw RangeError("loss_dice_ce: label out of range");
        ce -= std::log(std::max(static_cast<double>(p.at(b, k)(r, a)), kProbabilityFloor));
        voxels += 1.0;
        for (Index c = 0; c < n_classes; ++c) {
          const double pc = static_cast<double>(p.at(b, c)(r, a));
          p_mass[static_cast<std::size_t>(c)] += pc;
          if (c == k) {
            inter[static_cast<std::size_t>(c)] += pc;
            g_mass[static_cast<std::size_t>(c)] += 1.0;
          }
        }
      }
  }
  DiceCe out;
  out.ce = voxels > 0.0 ? ce / voxels : 0.0;
  double dice = 0.0;
  for (Index c = 0; c < n_classes; ++c) {
    const auto i = static_cast<std::size_t>(c);
    dice += (2.0 * inter[i] + kDiceSmoothing) / (p_mass[i] + g_mass[i] + kDiceSmoothing);
  }
  out.dice = dice / static_cast<double>(n_classes);
  out.total = out.ce + (1.0 - out.dice);
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation objective.

struct SegLoss {
  double dice_ce = 0.0;
  double ce = 0.0;
  double l1 = 0.0;
  double smooth_s = 0.0;  // already weighted by lambda_l
  double total = 0.0;
};

/// `q` holds one distribution per surface; `gt` integer rows.
template <typename Scalar>
SegLoss loss_seg_total(const std::vector<SurfaceDistribution<Scalar>>& q,
                       const ClassProbabilities<Scalar>& p, const SurfaceSet<Scalar>& gt,
                       const LabelMap& gt_labels, const LossWeights& weights) {
  weights.validate();
  const auto n = static_cast<std::size_t>(gt.n_surfaces());
  if (q.size() != n) throw DimensionError("loss_seg_total: one distribution per surface required");
  if (weights.lambda_l.size() != n)
    throw DimensionError("loss_seg_total: one lambda per surface required");
  SegLoss out;
  out.dice_ce = loss_dice_ce(p, gt_labels).total;
  for (std::size_t l = 0; l < n; ++l) {
    const auto& gl = gt.surface(static_cast<Index>(l));
    out.ce += static_cast<double>(loss_ce(q[l], gl));
    const Image<Scalar> pred = soft_argmax(q[l]);
    out.l1 += static_cast<double>(loss_smooth_l1(pred, gl));
    out.smooth_s += weights.lambda_l[l] * static_cast<double>(loss_smooth_s(pred));
  }
  out.total = out.dice_ce + out.ce + out.l1 + out.smooth_s;
  return out;
}

// ---------------------------------------------------------------------------
// Semi-supervised alignment smoothness.

/// Ground-truth rows on annotated B-scans, predicted rows elsewhere.
template <typename Scalar>
SurfaceSet<Scalar> assemble_semi_surfaces(const SurfaceSet<Scalar>& gt,
                                          const SurfaceSet<Scalar>& pred,
                                          const BScanMask& annotated) {
  if (!gt.same_shape(pred)) throw DimensionError("semi surfaces: gt/pred shape mismatch");
  if (annotated.size() != gt.n_b()) throw DimensionError("semi surfaces: mask length mismatch");
  SurfaceSet<Scalar> out = gt;
  for (Index l = 0; l < gt.n_surfaces(); ++l)
    for (Index b = 0; b < gt.n_b(); ++b)
      if (!annotated(b)) out.surface(l).row(b) = pred.surface(l).row(b);
  return out;
}

template <typename Scalar, typename Derived>
Scalar loss_smooth_a_semi(const SurfaceSet<Scalar>& gt, const SurfaceSet<Scalar>& pred,
                          const Eigen::MatrixBase<Derived>& d, const BScanMask& annotated) {
  return loss_smooth_a(assemble_semi_surfaces(gt, pred, annotated), d);
}

template <typename Scalar>
struct SemiGradient {
  Vector<Scalar> wrt_d;
  /// Non-zero only on unannotated B-scans.
  SurfaceSet<Scalar> wrt_pred;
};

template <typename Scalar, typename Derived>
SemiGradient<Scalar> grad_smooth_a_semi(const SurfaceSet<Scalar>& gt,
                                        const SurfaceSet<Scalar>& pred,
                                        const Eigen::MatrixBase<Derived>& d,
                                        const BScanMask& annotated) {
  const SurfaceSet<Scalar> mixed = assemble_semi_surfaces(gt, pred, annotated);
  SemiGradient<Scalar> g{grad_smooth_a(mixed, d),
                         SurfaceSet<Scalar>(mixed.n_surfaces(), mixed.n_b(), mixed.n_a())};
  for (Index l = 0; l < mixed.n_surfaces(); ++l) {
    const auto& r = mixed.surface(l);
    auto& gr = g.wrt_pred.surface(l);
    for (Index b = 0; b + 1 < mixed.n_b(); ++b) {
      const Scalar shift = Scalar(d(b)) - Scalar(d(b + 1));
      const auto e = ((r.row(b) - r.row(b + 1)).array() - shift).eval();
      gr.row(b).array() += Scalar(2) * e;
      gr.row(b + 1).array() -= Scalar(2) * e;
    }
    for (Index b = 0; b < mixed.n_b(); ++b)
      if (annotated(b)) gr.row(b).setZero();
  }
  return g;
}

// ---------------------------------------------------------------------------
// Gradient lookup by name.

enum class LossName { ce, smooth_l1, smooth_s, smooth_a, smooth_a_semi };

inline LossName parse_loss_name(std::string_view name) {
  if (name == "ce") return LossName::ce;
  if (name == "smooth_l1") return LossName::smooth_l1;
  if (name == "smooth_s") return LossName::smooth_s;
  if (name == "smooth_a") return LossName::smooth_a;
  if (name == "smooth_a_semi") return LossName::smooth_a_semi;
  throw ConfigError("unknown loss name '" + std::string(name) + "'");
}

template <typename Scalar>
struct LossInputs {
  std::optional<SurfaceDistribution<Scalar>> q;  // ce
  std::optional<Image<Scalar>> pred;             // smooth_l1, smooth_s
  std::optional<Image<Scalar>> gt;               // ce, smooth_l1
  std::optional<SurfaceSet<Scalar>> surfaces;    // smooth_a; gt for smooth_a_semi
  std::optional<SurfaceSet<Scalar>> predicted;   // smooth_a_semi
  std::optional<Vector<Scalar>> d;               // smooth_a, smooth_a_semi
  std::optional<BScanMask> annotated;            // smooth_a_semi
};

template <typename Scalar>
struct LossGradient {
  std::vector<Image<Scalar>> wrt_q;
  std::optional<Image<Scalar>> wrt_surface;
  std::optional<Vector<Scalar>> wrt_d;
  std::optional<SurfaceSet<Scalar>> wrt_pred;
};

template <typename Scalar>
LossGradient<Scalar> gradient(LossName name, const LossInputs<Scalar>& in) {
  const auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("gradient: missing input '") + what + "'");
  };
  LossGradient<Scalar> g;
  switch (name) {
    case LossName::ce:
      need(in.q && in.gt, "q/gt");
      g.wrt_q = grad_ce(*in.q, *in.gt);
      break;
    case LossName::smooth_l1:
      need(in.pred && in.gt, "pred/gt");
      g.wrt_surface = grad_smooth_l1(*in.pred, *in.gt);
      break;
    case LossName::smooth_s:
      need(in.pred.has_value(), "pred");
      g.wrt_surface = grad_smooth_s(*in.pred);
      break;
    case LossName::smooth_a:
      need(in.surfaces && in.d, "surfaces/d");
      g.wrt_d = grad_smooth_a(*in.surfaces, *in.d);
      break;
    case LossName::smooth_a_semi: {
      need(in.surfaces && in.predicted && in.d && in.annotated, "surfaces/predicted/d/annotated");
      auto semi = grad_smooth_a_semi(*in.surfaces, *in.predicted, *in.d, *in.annotated);
      g.wrt_d = std::move(semi.wrt_d);
      g.wrt_pred = std::move(semi.wrt_pred);
      break;
    }
  }
  return g;
}

template <typename Scalar>
LossGradient<Scalar> gradient(std::string_view name, const LossInputs<Scalar>& in) {
  return gradient(parse_loss_name(name), in);
}

}  // namespace octalign
