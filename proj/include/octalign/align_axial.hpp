#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "octalign/ncc.hpp"
#include "octalign/stm.hpp"
#include "octalign/types.hpp"

namespace octalign {

struct AlignConfig {
  int ncc_window = 9;
  /// Bound on the absolute motion of any B-scan, in rows. Pairwise searches
  /// between neighbours span twice this.
  int search_radius = 15;
  /// Candidate window around the current value after the first sweep.
  int refine_radius = 2;
  bool subpixel_refine = true;
  int max_iters = 20;
  /// Relative decrease of the objective below which sweeps stop.
  double tolerance = 1e-6;
  double w_ncc = 1.0;
  double w_smooth = 1.0;
  double variance_eps = kVarianceEps;

  void validate() const {
    if (ncc_window < 3 || ncc_window % 2 == 0)
      throw ConfigError("align: ncc window must be odd and >= 3");
    if (search_radius < 1) throw ConfigError("align: search radius must be >= 1");
    if (refine_radius < 1) throw ConfigError("align: refine radius must be >= 1");
    if (max_iters < 1) throw ConfigError("align: max_iters must be >= 1");
    if (!(tolerance >= 0.0)) throw ConfigError("align: tolerance must be >= 0");
    if (!(w_ncc >= 0.0) || !(w_smooth >= 0.0))
      throw ConfigError("align: loss weights must be nonnegative");
  }
};

enum class AlignMode { supervised, unsupervised, template_match };

// ---------------------------------------------------------------------------
// Surface smoothness across B-scans, summed over all surfaces.

template <typename Scalar, typename Derived>
Scalar loss_smooth_a(const SurfaceSet<Scalar>& s, const Eigen::MatrixBase<Derived>& d) {
  if (d.size() != s.n_b()) throw DimensionError("loss_smooth_a: displacement length mismatch");
  Scalar total(0);
  for (Index l = 0; l < s.n_surfaces(); ++l) {
    const auto& g = s.surface(l);
    for (Index b = 0; b + 1 < s.n_b(); ++b) {
      const Scalar shift = Scalar(d(b)) - Scalar(d(b + 1));
      total += ((g.row(b) - g.row(b + 1)).array() - shift).square().sum();
    }
  }
  return total;
}

/// d loss_smooth_a / d d_b.
template <typename Scalar, typename Derived>
Vector<Scalar> grad_smooth_a(const SurfaceSet<Scalar>& s, const Eigen::MatrixBase<Derived>& d) {
  if (d.size() != s.n_b()) throw DimensionError("grad_smooth_a: displacement length mismatch");
  Vector<Scalar> g = Vector<Scalar>::Zero(s.n_b());
  for (Index l = 0; l < s.n_surfaces(); ++l) {
    const auto& r = s.surface(l);
    for (Index b = 0; b + 1 < s.n_b(); ++b) {
      const Scalar shift = Scalar(d(b)) - Scalar(d(b + 1));
      const Scalar e = ((r.row(b) - r.row(b + 1)).array() - shift).sum();
      g(b) -= Scalar(2) * e;
      g(b + 1) += Scalar(2) * e;
    }
  }
  return g;
}

/// Sum over adjacent B-scan pairs of the local squared NCC after resampling
/// every B-scan by its displacement. Larger is better.
template <typename Scalar, typename Derived>
double loss_ncc(const Volume<Scalar>& v, const Eigen::MatrixBase<Derived>& d,
                const AlignConfig& cfg = {}) {
  const Volume<Scalar> moved = resample_axial(v, d);
  double total = 0.0;
  for (Index b = 0; b + 1 < v.n_b(); ++b)
    total += local_ncc_sum(moved.bscan(b), moved.bscan(b + 1), cfg.ncc_window, cfg.variance_eps);
  return total;
}

/// Exact minimiser of loss_smooth_a: consecutive differences are the mean
/// surface offsets between neighbouring B-scans; mean-zero gauge.
template <typename Scalar>
DisplacementField<Scalar> solve_supervised(const SurfaceSet<Scalar>& s) {
  if (s.n_b() < 2) throw DimensionError("solve_supervised: need at least two B-scans");
  if (s.n_surfaces() < 1 || s.n_a() < 1)
    throw DimensionError("solve_supervised: need at least one surface and one A-scan");
  const Index n_b = s.n_b();
  const Scalar count = Scalar(s.n_surfaces() * s.n_a());
  Vector<Scalar> d = Vector<Scalar>::Zero(n_b);
  for (Index b = 0; b + 1 < n_b; ++b) {
    Scalar step(0);
    for (Index l = 0; l < s.n_surfaces(); ++l)
      step += (s.surface(l).row(b + 1) - s.surface(l).row(b)).sum();
    d(b + 1) = d(b) + step / count;
  }
  DisplacementField<Scalar> out = DisplacementField<Scalar>::zeros(n_b);
  out.axial = mean_zero(d);
  return out;
}

// ---------------------------------------------------------------------------
// Baseline: each B-scan is matched rigidly against its predecessor.

namespace detail {

/// Global NCC between `fixed` and `moving` sampled at rows + shift, restricted
/// to rows where the shifted sample stays inside the image.
template <typename Scalar>
double overlap_ncc(const Image<Scalar>& fixed, const Image<Scalar>& moving, double shift,
                   double eps) {
  const Index n_r = fixed.rows();
  const Index margin = static_cast<Index>(std::ceil(std::abs(shift)));
  if (margin >= n_r) return -std::numeric_limits<double>::infinity();
  const Index lo = shift < 0 ? margin : 0;
  const Index len = n_r - margin;
  const Image<Scalar> shifted = resample_image_axial(moving, shift);
  return global_ncc(fixed.middleRows(lo, len), shifted.middleRows(lo, len), eps);
}

/// Vertex offset of the parabola through (-1, fm), (0, f0), (1, fp); nullopt
/// when the three points do not bracket a minimum.
inline std::optional<double> parabola_vertex(double fm, double f0, double fp) {
  const double curvature = fm - 2.0 * f0 + fp;
  if (!(curvature > 0.0)) return std::nullopt;
  const double off = 0.5 * (fm - fp) / curvature;
  if (!std::isfinite(off)) return std::nullopt;
  return std::clamp(off, -0.5, 0.5);
}

}  // namespace detail

template <typename Scalar>
DisplacementField<Scalar> template_match_align(const Volume<Scalar>& v,
                                               const AlignConfig& cfg = {}) {
  cfg.validate();
  if (v.n_b() < 2) throw DimensionError("template_match_align: need at least two B-scans");
  const int span = 2 * cfg.search_radius;
  Vector<Scalar> d = Vector<Scalar>::Zero(v.n_b());
  for (Index b = 0; b + 1 < v.n_b(); ++b) {
    const auto& fixed = v.bscan(b);
    const auto& moving = v.bscan(b + 1);
    std::vector<double> cost(static_cast<std::size_t>(2 * span + 1));
    int best = 0;
    for (int t = -span; t <= span; ++t) {
      const double c = -detail::overlap_ncc(fixed, moving, t, cfg.variance_eps);
      cost[static_cast<std::size_t>(t + span)] = c;
      const double cb = cost[static_cast<std::size_t>(best + span)];
      if (c < cb || (c == cb && std::abs(t) < std::abs(best))) best = t;
    }
    double step = best;
    if (cfg.subpixel_refine && best > -span && best < span) {
      const auto at = [&](int t) { return cost[static_cast<std::size_t>(t + span)]; };
      if (auto off = detail::parabola_vertex(at(best - 1), at(best), at(best + 1)); off && *off != 0.0) {
        const double c = -detail::overlap_ncc(fixed, moving, best + *off, cfg.variance_eps);
        if (c < at(best)) step = best + *off;
      }
    }
    d(b + 1) = d(b) + Scalar(step);
  }
  DisplacementField<Scalar> out = DisplacementField<Scalar>::zeros(v.n_b());
  out.axial = mean_zero(d);
  return out;
}

// ---------------------------------------------------------------------------
// Direct minimisation of  w_ncc * (-NCC) + w_smooth * smoothness  by
// coordinate descent over B-scans.

template <typename Scalar>
struct AlignResult {
  DisplacementField<Scalar> displacement;
  /// Objective after initialisation, then after every sweep.
  std::vector<double> objective;
  int sweeps = 0;
};

namespace detail {

/// Cross-B-scan surface term for one pair as a quadratic in the relative
/// shift delta = d_b - d_{b+1}: sum (D - delta)^2 with D = r_b - r_{b+1}.
struct PairQuadratic {
  double sum_sq = 0.0;
  double sum = 0.0;
  double count = 0.0;
  double operator()(double delta) const { return sum_sq - 2.0 * delta * sum + count * delta * delta; }
};

template <typename Scalar>
std::vector<PairQuadratic> pair_quadratics(const SurfaceSet<Scalar>& s) {
  std::vector<PairQuadratic> q(static_cast<std::size_t>(std::max<Index>(s.n_b() - 1, 0)));
  for (Index b = 0; b + 1 < s.n_b(); ++b) {
    auto& p = q[static_cast<std::size_t>(b)];
    for (Index l = 0; l < s.n_surfaces(); ++l) {
      const auto diff = (s.surface(l).row(b) - s.surface(l).row(b + 1)).template cast<double>();
      p.sum_sq += diff.squaredNorm();
      p.sum += diff.sum();
      p.count += static_cast<double>(diff.size());
    }
  }
  return q;
}

}  // namespace detail

template <typename Scalar>
AlignResult<Scalar> optimize_alignment(const Volume<Scalar>& v,
                                       const std::optional<SurfaceSet<Scalar>>& surfaces,
                                       const AlignConfig& cfg = {}) {
  cfg.validate();
  if (v.n_b() < 2) throw DimensionError("optimize_alignment: need at least two B-scans");
  const Index n_b = v.n_b();
  const bool supervised = surfaces.has_value();
  std::vector<detail::PairQuadratic> quad;
  if (supervised) {
    if (surfaces->n_b() != n_b || surfaces->n_a() != v.n_a())
      throw DimensionError("optimize_alignment: surfaces do not match the volume");
    quad = detail::pair_quadratics(*surfaces);
  }
  const double w_smooth = supervised ? cfg.w_smooth : 0.0;

  Vector<double> d = supervised ? solve_supervised(*surfaces).axial.template cast<double>().eval()
                                : template_match_align(v, cfg).axial.template cast<double>().eval();

  std::vector<Image<Scalar>> moved(static_cast<std::size_t>(n_b));
  for (Index b = 0; b < n_b; ++b) moved[static_cast<std::size_t>(b)] = resample_image_axial(v.bscan(b), d(b));
  std::vector<double> pair_ncc(static_cast<std::size_t>(n_b - 1));
  for (Index b = 0; b + 1 < n_b; ++b)
    pair_ncc[static_cast<std::size_t>(b)] =
        local_ncc_sum(moved[static_cast<std::size_t>(b)], moved[static_cast<std::size_t>(b + 1)],
                      cfg.ncc_window, cfg.variance_eps);

  const auto smooth_pair = [&](Index b, double db, double db1) {
    return supervised ? quad[static_cast<std::size_t>(b)](db - db1) : 0.0;
  };
  const auto total_objective = [&] {
    double ncc = 0.0, smooth = 0.0;
    for (Index b = 0; b + 1 < n_b; ++b) {
      ncc += pair_ncc[static_cast<std::size_t>(b)];
      smooth += smooth_pair(b, d(b), d(b + 1));
    }
    return -cfg.w_ncc * ncc + w_smooth * smooth;
  };

  struct Local {
    double value;
    double ncc_prev;
    double ncc_next;
    Image<Scalar> img;
  };
  // Objective terms that depend on d_b, evaluated at candidate x.
  const auto local_terms = [&](Index b, double x) {
    Local out{0.0, 0.0, 0.0, resample_image_axial(v.bscan(b), x)};
    double smooth = 0.0;
    if (b > 0) {
      out.ncc_prev = local_ncc_sum(moved[static_cast<std::size_t>(b - 1)], out.img,
                                   cfg.ncc_window, cfg.variance_eps);
      smooth += smooth_pair(b - 1, d(b - 1), x);
    }
    if (b + 1 < n_b) {
      out.ncc_next = local_ncc_sum(out.img, moved[static_cast<std::size_t>(b + 1)],
                                   cfg.ncc_window, cfg.variance_eps);
      smooth += smooth_pair(b, x, d(b + 1));
    }
    out.value = -cfg.w_ncc * (out.ncc_prev + out.ncc_next) + w_smooth * smooth;
    return out;
  };

  AlignResult<Scalar> result;
  double objective = total_objective();
  if (!std::isfinite(objective)) throw NumericalError("optimize_alignment: non-finite objective at sweep 0");
  result.objective.push_back(objective);

  for (int sweep = 1; sweep <= cfg.max_iters; ++sweep) {
    const int radius = sweep == 1 ? cfg.search_radius : std::min(cfg.refine_radius, cfg.search_radius);
    for (Index b = 0; b < n_b; ++b) {
      const double base = d(b);
      std::vector<Local> cand;
      cand.reserve(static_cast<std::size_t>(2 * radius + 1));
      int best = 0;
      for (int k = -radius; k <= radius; ++k) {
        cand.push_back(local_terms(b, base + k));
        const double c = cand.back().value;
        const double cb = cand[static_cast<std::size_t>(best + radius)].value;
        if (c < cb || (c == cb && std::abs(k) < std::abs(best))) best = k;
      }
      Local chosen = std::move(cand[static_cast<std::size_t>(best + radius)]);
      double x = base + best;
      if (cfg.subpixel_refine && best > -radius && best < radius) {
        const auto val = [&](int k) { return cand[static_cast<std::size_t>(k + radius)].value; };
        if (auto off = detail::parabola_vertex(val(best - 1), val(best), val(best + 1)); off && *off != 0.0) {
          Local refined = local_terms(b, base + best + *off);
          if (refined.value < chosen.value) {
            chosen = std::move(refined);
            x = base + best + *off;
          }
        }
      }
      d(b) = x;
      moved[static_cast<std::size_t>(b)] = std::move(chosen.img);
      if (b > 0) pair_ncc[static_cast<std::size_t>(b - 1)] = chosen.ncc_prev;
      if (b + 1 < n_b) pair_ncc[static_cast<std::size_t>(b)] = chosen.ncc_next;
    }
    const double next = total_objective();
    if (!std::isfinite(next))
      throw NumericalError("optimize_alignment: non-finite objective at sweep " + std::to_string(sweep));
    // Each coordinate step keeps the current value as a candidate, so the
    // total can only rise by rounding.
    if (next > objective + 1e-9 * std::max(1.0, std::abs(objective)))
      throw NumericalError("optimize_alignment: objective increased at sweep " + std::to_string(sweep));
    result.objective.push_back(next);
    result.sweeps = sweep;
    const bool converged = objective - next <= cfg.tolerance * std::max(1.0, std::abs(objective));
    objective = next;
    if (converged) break;
  }

  result.displacement = DisplacementField<Scalar>::zeros(n_b);
  result.displacement.axial = mean_zero(d).template cast<Scalar>();
  return result;
}

}  // namespace octalign
