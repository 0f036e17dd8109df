#include "octalign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "octalign/stm.hpp"
#include "octalign/transverse.hpp"

namespace octalign {

void PhantomSpec::validate() const {
  if (n_b < 1 || n_a < 1 || n_r < 2) throw ConfigError("phantom: bad dimensions");
  if (!spacing.valid()) throw ConfigError("phantom: spacing must be positive");
  if (layer_count < 1) throw ConfigError("phantom: need at least one surface");
  if (!thickness.empty() && static_cast<Index>(thickness.size()) != layer_count - 1)
    throw ConfigError("phantom: thickness needs layer_count - 1 entries");
  for (double t : resolved_thickness())
    if (!(t > 0.0)) throw ConfigError("phantom: thicknesses must be positive");
  if (!intensity.empty() && static_cast<Index>(intensity.size()) != layer_count + 1)
    throw ConfigError("phantom: intensity needs layer_count + 1 entries");
  if (bump_count < 0 || bump_amplitude < 0.0 || thickness_ripple < 0.0 || fovea_depth < 0.0 ||
      !(fovea_width > 0.0) || fovea_thinning < 0.0 || fovea_thinning >= 1.0)
    throw ConfigError("phantom: shape parameters out of range");
  for (double t : resolved_thickness())
    if (thickness_ripple >= 0.5 * t * (1.0 - fovea_thinning))
      throw ConfigError("phantom: thickness ripple could reorder surfaces");
  if (vessel_count < 0 || !(vessel_width > 0.0) || vessel_attenuation < 0.0 ||
      vessel_attenuation > 1.0)
    throw ConfigError("phantom: vessel parameters out of range");
  if (speckle_variance < 0.0 || noise_sigma < 0.0 || background_noise_sigma < 0.0)
    throw ConfigError("phantom: noise parameters must be nonnegative");
}

std::vector<double> PhantomSpec::resolved_thickness() const {
  if (!thickness.empty()) return thickness;
  return std::vector<double>(static_cast<std::size_t>(std::max<Index>(layer_count - 1, 0)), 12.0);
}

std::vector<double> PhantomSpec::resolved_intensity() const {
  if (!intensity.empty()) return intensity;
  // Dark vitreous, alternating inner layers, bright outermost layer, dim choroid.
  if (layer_count == 1) return {0.05, 0.6};
  std::vector<double> out{0.05};
  for (Index l = 1; l + 1 < layer_count; ++l) out.push_back(l % 2 ? 0.55 : 0.3);
  out.push_back(0.9);
  out.push_back(0.15);
  return out;
}

namespace {

struct CosineTerm {
  double amplitude;
  double freq_a;  // cycles over the A extent
  double freq_b;  // cycles over the B extent
  double phase;
};

double eval_terms(const std::vector<CosineTerm>& terms, double a, double b, Index n_a, Index n_b) {
  double v = 0.0;
  for (const auto& t : terms)
    v += t.amplitude * std::cos(2.0 * std::numbers::pi *
                                    (t.freq_a * a / static_cast<double>(n_a) +
                                     t.freq_b * b / static_cast<double>(n_b)) +
                                t.phase);
  return v;
}

std::vector<CosineTerm> draw_terms(std::mt19937_64& rng, int count, double max_amplitude) {
  std::uniform_real_distribution<double> amp(0.0, max_amplitude);
  std::uniform_int_distribution<int> freq(0, 2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<CosineTerm> terms;
  for (int k = 0; k < count; ++k) {
    CosineTerm t{amp(rng), static_cast<double>(freq(rng)), static_cast<double>(freq(rng)), phase(rng)};
    if (t.freq_a == 0.0 && t.freq_b == 0.0) t.freq_a = 1.0;
    terms.push_back(t);
  }
  return terms;
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const Index n_b = spec.n_b, n_a = spec.n_a, n_r = spec.n_r, n_l = spec.layer_count;
  const auto thickness = spec.resolved_thickness();
  const auto intensity = spec.resolved_intensity();

  // Surfaces.
  const auto shape = draw_terms(rng, spec.bump_count, spec.bump_amplitude);
  std::vector<std::vector<CosineTerm>> ripple;
  for (Index l = 1; l < n_l; ++l) ripple.push_back(draw_terms(rng, 1, spec.thickness_ripple));
  std::uniform_real_distribution<double> centre(0.4, 0.6);
  const double ca = centre(rng) * static_cast<double>(n_a - 1);
  const double cb = centre(rng) * static_cast<double>(n_b - 1);
  const double wa = spec.fovea_width * static_cast<double>(n_a);
  const double wb = spec.fovea_width * static_cast<double>(std::max<Index>(n_b, 2));

  SurfaceSet<double> surfaces(n_l, n_b, n_a);
  for (Index b = 0; b < n_b; ++b)
    for (Index a = 0; a < n_a; ++a) {
      const double bb = spec.vary_across_bscans ? static_cast<double>(b) : cb;
      const double da = (static_cast<double>(a) - ca) / wa, db = (bb - cb) / wb;
      const double dip = std::exp(-0.5 * (da * da + db * db));
      double r = spec.top_row + eval_terms(shape, static_cast<double>(a), bb, n_a, n_b) +
                 spec.fovea_depth * dip;
      surfaces(0, b, a) = r;
      for (Index l = 1; l < n_l; ++l) {
        const auto li = static_cast<std::size_t>(l - 1);
        // Inner layers thin toward the fovea; the outermost layer keeps its width.
        const double thin = l + 1 < n_l ? spec.fovea_thinning * dip : 0.0;
        r += thickness[li] * (1.0 - thin) +
             eval_terms(ripple[li], static_cast<double>(a), bb, n_a, n_b);
        surfaces(l, b, a) = r;
      }
    }
  if (!surfaces.within_rows(n_r))
    throw ConfigError("phantom: layer stack does not fit in " + std::to_string(n_r) + " rows");

  // Bands.
  Volume<double> volume(n_b, n_a, n_r, spec.spacing);
  for (Index b = 0; b < n_b; ++b)
    for (Index a = 0; a < n_a; ++a)
      for (Index i = 0; i < n_r; ++i) {
        const double row = static_cast<double>(i + 1);
        std::size_t label = 0;
        for (Index l = 0; l < n_l; ++l)
          if (surfaces(l, b, a) <= row) ++label;
        volume(b, a, i) = intensity[label];
      }

  // Vessel shadows: columns below the first surface, drifting slowly from
  // one B-scan to the next.
  std::uniform_real_distribution<double> pos_a(0.0, static_cast<double>(n_a - 1));
  std::uniform_real_distribution<double> drift(-0.3, 0.3);
  for (int k = 0; k < spec.vessel_count; ++k) {
    const double a0 = pos_a(rng), slope = drift(rng);
    for (Index b = 0; b < n_b; ++b) {
      const double centre_a = a0 + slope * (static_cast<double>(b) - 0.5 * static_cast<double>(n_b - 1));
      for (Index a = 0; a < n_a; ++a) {
        const double z = (static_cast<double>(a) - centre_a) / spec.vessel_width;
        const double keep = 1.0 - spec.vessel_attenuation * std::exp(-0.5 * z * z);
        for (Index i = 0; i < n_r; ++i)
          if (static_cast<double>(i + 1) >= surfaces(0, b, a)) volume(b, a, i) *= keep;
      }
    }
  }

  // Speckle then additive noise.
  if (spec.speckle_variance > 0.0) {
    std::gamma_distribution<double> speckle(1.0 / spec.speckle_variance, spec.speckle_variance);
    for (Index b = 0; b < n_b; ++b)
      for (Index a = 0; a < n_a; ++a)
        for (Index i = 0; i < n_r; ++i) volume(b, a, i) *= speckle(rng);
  }
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Index b = 0; b < n_b; ++b)
      for (Index a = 0; a < n_a; ++a)
        for (Index i = 0; i < n_r; ++i) volume(b, a, i) += noise(rng);
  }
  if (spec.background_noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.background_noise_sigma);
    for (Index b = 0; b < n_b; ++b)
      for (Index a = 0; a < n_a; ++a)
        for (Index i = 0; i < n_r; ++i) {
          const double row = static_cast<double>(i + 1);
          if (row < surfaces(0, b, a) || row > surfaces(n_l - 1, b, a)) volume(b, a, i) += noise(rng);
        }
  }
  return {std::move(volume), std::move(surfaces)};
}

void MotionConfig::validate(Index n_b) const {
  if (max_axial < 0.0 || max_transverse < 0) throw ConfigError("motion: negative bound");
  if (min_groups < 1 || max_groups < min_groups)
    throw ConfigError("motion: bad group count range");
  if (n_b < min_groups)
    throw ConfigError("motion: " + std::to_string(n_b) + " B-scans cannot form " +
                      std::to_string(min_groups) + " groups");
}

MotionSpec draw_motion(Index n_b, std::uint64_t seed, const MotionConfig& cfg) {
  cfg.validate(n_b);
  std::mt19937_64 rng(seed);
  MotionSpec m;
  std::uniform_real_distribution<double> axial(-cfg.max_axial, cfg.max_axial);
  m.axial_truth.resize(n_b);
  for (Index b = 0; b < n_b; ++b) m.axial_truth(b) = axial(rng);

  const int max_groups = static_cast<int>(std::min<Index>(cfg.max_groups, n_b));
  std::uniform_int_distribution<int> groups(cfg.min_groups, max_groups);
  const int g = groups(rng);
  std::vector<Index> cuts;
  for (Index b = 1; b < n_b; ++b) cuts.push_back(b);
  std::shuffle(cuts.begin(), cuts.end(), rng);
  m.group_boundaries.assign(cuts.begin(), cuts.begin() + (g - 1));
  m.group_boundaries.push_back(0);
  std::sort(m.group_boundaries.begin(), m.group_boundaries.end());

  std::uniform_int_distribution<int> jump(-cfg.max_transverse, cfg.max_transverse);
  m.transverse_truth.resize(n_b);
  for (std::size_t k = 0; k < m.group_boundaries.size(); ++k) {
    const int t = jump(rng);
    const Index end = k + 1 < m.group_boundaries.size() ? m.group_boundaries[k + 1] : n_b;
    for (Index b = m.group_boundaries[k]; b < end; ++b) m.transverse_truth(b) = t;
  }
  return m;
}

CorruptedPhantom apply_motion(const Volume<double>& v, const SurfaceSet<double>& s,
                              const MotionSpec& motion) {
  if (motion.axial_truth.size() != v.n_b() || motion.transverse_truth.size() != v.n_b())
    throw DimensionError("apply_motion: motion length does not match the volume");
  if (s.n_b() != v.n_b() || s.n_a() != v.n_a())
    throw DimensionError("apply_motion: surfaces do not match the volume");
  const Eigen::VectorXd neg_axial = -motion.axial_truth;
  const Eigen::VectorXi neg_transverse = -motion.transverse_truth;

  Volume<double> moved = apply_transverse(resample_axial(v, neg_axial), neg_transverse);

  SurfaceSet<double> shifted = s;
  for (Index l = 0; l < s.n_surfaces(); ++l)
    shifted.surface(l).colwise() += motion.axial_truth;
  shifted = apply_transverse(shifted, neg_transverse);
  return {std::move(moved), std::move(shifted), motion};
}

CorruptedPhantom simulate_motion(const Volume<double>& v, const SurfaceSet<double>& s,
                                 std::uint64_t seed, const MotionConfig& cfg) {
  return apply_motion(v, s, draw_motion(v.n_b(), seed, cfg));
}

std::vector<SurfaceDistribution<double>> surface_distributions(const SurfaceSet<double>& s, Index n_r,
                                                               double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("surface distributions: sigma must be positive");
  if (n_r < 2) throw DimensionError("surface distributions: need at least two rows");
  const Eigen::ArrayXd rows = Eigen::ArrayXd::LinSpaced(n_r, 1.0, static_cast<double>(n_r));
  std::vector<SurfaceDistribution<double>> out;
  for (Index l = 0; l < s.n_surfaces(); ++l) {
    std::vector<Image<double>> bscans;
    for (Index b = 0; b < s.n_b(); ++b) {
      Image<double> q(n_r, s.n_a());
      for (Index a = 0; a < s.n_a(); ++a) {
        const Eigen::ArrayXd z = (rows - s(l, b, a)) / sigma;
        const Eigen::ArrayXd w = (-0.5 * z.square()).exp();
        q.col(a) = (w / w.sum()).matrix();
      }
      bscans.push_back(std::move(q));
    }
    out.emplace_back(std::move(bscans));
  }
  return out;
}

}  // namespace octalign
