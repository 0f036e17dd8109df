#pragma once

#include <cstdint>
#include <vector>

#include "octalign/types.hpp"

namespace octalign {

/// Parameters of a layered retinal phantom. Surfaces are a shared low-
/// frequency cosine undulation plus a Gaussian foveal dip, stacked with
/// per-layer thicknesses that thin toward the fovea.
struct PhantomSpec {
  Index n_b = 20;
  Index n_a = 64;
  Index n_r = 96;
  Spacing spacing{3.24, 6.7, 67.0};

  Index layer_count = 3;  // number of surfaces
  double top_row = 30.0;  // mean 1-based row of the first surface
  /// Gap between surface l and l+1 (layer_count - 1 entries; empty = 12 rows each).
  std::vector<double> thickness;
  /// Intensity of each of the layer_count + 1 bands, top to bottom (empty = defaults).
  std::vector<double> intensity;

  int bump_count = 3;            // cosine terms in the shared undulation
  double bump_amplitude = 3.0;   // max amplitude per term, rows
  double thickness_ripple = 1.0; // per-surface cosine modulation of thickness, rows

  /// When false every B-scan gets the same surface geometry.
  bool vary_across_bscans = true;

  double fovea_depth = 6.0;     // dip of the first surface at the fovea, rows
  double fovea_width = 0.12;    // Gaussian sigma as a fraction of the A/B extent
  double fovea_thinning = 0.5;  // fraction of inner-layer thickness lost at the fovea

  int vessel_count = 6;
  double vessel_width = 1.5;       // Gaussian sigma of a shadow, A-scans
  double vessel_attenuation = 0.6; // fractional intensity loss at a shadow centre

  double speckle_variance = 0.04;  // variance of the unit-mean gamma multiplier
  double noise_sigma = 0.03;       // additive Gaussian noise
  double background_noise_sigma = 0.2;  // extra noise above the first / below the last surface

  std::uint64_t seed = 1;

  /// Throws ConfigError on inconsistent parameters.
  void validate() const;
  std::vector<double> resolved_thickness() const;
  std::vector<double> resolved_intensity() const;
};

/// Axial and transverse motion drawn per the corruption protocol.
struct MotionConfig {
  double max_axial = 15.0;
  int max_transverse = 15;
  int min_groups = 3;
  int max_groups = 5;

  void validate(Index n_b) const;
};

struct Phantom {
  Volume<double> volume;
  SurfaceSet<double> surfaces;
};

struct CorruptedPhantom {
  Volume<double> volume;
  SurfaceSet<double> surfaces;
  MotionSpec motion;
};

/// Motion-free phantom volume and its exact surfaces. Bands use the label
/// convention of surfaces_to_labels: pixel row r lies below surface l iff
/// S_l <= r.
Phantom generate_phantom(const PhantomSpec& spec);

/// Draw a MotionSpec for `n_b` B-scans.
MotionSpec draw_motion(Index n_b, std::uint64_t seed, const MotionConfig& cfg = {});

/// Apply known motion: each B-scan is moved by the inverse of its
/// displacement, so resample_axial / apply_transverse with the truth undo it.
/// Surfaces follow exactly: r_corrupt = r + axial (then the column shift).
CorruptedPhantom apply_motion(const Volume<double>& v, const SurfaceSet<double>& s,
                              const MotionSpec& motion);

CorruptedPhantom simulate_motion(const Volume<double>& v, const SurfaceSet<double>& s,
                                 std::uint64_t seed, const MotionConfig& cfg = {});

/// Per-surface row distributions: a normalized Gaussian of width `sigma`
/// rows around each surface position.
std::vector<SurfaceDistribution<double>> surface_distributions(const SurfaceSet<double>& s, Index n_r,
                                                               double sigma = 1.0);

}  // namespace octalign
