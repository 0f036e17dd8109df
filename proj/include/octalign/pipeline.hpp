#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "octalign/align_axial.hpp"
#include "octalign/metrics.hpp"
#include "octalign/synth.hpp"

namespace octalign {

/// The synthetic motion-recovery experiment: `volumes` phantoms, each
/// corrupted `repeats` times, recovered by every method.
struct PipelineConfig {
  int volumes = 20;
  int repeats = 5;
  std::uint64_t seed = 7;
  int jobs = 1;
  PhantomSpec phantom;
  MotionConfig motion;
  AlignConfig align;
  int transverse_radius = 15;
  bool unsupervised = true;
  /// When set, each volume's recovered displacements are written here.
  std::optional<std::filesystem::path> out_dir;
};

struct VolumeOutcome {
  int phantom = 0;
  int repeat = 0;
  std::uint64_t phantom_seed = 0;
  std::uint64_t motion_seed = 0;
  double axial_supervised_px = 0.0;
  double axial_unsupervised_px = 0.0;
  double axial_template_px = 0.0;
  double transverse_masked_px = 0.0;
  double transverse_unmasked_px = 0.0;
  double ncc_before = 0.0;
  double ncc_after = 0.0;
  int sweeps = 0;
};

struct PipelineReport {
  PipelineConfig config;
  std::vector<VolumeOutcome> volumes;
};

/// Deterministic seed for phantom `p` (repeat = -1) or corruption (p, repeat).
std::uint64_t derive_seed(std::uint64_t seed, int phantom, int repeat);

VolumeOutcome run_volume(const PipelineConfig& cfg, int phantom, int repeat);

PipelineReport run_pipeline(const PipelineConfig& cfg);

/// Versioned JSON report (schema 1) with a per-method summary table.
std::string report_json(const PipelineReport& report);

/// Phantoms on which the unmasked transverse error is >= the masked one,
/// comparing per-phantom means over repeats.
int phantoms_mask_not_worse(const PipelineReport& report);

}  // namespace octalign
