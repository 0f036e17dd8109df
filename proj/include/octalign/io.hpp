#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "octalign/losses.hpp"
#include "octalign/metrics.hpp"
#include "octalign/synth.hpp"
#include "octalign/types.hpp"

// File formats.
//
//  Volume (.vol): one line of JSON
//      {"n_b":..,"n_a":..,"n_r":..,"spacing_um":[dz,dx,dy],"dtype":"f32le"}
//  terminated by '\n', followed by n_b*n_a*n_r little-endian float32 values
//  in (b, a, r) row-major order (r fastest).
//
//  Surface distributions and class probabilities use the same container with
//  an extra "kind" and channel count ("n_surfaces" / "n_classes"); channels
//  are the outermost index. Label maps use dtype "i32le".
//
//  Surfaces: CSV "surface,b,a,r" with 1-based b, a and row position r.
//  Displacements: CSV "b,axial,transverse" with 1-based b.

namespace octalign::io {

void write_volume(const std::filesystem::path& path, const Volume<double>& v);
Volume<double> read_volume(const std::filesystem::path& path);

void write_distributions(const std::filesystem::path& path,
                         const std::vector<SurfaceDistribution<double>>& q);
std::vector<SurfaceDistribution<double>> read_distributions(const std::filesystem::path& path);

void write_class_probabilities(const std::filesystem::path& path,
                               const ClassProbabilities<double>& p);
void write_label_map(const std::filesystem::path& path, const LabelMap& m);

/// Reads either a class-probability file or a label map (one-hot encoded).
ClassProbabilities<double> read_class_probabilities(const std::filesystem::path& path);

void write_surfaces(const std::filesystem::path& path, const SurfaceSet<double>& s);
SurfaceSet<double> read_surfaces(const std::filesystem::path& path);

void write_displacements(const std::filesystem::path& path, const DisplacementField<double>& d);
DisplacementField<double> read_displacements(const std::filesystem::path& path);

void write_motion(const std::filesystem::path& path, const MotionSpec& m);

void write_histogram(const std::filesystem::path& path, const Histogram& h);

LossWeights read_weights(const std::filesystem::path& path);

/// Phantom request read from JSON. Top-level keys mirror PhantomSpec fields
/// (unspecified keys keep their defaults); an optional "motion" object with
/// "seed", "max_axial", "max_transverse", "min_groups", "max_groups" asks for
/// a corrupted copy as well.
struct PhantomJob {
  PhantomSpec spec;
  bool corrupt = false;
  std::uint64_t motion_seed = 1;
  MotionConfig motion;
};

PhantomJob read_phantom_job(const std::filesystem::path& path);

/// Write `content` to `path` through a temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

std::string format_double(double x);

}  // namespace octalign::io
