#include "octalign/pipeline.hpp"

#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "octalign/io.hpp"
#include "octalign/stm.hpp"
#include "octalign/transverse.hpp"

namespace octalign {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

nlohmann::json summary(const std::vector<double>& values) {
  const auto s = aggregate(values);
  return {{"mean", s.mean}, {"std", s.std}, {"n", s.count}};
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, int phantom, int repeat) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(phantom + 1));
  return splitmix64(h ^ (static_cast<std::uint64_t>(repeat + 1) << 32));
}

VolumeOutcome run_volume(const PipelineConfig& cfg, int phantom, int repeat) {
  VolumeOutcome out;
  out.phantom = phantom;
  out.repeat = repeat;
  out.phantom_seed = derive_seed(cfg.seed, phantom, -1);
  out.motion_seed = derive_seed(cfg.seed, phantom, repeat);

  PhantomSpec spec = cfg.phantom;
  spec.seed = out.phantom_seed;
  const Phantom clean = generate_phantom(spec);
  const CorruptedPhantom bad = simulate_motion(clean.volume, clean.surfaces, out.motion_seed, cfg.motion);

  // Axial recovery by each method.
  const auto sup = optimize_alignment(bad.volume, std::optional(bad.surfaces), cfg.align);
  out.sweeps = sup.sweeps;
  const auto tmpl = template_match_align(bad.volume, cfg.align);
  DisplacementField<double> est = sup.displacement;
  out.axial_supervised_px = motion_error(est, bad.motion).axial;
  out.axial_template_px = motion_error(tmpl, bad.motion).axial;
  if (cfg.unsupervised) {
    const auto unsup = optimize_alignment(bad.volume, std::optional<SurfaceSet<double>>(), cfg.align);
    out.axial_unsupervised_px = motion_error(unsup.displacement, bad.motion).axial;
  }

  // Transverse recovery after axial correction; the layer mask comes from
  // the axially corrected surfaces.
  const Volume<double> axial_fixed = resample_axial(bad.volume, est.axial);
  SurfaceSet<double> surf_fixed = bad.surfaces;
  for (Index l = 0; l < surf_fixed.n_surfaces(); ++l) surf_fixed.surface(l).colwise() -= est.axial;
  const auto masked = align_transverse(axial_fixed, surf_fixed, cfg.transverse_radius, true);
  const auto unmasked = align_transverse(axial_fixed, surf_fixed, cfg.transverse_radius, false);
  est.transverse = masked.transverse;
  out.transverse_masked_px = motion_error(est, bad.motion).transverse;
  out.transverse_unmasked_px = motion_error(unmasked, bad.motion).transverse;

  out.ncc_before = ncc_adjacent(bad.volume);
  out.ncc_after = ncc_adjacent(axial_fixed);

  if (cfg.out_dir) {
    const auto stem = "vol_" + std::to_string(phantom) + "_" + std::to_string(repeat);
    io::write_displacements(*cfg.out_dir / (stem + "_estimate.csv"), est);
    io::write_motion(*cfg.out_dir / (stem + "_truth.csv"), bad.motion);
  }
  return out;
}

PipelineReport run_pipeline(const PipelineConfig& cfg) {
  if (cfg.volumes < 1 || cfg.repeats < 1) throw ConfigError("pipeline: volumes and repeats must be >= 1");
  if (cfg.jobs < 1) throw ConfigError("pipeline: jobs must be >= 1");
  cfg.align.validate();
  PipelineReport report{cfg, std::vector<VolumeOutcome>(static_cast<std::size_t>(cfg.volumes * cfg.repeats))};

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const int total = cfg.volumes * cfg.repeats;
  const auto worker = [&] {
    for (int i = next++; i < total; i = next++) {
      try {
        report.volumes[static_cast<std::size_t>(i)] = run_volume(cfg, i / cfg.repeats, i % cfg.repeats);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = total;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int j = 1; j < std::min(cfg.jobs, total); ++j) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
  return report;
}

int phantoms_mask_not_worse(const PipelineReport& report) {
  std::map<int, std::pair<double, double>> per_phantom;
  for (const auto& v : report.volumes) {
    auto& acc = per_phantom[v.phantom];
    acc.first += v.transverse_masked_px;
    acc.second += v.transverse_unmasked_px;
  }
  int count = 0;
  for (const auto& [_, acc] : per_phantom)
    if (acc.second >= acc.first) ++count;
  return count;
}

std::string report_json(const PipelineReport& report) {
  using nlohmann::json;
  const auto& cfg = report.config;
  std::vector<double> sup, unsup, tmpl, masked, unmasked, before, after;
  json rows = json::array();
  for (const auto& v : report.volumes) {
    sup.push_back(v.axial_supervised_px);
    unsup.push_back(v.axial_unsupervised_px);
    tmpl.push_back(v.axial_template_px);
    masked.push_back(v.transverse_masked_px);
    unmasked.push_back(v.transverse_unmasked_px);
    before.push_back(v.ncc_before);
    after.push_back(v.ncc_after);
    rows.push_back({{"phantom", v.phantom},
                    {"repeat", v.repeat},
                    {"phantom_seed", v.phantom_seed},
                    {"motion_seed", v.motion_seed},
                    {"axial_supervised_px", v.axial_supervised_px},
                    {"axial_unsupervised_px", v.axial_unsupervised_px},
                    {"axial_template_px", v.axial_template_px},
                    {"transverse_retina_mask_px", v.transverse_masked_px},
                    {"transverse_no_layer_mask_px", v.transverse_unmasked_px},
                    {"ncc_adjacent_before", v.ncc_before},
                    {"ncc_adjacent_after", v.ncc_after},
                    {"sweeps", v.sweeps}});
  }
  json axial = {{"supervised", summary(sup)}, {"template", summary(tmpl)}};
  if (cfg.unsupervised) axial["unsupervised"] = summary(unsup);
  json j = {
      {"schema", 1},
      {"config",
       {{"volumes", cfg.volumes},
        {"repeats", cfg.repeats},
        {"seed", cfg.seed},
        {"dims", {cfg.phantom.n_b, cfg.phantom.n_a, cfg.phantom.n_r}},
        {"layer_count", cfg.phantom.layer_count},
        {"max_axial_px", cfg.motion.max_axial},
        {"max_transverse_px", cfg.motion.max_transverse},
        {"groups", {cfg.motion.min_groups, cfg.motion.max_groups}},
        {"ncc_window_px", cfg.align.ncc_window},
        {"search_radius_px", cfg.align.search_radius},
        {"transverse_radius_px", cfg.transverse_radius}}},
      {"table",
       {{"axial_error_px", axial},
        {"transverse_error_px", {{"retina_mask", summary(masked)}, {"no_layer_mask", summary(unmasked)}}}}},
      {"ncc_adjacent", {{"before", summary(before)}, {"after_supervised", summary(after)}}},
      {"phantoms_no_layer_mask_not_better", phantoms_mask_not_worse(report)},
      {"volumes", rows}};
  return j.dump(2) + "\n";
}

}  // namespace octalign
