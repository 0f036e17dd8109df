#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "octalign/align_axial.hpp"
#include "octalign/io.hpp"
#include "octalign/labels.hpp"
#include "octalign/losses.hpp"
#include "octalign/metrics.hpp"
#include "octalign/pipeline.hpp"
#include "octalign/stm.hpp"
#include "octalign/surfaces_post.hpp"
#include "octalign/synth.hpp"
#include "octalign/transverse.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace octalign;

namespace {

int exit_code(const std::string& kind) {
  static const std::pair<const char*, int> table[] = {
      {"dimension_error", 3}, {"ordering_error", 4}, {"normalization_error", 5},
      {"range_error", 6},     {"config_error", 7},   {"numerical_error", 8},
      {"degenerate_error", 9}, {"format_error", 10}, {"io_error", 11}};
  for (const auto& [k, code] : table)
    if (kind == k) return code;
  return 1;
}

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
  return code;
}

int default_jobs() {
  const char* env = std::getenv("OCT_ALIGN_JOBS");
  if (!env || !*env) return 1;
  try {
    std::size_t used = 0;
    const int n = std::stoi(env, &used);
    if (used == std::string(env).size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string("OCT_ALIGN_JOBS must be a positive integer, got '") + env + "'");
}

std::pair<Index, Index> parse_crop(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("--crop expects first:last, got '" + text + "'");
  try {
    std::size_t u1 = 0, u2 = 0;
    const std::string a = text.substr(0, colon), b = text.substr(colon + 1);
    const long first = std::stol(a, &u1), last = std::stol(b, &u2);
    if (u1 != a.size() || u2 != b.size()) throw std::invalid_argument("trailing");
    return {first, last};
  } catch (const std::exception&) {
    throw ConfigError("--crop expects integer first:last, got '" + text + "'");
  }
}

json metric_json(const SurfaceMetric& m, const std::vector<std::string>& names) {
  json per = json::object();
  for (std::size_t l = 0; l < m.per_surface.size(); ++l) per[names[l]] = m.per_surface[l];
  return {{"per_surface", per}, {"overall", m.overall}};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"B-scan motion correction and retinal surface tools for OCT volumes", "oct-align"};
  app.require_subcommand(1);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom (optionally corrupted)");
  std::string ph_spec, ph_out;
  phantom->add_option("--spec", ph_spec, "phantom request JSON")->required();
  phantom->add_option("--out", ph_out, "output directory")->required();

  // apply
  auto* apply = app.add_subcommand("apply", "Resample a volume axially by a displacement CSV");
  std::string ap_vol, ap_disp, ap_out;
  apply->add_option("--vol", ap_vol)->required();
  apply->add_option("--disp", ap_disp)->required();
  apply->add_option("--out", ap_out)->required();

  // align
  auto* align = app.add_subcommand("align", "Estimate axial B-scan displacements");
  std::string al_vol, al_surf, al_mode = "supervised", al_out;
  AlignConfig al_cfg;
  align->add_option("--vol", al_vol)->required();
  align->add_option("--surfaces", al_surf, "surface CSV (required for supervised)");
  align->add_option("--mode", al_mode)->check(CLI::IsMember({"supervised", "unsupervised", "template"}));
  align->add_option("--out", al_out)->required();
  align->add_option("--window", al_cfg.ncc_window, "local NCC window, px");
  align->add_option("--radius", al_cfg.search_radius, "bound on |axial motion|, px");
  align->add_option("--max-iters", al_cfg.max_iters);

  // transverse
  auto* transverse = app.add_subcommand("transverse", "Estimate transverse B-scan shifts");
  std::string tr_vol, tr_surf, tr_out;
  bool tr_no_mask = false;
  int tr_radius = 15;
  transverse->add_option("--vol", tr_vol)->required();
  transverse->add_option("--surfaces", tr_surf, "surface CSV (required unless --no-layer-mask)");
  transverse->add_option("--out", tr_out)->required();
  transverse->add_flag("--no-layer-mask", tr_no_mask, "project whole A-scans");
  transverse->add_option("--radius", tr_radius, "bound on |transverse motion|, px");

  // preprocess
  auto* preprocess = app.add_subcommand("preprocess", "Flatten to Bruch's membrane and/or crop rows");
  std::string pp_vol, pp_out, pp_crop, pp_surf, pp_surf_out;
  bool pp_flatten = false;
  FlattenConfig pp_cfg;
  double pp_target = 0.0;
  preprocess->add_option("--vol", pp_vol)->required();
  preprocess->add_option("--out", pp_out)->required();
  preprocess->add_flag("--flatten", pp_flatten);
  preprocess->add_option("--crop", pp_crop, "first:last, 1-based inclusive rows");
  preprocess->add_option("--surfaces", pp_surf, "surfaces to carry along");
  preprocess->add_option("--surfaces-out", pp_surf_out);
  auto* target_opt = preprocess->add_option("--target-row", pp_target, "BM row after flattening");
  preprocess->add_option("--sigma", pp_cfg.sigma);
  preprocess->add_option("--median", pp_cfg.median_size);

  // losses
  auto* losses = app.add_subcommand("losses", "Evaluate the loss terms as JSON");
  std::string lo_vol, lo_q, lo_surf, lo_labels, lo_weights, lo_disp;
  double lo_lambda = 0.1;
  losses->add_option("--vol", lo_vol)->required();
  losses->add_option("--q", lo_q, "surface distributions")->required();
  losses->add_option("--surfaces", lo_surf, "reference surfaces")->required();
  losses->add_option("--labels", lo_labels, "class probabilities or label map")->required();
  losses->add_option("--weights", lo_weights, "JSON {lambda_base, lambda_l}");
  losses->add_option("--lambda-base", lo_lambda, "used when --weights is absent");
  losses->add_option("--disp", lo_disp, "axial displacements for the alignment terms");

  // eval
  auto* eval = app.add_subcommand("eval", "Surface metrics against a reference");
  std::string ev_pred, ev_gt, ev_vol, ev_report, ev_hist;
  int ev_bins = 16;
  eval->add_option("--pred", ev_pred)->required();
  eval->add_option("--gt", ev_gt)->required();
  eval->add_option("--vol", ev_vol)->required();
  eval->add_option("--report", ev_report)->required();
  eval->add_option("--histogram", ev_hist, "histogram CSV (default: next to the report)");
  eval->add_option("--bins", ev_bins);

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Full synthetic motion-recovery experiment");
  PipelineConfig pl_cfg;
  std::string pl_out = "report.json", pl_volumes_dir;
  std::optional<int> pl_jobs;
  bool pl_no_unsup = false;
  pipeline->add_option("--seed", pl_cfg.seed);
  pipeline->add_option("--volumes", pl_cfg.volumes, "phantoms");
  pipeline->add_option("--repeats", pl_cfg.repeats, "corruptions per phantom");
  pipeline->add_option("--jobs", pl_jobs, "worker threads (default $OCT_ALIGN_JOBS or 1)");
  pipeline->add_option("--out", pl_out, "report JSON");
  pipeline->add_option("--volumes-dir", pl_volumes_dir, "per-volume displacement CSVs");
  pipeline->add_flag("--no-unsupervised", pl_no_unsup, "skip the unsupervised optimizer");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage_error", e.what(), 2);
  }

  try {
    if (*phantom) {
      const auto job = io::read_phantom_job(ph_spec);
      const Phantom clean = generate_phantom(job.spec);
      const fs::path dir = ph_out;
      ensure_dir(dir);
      if (job.corrupt) {
        const auto bad = simulate_motion(clean.volume, clean.surfaces, job.motion_seed, job.motion);
        io::write_volume(dir / "volume.vol", bad.volume);
        io::write_surfaces(dir / "surfaces.csv", bad.surfaces);
        io::write_motion(dir / "motion.csv", bad.motion);
        io::write_volume(dir / "clean_volume.vol", clean.volume);
        io::write_surfaces(dir / "clean_surfaces.csv", clean.surfaces);
      } else {
        io::write_volume(dir / "volume.vol", clean.volume);
        io::write_surfaces(dir / "surfaces.csv", clean.surfaces);
      }
      io::write_label_map(dir / "labels.bin", surfaces_to_labels(clean.surfaces, clean.volume.n_r()));
      io::write_distributions(dir / "q.bin", surface_distributions(clean.surfaces, clean.volume.n_r()));
    } else if (*apply) {
      const auto v = io::read_volume(ap_vol);
      const auto d = io::read_displacements(ap_disp);
      io::write_volume(ap_out, resample_axial(v, d.axial));
    } else if (*align) {
      const auto v = io::read_volume(al_vol);
      std::optional<SurfaceSet<double>> s;
      if (!al_surf.empty()) s = io::read_surfaces(al_surf);
      DisplacementField<double> d;
      if (al_mode == "template") {
        d = template_match_align(v, al_cfg);
      } else if (al_mode == "unsupervised") {
        d = optimize_alignment(v, std::optional<SurfaceSet<double>>(), al_cfg).displacement;
      } else {
        if (!s) throw ConfigError("align: --mode supervised needs --surfaces");
        d = optimize_alignment(v, s, al_cfg).displacement;
      }
      io::write_displacements(al_out, d);
    } else if (*transverse) {
      const auto v = io::read_volume(tr_vol);
      SurfaceSet<double> s(0, v.n_b(), v.n_a());
      if (!tr_surf.empty()) s = io::read_surfaces(tr_surf);
      else if (!tr_no_mask) throw ConfigError("transverse: the layer mask needs --surfaces");
      io::write_displacements(tr_out, align_transverse(v, s, tr_radius, !tr_no_mask));
    } else if (*preprocess) {
      if (!pp_flatten && pp_crop.empty()) throw ConfigError("preprocess: nothing to do (use --flatten and/or --crop)");
      if (!pp_surf_out.empty() && pp_surf.empty()) throw ConfigError("preprocess: --surfaces-out needs --surfaces");
      Volume<double> v = io::read_volume(pp_vol);
      SurfaceSet<double> s(0, v.n_b(), v.n_a());
      if (!pp_surf.empty()) s = io::read_surfaces(pp_surf);
      if (pp_flatten) {
        if (*target_opt) pp_cfg.target_row = pp_target;
        auto flat = flatten_to_bm(v, pp_cfg);
        v = std::move(flat.volume);
        // Content at row r moves to r - shift.
        for (Index l = 0; l < s.n_surfaces(); ++l) s.surface(l) -= flat.shifts;
      }
      if (!pp_crop.empty()) {
        const auto [first, last] = parse_crop(pp_crop);
        auto cropped = crop_rows(v, s, first, last);
        v = std::move(cropped.volume);
        s = std::move(cropped.surfaces);
      }
      io::write_volume(pp_out, v);
      if (!pp_surf_out.empty()) io::write_surfaces(pp_surf_out, s);
    } else if (*losses) {
      const auto v = io::read_volume(lo_vol);
      const auto q = io::read_distributions(lo_q);
      const auto gt = io::read_surfaces(lo_surf);
      const auto p = io::read_class_probabilities(lo_labels);
      const auto weights = lo_weights.empty() ? lambda_weights(std::vector{gt}, lo_lambda) : io::read_weights(lo_weights);
      // Reference rows rounded onto the pixel grid for CE and the label map.
      SurfaceSet<double> gt_rows = gt;
      for (Index l = 0; l < gt_rows.n_surfaces(); ++l)
        gt_rows.surface(l) = gt.surface(l).array().round().cwiseMax(1.0).cwiseMin(static_cast<double>(v.n_r())).matrix();
      const LabelMap gt_labels = surfaces_to_labels(gt_rows, v.n_r());
      const SegLoss seg = loss_seg_total(q, p, gt_rows, gt_labels, weights);
      Eigen::VectorXd d = Eigen::VectorXd::Zero(v.n_b());
      if (!lo_disp.empty()) d = io::read_displacements(lo_disp).axial;
      if (d.size() != v.n_b()) throw DimensionError("losses: displacement length does not match the volume");
      const auto pred = soft_argmax(q);
      const double ncc = loss_ncc(v, d, AlignConfig{}), smooth_gt = loss_smooth_a(gt, d);
      json out = {{"schema", 1},
                  {"segmentation",
                   {{"dice_ce", seg.dice_ce},
                    {"ce", seg.ce},
                    {"smooth_l1_px2", seg.l1},
                    {"smooth_s_weighted", seg.smooth_s},
                    {"total", seg.total}}},
                  {"lambda", {{"lambda_base", weights.lambda_base}, {"lambda_l", weights.lambda_l}}},
                  {"alignment",
                   {{"ncc_sum", ncc},
                    {"smooth_a_gt_px2", smooth_gt},
                    {"smooth_a_pred_px2", loss_smooth_a(pred, d)},
                    {"total", -ncc + smooth_gt}}}};
      std::cout << out.dump(2) << "\n";
    } else if (*eval) {
      const auto pred = io::read_surfaces(ev_pred);
      const auto gt = io::read_surfaces(ev_gt);
      const auto v = io::read_volume(ev_vol);
      if (gt.n_b() != v.n_b() || gt.n_a() != v.n_a())
        throw DimensionError("eval: surfaces do not match the volume");
      const auto sp = v.spacing();
      const auto hist = connectivity_histogram(pred, ev_bins);
      fs::path hist_path = ev_hist;
      if (hist_path.empty()) hist_path = fs::path(ev_report).replace_extension("").string() + "_histogram.csv";
      json out = {{"schema", 1},
                  {"spacing_um", {sp.dz, sp.dx, sp.dy}},
                  {"mad_um", metric_json(mad(pred, gt, sp.dz), gt.names())},
                  {"hd95_um", metric_json(hd95(pred, gt, sp.dz, sp.dx), gt.names())},
                  {"ncc_adjacent", v.n_b() > 1 ? json(ncc_adjacent(v)) : json(nullptr)},
                  {"connectivity_histogram",
                   {{"bin_width_px", hist.bin_width}, {"counts", hist.counts}, {"csv", hist_path.string()}}}};
      io::write_histogram(hist_path, hist);
      io::write_text_atomic(ev_report, out.dump(2) + "\n");
    } else if (*pipeline) {
      pl_cfg.jobs = pl_jobs ? *pl_jobs : default_jobs();
      pl_cfg.unsupervised = !pl_no_unsup;
      if (!pl_volumes_dir.empty()) {
        ensure_dir(pl_volumes_dir);
        pl_cfg.out_dir = fs::path(pl_volumes_dir);
      }
      const auto report = run_pipeline(pl_cfg);
      io::write_text_atomic(pl_out, report_json(report));
    }
  } catch (const Error& e) {
    return report_error(e.kind(), e.what(), exit_code(e.kind()));
  } catch (const std::exception& e) {
    return report_error("internal_error", e.what(), 1);
  }
  return 0;
}
