#include "octalign/io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace octalign::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "binary volume I/O assumes a little-endian host");

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

json read_header(std::istream& in, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path.string() + "': missing header line");
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': malformed header: " + e.what());
  }
}

template <typename T>
T header_field(const json& h, const char* key, const fs::path& path) {
  if (!h.contains(key)) throw FormatError("'" + path.string() + "': header lacks '" + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError("'" + path.string() + "': header field '" + key + "' has the wrong type");
  }
}

void expect_dtype(const json& h, const char* dtype, const fs::path& path) {
  const auto got = header_field<std::string>(h, "dtype", path);
  if (got != dtype)
    throw FormatError("'" + path.string() + "': dtype '" + got + "', expected '" + dtype + "'");
}

template <typename T>
std::vector<T> read_payload(std::istream& in, std::size_t count, const fs::path& path) {
  std::vector<T> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(T))
    throw FormatError("'" + path.string() + "': payload shorter than header declares");
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("'" + path.string() + "': trailing bytes after payload");
  return data;
}

void write_binary_atomic(const fs::path& path, const json& header, const void* data,
                         std::size_t bytes) {
  std::string content = header.dump() + "\n";
  content.append(static_cast<const char*>(data), bytes);
  write_text_atomic(path, content);
}

Index positive_dim(const json& h, const char* key, const fs::path& path) {
  const auto v = header_field<long long>(h, key, path);
  if (v < 1) throw FormatError("'" + path.string() + "': '" + key + "' must be positive");
  return static_cast<Index>(v);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

double parse_double(const std::string& s, const fs::path& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("'" + path.string() + "' line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

long long parse_int(const std::string& s, const fs::path& path, std::size_t line) {
  const double v = parse_double(s, path, line);
  if (v != std::floor(v))
    throw FormatError("'" + path.string() + "' line " + std::to_string(line) + ": expected integer, got '" + s + "'");
  return static_cast<long long>(v);
}

void expect_header(std::istream& in, const std::string& expected, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path.string() + "': empty file");
  const auto cells = split_csv(line);
  std::string joined;
  for (std::size_t i = 0; i < cells.size(); ++i) joined += (i ? "," : "") + cells[i];
  if (joined != expected)
    throw FormatError("'" + path.string() + "': header '" + joined + "', expected '" + expected + "'");
}

}  // namespace

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create '" + path.parent_path().string() + "': " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// Volumes.

void write_volume(const fs::path& path, const Volume<double>& v) {
  const json header = {{"n_b", v.n_b()},
                       {"n_a", v.n_a()},
                       {"n_r", v.n_r()},
                       {"spacing_um", {v.spacing().dz, v.spacing().dx, v.spacing().dy}},
                       {"dtype", "f32le"}};
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(v.n_b() * v.n_a() * v.n_r()));
  for (Index b = 0; b < v.n_b(); ++b)
    for (Index a = 0; a < v.n_a(); ++a)
      for (Index r = 0; r < v.n_r(); ++r) data.push_back(static_cast<float>(v(b, a, r)));
  write_binary_atomic(path, header, data.data(), data.size() * sizeof(float));
}

Volume<double> read_volume(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  const json h = read_header(in, path);
  expect_dtype(h, "f32le", path);
  const Index n_b = positive_dim(h, "n_b", path), n_a = positive_dim(h, "n_a", path),
              n_r = positive_dim(h, "n_r", path);
  const auto sp = header_field<std::vector<double>>(h, "spacing_um", path);
  if (sp.size() != 3) throw FormatError("'" + path.string() + "': spacing_um needs 3 entries");
  const auto data = read_payload<float>(in, static_cast<std::size_t>(n_b * n_a * n_r), path);
  std::vector<Image<double>> bscans;
  std::size_t k = 0;
  for (Index b = 0; b < n_b; ++b) {
    Image<double> img(n_r, n_a);
    for (Index a = 0; a < n_a; ++a)
      for (Index r = 0; r < n_r; ++r) img(r, a) = data[k++];
    bscans.push_back(std::move(img));
  }
  try {
    return Volume<double>(std::move(bscans), Spacing{sp[0], sp[1], sp[2]});
  } catch (const Error& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Distributions, class probabilities and label maps.

void write_distributions(const fs::path& path, const std::vector<SurfaceDistribution<double>>& q) {
  if (q.empty()) throw DimensionError("write_distributions: no surfaces");
  const json header = {{"kind", "surface_distribution"},
                       {"n_surfaces", q.size()},
                       {"n_b", q[0].n_b()},
                       {"n_a", q[0].n_a()},
                       {"n_r", q[0].n_r()},
                       {"dtype", "f32le"}};
  std::vector<float> data;
  for (const auto& d : q) {
    if (d.n_b() != q[0].n_b() || d.n_a() != q[0].n_a() || d.n_r() != q[0].n_r())
      throw DimensionError("write_distributions: inconsistent shapes");
    for (Index b = 0; b < d.n_b(); ++b)
      for (Index a = 0; a < d.n_a(); ++a)
        for (Index r = 0; r < d.n_r(); ++r) data.push_back(static_cast<float>(d.bscan(b)(r, a)));
  }
  write_binary_atomic(path, header, data.data(), data.size() * sizeof(float));
}

std::vector<SurfaceDistribution<double>> read_distributions(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  const json h = read_header(in, path);
  if (header_field<std::string>(h, "kind", path) != "surface_distribution")
    throw FormatError("'" + path.string() + "': not a surface distribution file");
  expect_dtype(h, "f32le", path);
  const Index n_l = positive_dim(h, "n_surfaces", path), n_b = positive_dim(h, "n_b", path),
              n_a = positive_dim(h, "n_a", path), n_r = positive_dim(h, "n_r", path);
  const auto data = read_payload<float>(in, static_cast<std::size_t>(n_l * n_b * n_a * n_r), path);
  std::vector<SurfaceDistribution<double>> out;
  std::size_t k = 0;
  for (Index l = 0; l < n_l; ++l) {
    std::vector<Image<double>> probs;
    for (Index b = 0; b < n_b; ++b) {
      Image<double> img(n_r, n_a);
      for (Index a = 0; a < n_a; ++a)
        for (Index r = 0; r < n_r; ++r) img(r, a) = data[k++];
      probs.push_back(std::move(img));
    }
    out.emplace_back(std::move(probs));
  }
  return out;
}

void write_class_probabilities(const fs::path& path, const ClassProbabilities<double>& p) {
  if (p.n_b() == 0 || p.n_classes() == 0) throw DimensionError("write_class_probabilities: empty");
  const Index n_r = p.at(0, 0).rows(), n_a = p.at(0, 0).cols();
  const json header = {{"kind", "class_probabilities"},
                       {"n_classes", p.n_classes()},
                       {"n_b", p.n_b()},
                       {"n_a", n_a},
                       {"n_r", n_r},
                       {"dtype", "f32le"}};
  std::vector<float> data;
  for (Index c = 0; c < p.n_classes(); ++c)
    for (Index b = 0; b < p.n_b(); ++b)
      for (Index a = 0; a < n_a; ++a)
        for (Index r = 0; r < n_r; ++r) data.push_back(static_cast<float>(p.at(b, c)(r, a)));
  write_binary_atomic(path, header, data.data(), data.size() * sizeof(float));
}

void write_label_map(const fs::path& path, const LabelMap& m) {
  const json header = {{"kind", "label_map"},
                       {"n_surfaces", m.n_surfaces},
                       {"n_b", m.n_b()},
                       {"n_a", m.n_a()},
                       {"n_r", m.n_r()},
                       {"dtype", "i32le"}};
  std::vector<std::int32_t> data;
  for (const auto& img : m.labels)
    for (Index a = 0; a < img.cols(); ++a)
      for (Index r = 0; r < img.rows(); ++r) data.push_back(img(r, a));
  write_binary_atomic(path, header, data.data(), data.size() * sizeof(std::int32_t));
}

ClassProbabilities<double> read_class_probabilities(const fs::path& path) {
  auto in = open_in(path, std::ios::binary);
  const json h = read_header(in, path);
  const auto kind = header_field<std::string>(h, "kind", path);
  const Index n_b = positive_dim(h, "n_b", path), n_a = positive_dim(h, "n_a", path),
              n_r = positive_dim(h, "n_r", path);
  if (kind == "label_map") {
    expect_dtype(h, "i32le", path);
    const auto n_l = header_field<long long>(h, "n_surfaces", path);
    const auto data = read_payload<std::int32_t>(in, static_cast<std::size_t>(n_b * n_a * n_r), path);
    LabelMap m;
    m.n_surfaces = static_cast<Index>(n_l);
    std::size_t k = 0;
    for (Index b = 0; b < n_b; ++b) {
      Eigen::MatrixXi img(n_r, n_a);
      for (Index a = 0; a < n_a; ++a)
        for (Index r = 0; r < n_r; ++r) img(r, a) = data[k++];
      m.labels.push_back(std::move(img));
    }
    return one_hot(m);
  }
  if (kind != "class_probabilities")
    throw FormatError("'" + path.string() + "': unsupported kind '" + kind + "'");
  expect_dtype(h, "f32le", path);
  const Index n_c = positive_dim(h, "n_classes", path);
  const auto data = read_payload<float>(in, static_cast<std::size_t>(n_c * n_b * n_a * n_r), path);
  ClassProbabilities<double> p;
  p.probs.assign(static_cast<std::size_t>(n_b),
                 std::vector<Image<double>>(static_cast<std::size_t>(n_c), Image<double>(n_r, n_a)));
  std::size_t k = 0;
  for (Index c = 0; c < n_c; ++c)
    for (Index b = 0; b < n_b; ++b)
      for (Index a = 0; a < n_a; ++a)
        for (Index r = 0; r < n_r; ++r)
          p.probs[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)](r, a) = data[k++];
  return p;
}

// ---------------------------------------------------------------------------
// CSV.

void write_surfaces(const fs::path& path, const SurfaceSet<double>& s) {
  std::string out = "surface,b,a,r\n";
  for (Index l = 0; l < s.n_surfaces(); ++l)
    for (Index b = 0; b < s.n_b(); ++b)
      for (Index a = 0; a < s.n_a(); ++a)
        out += s.names()[static_cast<std::size_t>(l)] + "," + std::to_string(b + 1) + "," +
               std::to_string(a + 1) + "," + format_double(s(l, b, a)) + "\n";
  write_text_atomic(path, out);
}

SurfaceSet<double> read_surfaces(const fs::path& path) {
  auto in = open_in(path);
  expect_header(in, "surface,b,a,r", path);
  struct Entry {
    std::size_t surface;
    long long b, a;
    double r;
  };
  std::vector<std::string> names;
  std::map<std::string, std::size_t> index;
  std::vector<Entry> entries;
  long long n_b = 0, n_a = 0;
  std::string line;
  for (std::size_t ln = 2; std::getline(in, line); ++ln) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4)
      throw FormatError("'" + path.string() + "' line " + std::to_string(ln) + ": expected 4 fields");
    auto [it, inserted] = index.emplace(cells[0], names.size());
    if (inserted) names.push_back(cells[0]);
    Entry e{it->second, parse_int(cells[1], path, ln), parse_int(cells[2], path, ln),
            parse_double(cells[3], path, ln)};
    if (e.b < 1 || e.a < 1)
      throw FormatError("'" + path.string() + "' line " + std::to_string(ln) + ": indices are 1-based");
    if (!std::isfinite(e.r))
      throw FormatError("'" + path.string() + "' line " + std::to_string(ln) + ": non-finite row");
    n_b = std::max(n_b, e.b);
    n_a = std::max(n_a, e.a);
    entries.push_back(e);
  }
  if (names.empty()) throw FormatError("'" + path.string() + "': no surfaces");
  SurfaceSet<double> s(static_cast<Index>(names.size()), n_b, n_a);
  std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> seen(
      names.size(), Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n_b, n_a, false));
  for (const auto& e : entries) {
    auto& flag = seen[e.surface](e.b - 1, e.a - 1);
    if (flag)
      throw FormatError("'" + path.string() + "': duplicate entry for " + names[e.surface] +
                        " at b=" + std::to_string(e.b) + ", a=" + std::to_string(e.a));
    flag = true;
    s(static_cast<Index>(e.surface), e.b - 1, e.a - 1) = e.r;
  }
  for (std::size_t l = 0; l < names.size(); ++l)
    if (!seen[l].all())
      throw FormatError("'" + path.string() + "': surface " + names[l] + " does not cover every (b, a)");
  return SurfaceSet<double>(s.surfaces(), names);
}

void write_displacements(const fs::path& path, const DisplacementField<double>& d) {
  if (d.transverse.size() != d.axial.size())
    throw DimensionError("write_displacements: axial/transverse length mismatch");
  std::string out = "b,axial,transverse\n";
  for (Index b = 0; b < d.n_b(); ++b)
    out += std::to_string(b + 1) + "," + format_double(d.axial(b)) + "," +
           std::to_string(d.transverse(b)) + "\n";
  write_text_atomic(path, out);
}

DisplacementField<double> read_displacements(const fs::path& path) {
  auto in = open_in(path);
  expect_header(in, "b,axial,transverse", path);
  std::vector<std::pair<double, int>> rows;
  std::string line;
  for (std::size_t ln = 2; std::getline(in, line); ++ln) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3)
      throw FormatError("'" + path.string() + "' line " + std::to_string(ln) + ": expected 3 fields");
    const auto b = parse_int(cells[0], path, ln);
    if (b != static_cast<long long>(rows.size()) + 1)
      throw FormatError("'" + path.string() + "' line " + std::to_string(ln) + ": B-scans must be listed 1..N in order");
    const double ax = parse_double(cells[1], path, ln);
    if (!std::isfinite(ax))
      throw FormatError("'" + path.string() + "' line " + std::to_string(ln) + ": non-finite displacement");
    rows.emplace_back(ax, static_cast<int>(parse_int(cells[2], path, ln)));
  }
  auto d = DisplacementField<double>::zeros(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.axial(static_cast<Index>(i)) = rows[i].first;
    d.transverse(static_cast<Index>(i)) = rows[i].second;
  }
  return d;
}

void write_motion(const fs::path& path, const MotionSpec& m) {
  DisplacementField<double> d{m.axial_truth, m.transverse_truth};
  write_displacements(path, d);
}

void write_histogram(const fs::path& path, const Histogram& h) {
  std::string out = "bin_lo_px,bin_hi_px,count\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    const double lo = static_cast<double>(k) * h.bin_width;
    const std::string hi = k + 1 < h.counts.size() ? format_double(lo + h.bin_width) : "inf";
    out += format_double(lo) + "," + hi + "," + std::to_string(h.counts[k]) + "\n";
  }
  write_text_atomic(path, out);
}

// ---------------------------------------------------------------------------
// JSON inputs.

LossWeights read_weights(const fs::path& path) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  LossWeights w;
  try {
    w.lambda_base = j.value("lambda_base", w.lambda_base);
    w.lambda_l = j.at("lambda_l").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  w.validate();
  return w;
}

PhantomJob read_phantom_job(const fs::path& path) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  if (!j.is_object()) throw FormatError("'" + path.string() + "': expected a JSON object");
  static const char* const known[] = {
      "n_b", "n_a", "n_r", "spacing_um", "layer_count", "top_row", "thickness", "intensity",
      "bump_count", "bump_amplitude", "thickness_ripple", "vary_across_bscans", "fovea_depth", "fovea_width",
      "fovea_thinning", "vessel_count", "vessel_width", "vessel_attenuation",
      "speckle_variance", "noise_sigma", "background_noise_sigma", "seed", "motion"};
  for (const auto& [key, _] : j.items())
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw FormatError("'" + path.string() + "': unknown key '" + key + "'");

  PhantomJob job;
  auto& s = job.spec;
  try {
    s.n_b = j.value("n_b", s.n_b);
    s.n_a = j.value("n_a", s.n_a);
    s.n_r = j.value("n_r", s.n_r);
    if (j.contains("spacing_um")) {
      const auto sp = j.at("spacing_um").get<std::vector<double>>();
      if (sp.size() != 3) throw FormatError("'" + path.string() + "': spacing_um needs 3 entries");
      s.spacing = {sp[0], sp[1], sp[2]};
    }
    s.layer_count = j.value("layer_count", s.layer_count);
    s.top_row = j.value("top_row", s.top_row);
    s.thickness = j.value("thickness", s.thickness);
    s.intensity = j.value("intensity", s.intensity);
    s.bump_count = j.value("bump_count", s.bump_count);
    s.bump_amplitude = j.value("bump_amplitude", s.bump_amplitude);
    s.thickness_ripple = j.value("thickness_ripple", s.thickness_ripple);
    s.vary_across_bscans = j.value("vary_across_bscans", s.vary_across_bscans);
    s.fovea_depth = j.value("fovea_depth", s.fovea_depth);
    s.fovea_width = j.value("fovea_width", s.fovea_width);
    s.fovea_thinning = j.value("fovea_thinning", s.fovea_thinning);
    s.vessel_count = j.value("vessel_count", s.vessel_count);
    s.vessel_width = j.value("vessel_width", s.vessel_width);
    s.vessel_attenuation = j.value("vessel_attenuation", s.vessel_attenuation);
    s.speckle_variance = j.value("speckle_variance", s.speckle_variance);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.background_noise_sigma = j.value("background_noise_sigma", s.background_noise_sigma);
    s.seed = j.value("seed", s.seed);
    if (j.contains("motion")) {
      const auto& m = j.at("motion");
      job.corrupt = true;
      job.motion_seed = m.value("seed", job.motion_seed);
      job.motion.max_axial = m.value("max_axial", job.motion.max_axial);
      job.motion.max_transverse = m.value("max_transverse", job.motion.max_transverse);
      job.motion.min_groups = m.value("min_groups", job.motion.min_groups);
      job.motion.max_groups = m.value("max_groups", job.motion.max_groups);
    }
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  return job;
}

}  // namespace octalign::io
