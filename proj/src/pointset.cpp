#include "mlgcn/pointset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mlgcn/error.hpp"
#include "mlgcn/rng.hpp"

namespace mlgcn {

namespace {

std::string at_line(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

// Reads the next non-empty, non-comment line. Returns false at EOF.
bool next_content_line(std::istream& in, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

template <class T>
std::vector<T> parse_tokens(const std::string& line, const std::string& where) {
  std::istringstream ss(line);
  std::vector<T> out;
  std::string tok;
  while (ss >> tok) {
    std::istringstream ts(tok);
    T v{};
    ts >> v;
    if (ts.fail() || !ts.eof()) fail(ErrorCode::kMalformedFile, where + ": bad token '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::ifstream open_or_throw(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) fail(ErrorCode::kMissingFile, path.string());
  return in;
}

std::string lower_ext(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) fail(ErrorCode::kMalformedFile, "truncated u32");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

}  // namespace

PointCloud::PointCloud(std::vector<Point3> points) : points_(std::move(points)) {
  if (points_.empty()) fail(ErrorCode::kShapeMismatch, "point cloud needs at least one point");
  for (const auto& p : points_) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      fail(ErrorCode::kNonFinite, "point cloud coordinate is not finite");
  }
}

// ---- OFF ------------------------------------------------------------------

TriangleMesh parse_off(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!next_content_line(in, line, line_no)) fail(ErrorCode::kMalformedFile, source + ": empty file");

  // Some ModelNet files glue the counts onto the header ("OFF490 518 0").
  std::string rest;
  {
    auto first = line.find_first_not_of(" \t");
    if (line.compare(first, 3, "OFF") != 0)
      fail(ErrorCode::kMalformedFile, at_line(source, line_no) + ": missing OFF header");
    rest = line.substr(first + 3);
  }
  if (rest.find_first_not_of(" \t\r") == std::string::npos) {
    if (!next_content_line(in, line, line_no))
      fail(ErrorCode::kMalformedFile, source + ": missing counts line");
    rest = line;
  }
  auto counts = parse_tokens<long long>(rest, at_line(source, line_no));
  if (counts.size() < 2 || counts[0] < 0 || counts[1] < 0)
    fail(ErrorCode::kMalformedFile, at_line(source, line_no) + ": bad counts line");

  TriangleMesh mesh;
  const auto nv = static_cast<std::size_t>(counts[0]);
  const auto nf = static_cast<std::size_t>(counts[1]);
  mesh.vertices.reserve(nv);
  for (std::size_t v = 0; v < nv; ++v) {
    if (!next_content_line(in, line, line_no))
      fail(ErrorCode::kMalformedFile, source + ": unexpected end of vertex list");
    auto xyz = parse_tokens<double>(line, at_line(source, line_no));
    if (xyz.size() < 3) fail(ErrorCode::kMalformedFile, at_line(source, line_no) + ": vertex needs 3 coordinates");
    mesh.vertices.push_back({xyz[0], xyz[1], xyz[2]});
  }
  for (std::size_t f = 0; f < nf; ++f) {
    if (!next_content_line(in, line, line_no))
      fail(ErrorCode::kMalformedFile, source + ": unexpected end of face list");
    auto idx = parse_tokens<long long>(line, at_line(source, line_no));
    if (idx.empty() || idx[0] < 3 || idx.size() < static_cast<std::size_t>(idx[0]) + 1)
      fail(ErrorCode::kMalformedFile, at_line(source, line_no) + ": bad face record");
    const auto arity = static_cast<std::size_t>(idx[0]);
    for (std::size_t j = 1; j <= arity; ++j) {
      if (idx[j] < 0 || static_cast<std::size_t>(idx[j]) >= nv)
        fail(ErrorCode::kMalformedFile, at_line(source, line_no) + ": vertex index out of range");
    }
    for (std::size_t j = 2; j < arity; ++j) {
      mesh.faces.push_back({static_cast<std::uint32_t>(idx[1]), static_cast<std::uint32_t>(idx[j]),
                            static_cast<std::uint32_t>(idx[j + 1])});
    }
  }
  return mesh;
}

TriangleMesh load_off_mesh(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_off(in, path.string());
}

// ---- xyz ------------------------------------------------------------------

PointCloud parse_xyz(std::istream& in, const std::string& source) {
  std::vector<Point3> pts;
  std::string line;
  std::size_t line_no = 0;
  while (next_content_line(in, line, line_no)) {
    auto v = parse_tokens<double>(line, at_line(source, line_no));
    if (v.size() != 3) fail(ErrorCode::kMalformedFile, at_line(source, line_no) + ": expected 3 values");
    pts.push_back({v[0], v[1], v[2]});
  }
  if (pts.empty()) fail(ErrorCode::kMalformedFile, source + ": no points");
  return PointCloud(std::move(pts));
}

PointCloud load_xyz(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return parse_xyz(in, path.string());
}

void save_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(17);
  for (const auto& p : cloud.points()) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
}

// ---- binary cache ---------------------------------------------------------

PointCloud load_point_cache(const std::filesystem::path& path) {
  auto in = open_or_throw(path, std::ios::binary);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "MLGC", 4) != 0)
    fail(ErrorCode::kMalformedFile, path.string() + ": bad magic");
  const auto n = read_u32_le(in);
  if (n == 0) fail(ErrorCode::kMalformedFile, path.string() + ": no points");
  std::vector<Point3> pts(n);
  for (auto& p : pts) {
    for (auto& c : p) c = std::bit_cast<float>(read_u32_le(in));
  }
  return PointCloud(std::move(pts));
}

void save_point_cache(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write("MLGC", 4);
  write_u32_le(out, static_cast<std::uint32_t>(cloud.size()));
  for (const auto& p : cloud.points()) {
    for (double c : p) write_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(c)));
  }
}

PointCloud load_point_file(const std::filesystem::path& path, std::size_t n_points,
                           std::uint64_t seed) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kMissingFile, path.string());
  const auto ext = lower_ext(path);
  if (ext == ".off") return sample_surface(load_off_mesh(path), n_points, seed);
  if (ext == ".mlgc") return load_point_cache(path);
  return load_xyz(path);
}

std::vector<int> load_part_labels(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (next_content_line(in, line, line_no)) {
    auto v = parse_tokens<int>(line, at_line(path.string(), line_no));
    if (v.size() != 1) fail(ErrorCode::kMalformedFile, at_line(path.string(), line_no) + ": expected one label");
    labels.push_back(v[0]);
  }
  return labels;
}

// ---- geometry -------------------------------------------------------------

double triangle_area(const Point3& a, const Point3& b, const Point3& c) noexcept {
  const double ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
  const double vx = c[0] - a[0], vy = c[1] - a[1], vz = c[2] - a[2];
  const double cx = uy * vz - uz * vy, cy = uz * vx - ux * vz, cz = ux * vy - uy * vx;
  return 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
}

PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n == 0) fail(ErrorCode::kShapeMismatch, "sample count must be >= 1");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) fail(ErrorCode::kDegenerateMesh, "mesh has zero surface area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double pick = unit(rng) * total;
    // upper_bound skips zero-area faces: their cumulative value equals the
    // predecessor's, so no draw can land on them.
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
    const double r1 = std::sqrt(unit(rng));
    const double r2 = unit(rng);
    const double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
    const auto& a = mesh.vertices[f[0]];
    const auto& b = mesh.vertices[f[1]];
    const auto& c = mesh.vertices[f[2]];
    pts.push_back({wa * a[0] + wb * b[0] + wc * c[0], wa * a[1] + wb * b[1] + wc * c[1],
                   wa * a[2] + wb * b[2] + wc * c[2]});
  }
  return PointCloud(std::move(pts));
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  Point3 centroid{0.0, 0.0, 0.0};
  for (const auto& p : cloud.points()) {
    for (int d = 0; d < 3; ++d) centroid[d] += p[d];
  }
  for (auto& c : centroid) c /= static_cast<double>(cloud.size());

  std::vector<Point3> out(cloud.points().begin(), cloud.points().end());
  double max_norm = 0.0;
  for (auto& p : out) {
    for (int d = 0; d < 3; ++d) p[d] -= centroid[d];
    max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  }
  // Coincident points: anything below this is rounding noise around the centroid.
  if (max_norm <= 1e-12) {
    for (auto& p : out) p = {0.0, 0.0, 0.0};
  } else {
    for (auto& p : out) {
      for (auto& c : p) c /= max_norm;
    }
  }
  return PointCloud(std::move(out));
}

PointCloud augment(const PointCloud& cloud, std::uint64_t seed, const AugmentOptions& opts) {
  std::mt19937_64 rng(seed);
  std::vector<Point3> out(cloud.points().begin(), cloud.points().end());
  if (opts.rotate) {
    std::uniform_real_distribution<double> angle_dist(0.0, 2.0 * std::numbers::pi);
    const double a = angle_dist(rng);
    const double c = std::cos(a), s = std::sin(a);
    for (auto& p : out) {
      const double x = c * p[0] + s * p[2];
      const double z = -s * p[0] + c * p[2];
      p[0] = x;
      p[2] = z;
    }
  }
  if (opts.jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, opts.jitter_sigma);
    for (auto& p : out) {
      for (auto& v : p) v += std::clamp(noise(rng), -opts.jitter_clip, opts.jitter_clip);
    }
  }
  return PointCloud(std::move(out));
}

// ---- dataset --------------------------------------------------------------

std::vector<LabeledSample> read_dataset(const std::filesystem::path& manifest,
                                        const DatasetOptions& opts) {
  auto in = open_or_throw(manifest);
  const auto base = manifest.parent_path();
  std::vector<LabeledSample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (next_content_line(in, line, line_no)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) {
      auto b = f.find_first_not_of(" \t\r");
      auto e = f.find_last_not_of(" \t\r");
      fields.push_back(b == std::string::npos ? std::string{} : f.substr(b, e - b + 1));
    }
    const auto where = at_line(manifest.string(), line_no);
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty())
      fail(ErrorCode::kMalformedFile, where + ": expected <path>,<class-id>[,<part-labels>]");
    auto label = parse_tokens<int>(fields[1], where);
    if (label.size() != 1 || label[0] < 0) fail(ErrorCode::kMalformedFile, where + ": bad class id");

    const auto sample_seed = derive_seed(opts.seed, {samples.size()});
    LabeledSample s{load_point_file(base / fields[0], opts.n_points, sample_seed), label[0], std::nullopt};
    if (fields.size() == 3 && !fields[2].empty()) {
      if (lower_ext(fields[0]) == ".off")
        fail(ErrorCode::kMalformedFile, where + ": part labels need a point file, not a mesh");
      auto parts = load_part_labels(base / fields[2]);
      if (parts.size() != s.cloud.size())
        fail(ErrorCode::kLabelLengthMismatch,
             where + ": " + std::to_string(parts.size()) + " labels for " + std::to_string(s.cloud.size()) + " points");
      s.part_labels = std::move(parts);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace mlgcn
