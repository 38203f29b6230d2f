#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mlgcn {

using Point3 = std::array<double, 3>;

/// An unordered set of N >= 1 finite 3D points.
class PointCloud {
 public:
  explicit PointCloud(std::vector<Point3> points);

  std::size_t size() const noexcept { return points_.size(); }
  const Point3& operator[](std::size_t i) const noexcept { return points_[i]; }
  std::span<const Point3> points() const noexcept { return points_; }

  /// Flat x0 y0 z0 x1 ... view, handy for the C API.
  const double* data() const noexcept { return points_.front().data(); }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Point3> points_;
};

struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

struct LabeledSample {
  PointCloud cloud;
  int class_label = 0;
  std::optional<std::vector<int>> part_labels;
};

// ---- mesh / point file I/O ------------------------------------------------

/// Parses ASCII OFF. Polygons with more than three vertices are
/// fan-triangulated. `source` only labels error messages.
TriangleMesh parse_off(std::istream& in, const std::string& source = "<stream>");
TriangleMesh load_off_mesh(const std::filesystem::path& path);

/// Whitespace separated `x y z` per line; blank lines and '#' comments skipped.
PointCloud parse_xyz(std::istream& in, const std::string& source = "<stream>");
PointCloud load_xyz(const std::filesystem::path& path);
void save_xyz(const std::filesystem::path& path, const PointCloud& cloud);

// Packed little-endian cache: "MLGC", u32 N, N x (f32 x, f32 y, f32 z).
PointCloud load_point_cache(const std::filesystem::path& path);
void save_point_cache(const std::filesystem::path& path, const PointCloud& cloud);

/// Dispatches on extension: .xyz / .off / .mlgc. Meshes are sampled to
/// `n_points` with `seed`; point files are returned verbatim.
PointCloud load_point_file(const std::filesystem::path& path, std::size_t n_points,
                           std::uint64_t seed);

std::vector<int> load_part_labels(const std::filesystem::path& path);

// ---- geometry -------------------------------------------------------------

double triangle_area(const Point3& a, const Point3& b, const Point3& c) noexcept;

/// Area-weighted uniform surface sampling, deterministic per seed.
PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

/// Centers on the centroid and scales the farthest point to unit norm.
/// A cloud whose points all coincide maps to all-zero.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

struct AugmentOptions {
  bool rotate = true;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
};

/// Optional random rotation about +y, then clipped Gaussian jitter.
PointCloud augment(const PointCloud& cloud, std::uint64_t seed, const AugmentOptions& opts);

// ---- datasets -------------------------------------------------------------

struct DatasetOptions {
  std::size_t n_points = 1024;  // only used for mesh entries
  std::uint64_t seed = 0;
};

/// Manifest lines: `<relative-path>,<class-id>[,<part-label-path>]`, paths
/// relative to the manifest's directory. Blank lines and '#' comments skipped.
std::vector<LabeledSample> read_dataset(const std::filesystem::path& manifest,
                                        const DatasetOptions& opts = {});

}  // namespace mlgcn
