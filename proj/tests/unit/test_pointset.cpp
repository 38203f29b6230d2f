#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "mlgcn/error.hpp"
#include "mlgcn/pointset.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace mlgcn;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an mlgcn::Error";
  return ErrorCode::kIo;
}

double max_norm(const PointCloud& c) {
  double m = 0;
  for (const auto& p : c.points()) m = std::max(m, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
  return m;
}

Point3 centroid(const PointCloud& c) {
  Point3 s{0, 0, 0};
  for (const auto& p : c.points())
    for (int d = 0; d < 3; ++d) s[d] += p[d];
  for (auto& v : s) v /= static_cast<double>(c.size());
  return s;
}

}  // namespace

TEST(OffParse, MinimalTriangle) {
  std::istringstream in("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
  auto mesh = parse_off(in);
  EXPECT_EQ(mesh.vertices.size(), 3u);
  ASSERT_EQ(mesh.faces.size(), 1u);
  EXPECT_EQ(mesh.faces[0], (std::array<std::uint32_t, 3>{0, 1, 2}));
}

TEST(OffParse, QuadIsFanTriangulated) {
  std::istringstream in("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
  auto mesh = parse_off(in);
  ASSERT_EQ(mesh.faces.size(), 2u);
  EXPECT_EQ(mesh.faces[0], (std::array<std::uint32_t, 3>{0, 1, 2}));
  EXPECT_EQ(mesh.faces[1], (std::array<std::uint32_t, 3>{0, 2, 3}));
}

TEST(OffParse, MissingHeaderIsMalformed) {
  std::istringstream in("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
  EXPECT_EQ(code_of([&] { parse_off(in); }), ErrorCode::kMalformedFile);
}

TEST(OffParse, GluedHeaderAccepted) {
  std::istringstream in("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
  EXPECT_EQ(parse_off(in).faces.size(), 1u);
}

TEST(OffParse, ErrorsCarryLineNumbers) {
  std::istringstream bad_index("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n");
  try {
    parse_off(bad_index, "mesh.off");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMalformedFile);
    EXPECT_NE(std::string(e.what()).find("mesh.off:6"), std::string::npos) << e.what();
  }
  std::istringstream bad_token("OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n");
  EXPECT_EQ(code_of([&] { parse_off(bad_token); }), ErrorCode::kMalformedFile);
}

TEST(SampleSurface, RightTriangleCentroid) {
  TriangleMesh mesh{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}}};
  auto cloud = sample_surface(mesh, 10000, 7);
  ASSERT_EQ(cloud.size(), 10000u);
  for (const auto& p : cloud.points()) {
    EXPECT_GE(p[0], -1e-12);
    EXPECT_GE(p[1], -1e-12);
    EXPECT_LE(p[0] + p[1], 1.0 + 1e-12);
    EXPECT_EQ(p[2], 0.0);
  }
  auto c = centroid(cloud);
  EXPECT_NEAR(c[0], 1.0 / 3.0, 0.02);
  EXPECT_NEAR(c[1], 1.0 / 3.0, 0.02);
}

TEST(SampleSurface, SinglePointLiesOnFace) {
  TriangleMesh mesh{{{0, 0, 1}, {2, 0, 1}, {0, 2, 1}}, {{0, 1, 2}}};
  auto cloud = sample_surface(mesh, 1, 3);
  ASSERT_EQ(cloud.size(), 1u);
  EXPECT_EQ(cloud[0][2], 1.0);
  EXPECT_LE(cloud[0][0] + cloud[0][1], 2.0 + 1e-12);
}

TEST(SampleSurface, AreaProportionalSplit) {
  // Face 0 has area 1, face 1 has area 3; they sit at different z.
  TriangleMesh mesh{{{0, 0, 0}, {2, 0, 0}, {0, 1, 0}, {0, 0, 5}, {6, 0, 5}, {0, 1, 5}}, {{0, 1, 2}, {3, 4, 5}}};
  auto cloud = sample_surface(mesh, 40000, 11);
  std::size_t second = 0;
  for (const auto& p : cloud.points()) second += p[2] > 2.5;
  EXPECT_NEAR(static_cast<double>(second), 30000.0, 600.0);
}

TEST(SampleSurface, DegenerateMeshRejected) {
  TriangleMesh mesh{{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {{0, 1, 2}}};
  EXPECT_EQ(code_of([&] { sample_surface(mesh, 10, 0); }), ErrorCode::kDegenerateMesh);
}

TEST(SampleSurface, ZeroAreaFacesNeverSampled) {
  TriangleMesh mesh{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 5, 5}}, {{0, 1, 2}, {3, 3, 3}}};
  auto cloud = sample_surface(mesh, 2000, 5);
  for (const auto& p : cloud.points()) EXPECT_EQ(p[2], 0.0);
}

TEST(SampleSurface, DeterministicPerSeed) {
  TriangleMesh mesh{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}}};
  EXPECT_EQ(sample_surface(mesh, 500, 42), sample_surface(mesh, 500, 42));
  EXPECT_FALSE(sample_surface(mesh, 500, 42) == sample_surface(mesh, 500, 43));
}

TEST(SampleSurface, VertexReorderingKeepsFaceHistogram) {
  // Two faces at distinct heights with areas 1 and 2; the permuted mesh lists
  // vertices in another order. Histograms of face membership agree within 4 sigma.
  TriangleMesh mesh{{{0, 0, 0}, {2, 0, 0}, {0, 1, 0}, {0, 0, 3}, {4, 0, 3}, {0, 1, 3}}, {{0, 1, 2}, {3, 4, 5}}};
  TriangleMesh permuted{{mesh.vertices[4], mesh.vertices[2], mesh.vertices[5], mesh.vertices[0], mesh.vertices[3],
                         mesh.vertices[1]},
                        {{1, 3, 5}, {0, 4, 2}}};
  const std::size_t n = 20000;
  auto count_top = [&](const PointCloud& c) {
    std::size_t top = 0;
    for (const auto& p : c.points()) top += p[2] > 1.5;
    return static_cast<double>(top);
  };
  const double a = count_top(sample_surface(mesh, n, 1));
  const double b = count_top(sample_surface(permuted, n, 2));
  const double sigma = std::sqrt(n * (2.0 / 3.0) * (1.0 / 3.0));
  EXPECT_NEAR(a, b, 4.0 * std::sqrt(2.0) * sigma);
}

TEST(Normalize, TwoPoints) {
  auto out = normalize_unit_sphere(PointCloud({{0, 0, 0}, {2, 0, 0}}));
  EXPECT_NEAR(out[0][0], -1.0, 1e-12);
  EXPECT_NEAR(out[1][0], 1.0, 1e-12);
  EXPECT_EQ(out[0][1], 0.0);
}

TEST(Normalize, Idempotent) {
  auto once = normalize_unit_sphere(oracle::random_cloud(200, 9, 5.0));
  auto twice = normalize_unit_sphere(once);
  for (std::size_t i = 0; i < once.size(); ++i)
    for (int d = 0; d < 3; ++d) EXPECT_NEAR(once[i][d], twice[i][d], 1e-6);
  auto c = centroid(once);
  for (double v : c) EXPECT_NEAR(v, 0.0, 1e-6);
  EXPECT_NEAR(max_norm(once), 1.0, 1e-6);
}

TEST(Normalize, CoincidentPointsGoToOrigin) {
  auto out = normalize_unit_sphere(PointCloud({{3, 3, 3}, {3, 3, 3}, {3, 3, 3}}));
  for (const auto& p : out.points()) EXPECT_EQ(p, (Point3{0, 0, 0}));
}

TEST(Augment, IdentityWhenDisabled) {
  auto cloud = oracle::random_cloud(50, 1);
  EXPECT_EQ(augment(cloud, 5, {false, 0.0, 0.05}), cloud);
}

TEST(Augment, RotationPreservesDistances) {
  auto cloud = oracle::random_cloud(60, 2);
  auto out = augment(cloud, 77, {true, 0.0, 0.0});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    EXPECT_NEAR(out[i][1], cloud[i][1], 1e-12);  // rotation about y
    for (std::size_t j = i + 1; j < cloud.size(); ++j)
      EXPECT_NEAR(std::sqrt(oracle::dist2(out[i], out[j])), std::sqrt(oracle::dist2(cloud[i], cloud[j])), 1e-6);
  }
}

TEST(Augment, JitterIsClipped) {
  auto cloud = oracle::random_cloud(2000, 3);
  auto out = augment(cloud, 8, {false, 0.01, 0.05});
  double max_disp = 0;
  bool moved = false;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int d = 0; d < 3; ++d) {
      max_disp = std::max(max_disp, std::abs(out[i][d] - cloud[i][d]));
      moved |= out[i][d] != cloud[i][d];
    }
  EXPECT_LE(max_disp, 0.05 + 1e-15);
  EXPECT_TRUE(moved);
  auto wide = augment(cloud, 8, {false, 1.0, 0.05});
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int d = 0; d < 3; ++d) EXPECT_LE(std::abs(wide[i][d] - cloud[i][d]), 0.05 + 1e-15);
}

TEST(Augment, DeterministicPerSeed) {
  auto cloud = oracle::random_cloud(30, 4);
  EXPECT_EQ(augment(cloud, 10, {}), augment(cloud, 10, {}));
}

TEST(Dataset, TwoXyzEntries) {
  testutil::TempDir dir;
  dir.write("a.xyz", "0 0 0\n1 0 0\n");
  dir.write("sub/b.xyz", "# comment\n0 1 0\n\n0 0 1\n0 1 1\n");
  dir.write("train.csv", "a.xyz,3\n\nsub/b.xyz,1\n");
  auto ds = read_dataset(dir / "train.csv");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].class_label, 3);
  EXPECT_EQ(ds[1].class_label, 1);
  EXPECT_EQ(ds[0].cloud.size(), 2u);
  EXPECT_EQ(ds[1].cloud.size(), 3u);
  EXPECT_EQ(ds[1].cloud[2], (Point3{0, 1, 1}));
  EXPECT_FALSE(ds[0].part_labels.has_value());
}

TEST(Dataset, LabelLengthMismatch) {
  testutil::TempDir dir;
  dir.write("a.xyz", "0 0 0\n1 0 0\n2 0 0\n3 0 0\n");
  dir.write("a.seg", "0\n1\n1\n");
  dir.write("m.csv", "a.xyz,0,a.seg\n");
  EXPECT_EQ(code_of([&] { read_dataset(dir / "m.csv"); }), ErrorCode::kLabelLengthMismatch);
}

TEST(Dataset, PartLabelsLoaded) {
  testutil::TempDir dir;
  dir.write("a.xyz", "0 0 0\n1 0 0\n2 0 0\n");
  dir.write("a.seg", "0\n2\n1\n");
  dir.write("m.csv", "a.xyz,4,a.seg\n");
  auto ds = read_dataset(dir / "m.csv");
  ASSERT_TRUE(ds[0].part_labels.has_value());
  EXPECT_EQ(*ds[0].part_labels, (std::vector<int>{0, 2, 1}));
}

TEST(Dataset, EmptyManifest) {
  testutil::TempDir dir;
  dir.write("m.csv", "");
  EXPECT_TRUE(read_dataset(dir / "m.csv").empty());
}

TEST(Dataset, MissingAndMalformed) {
  testutil::TempDir dir;
  EXPECT_EQ(code_of([&] { read_dataset(dir / "nope.csv"); }), ErrorCode::kMissingFile);
  dir.write("m.csv", "gone.xyz,0\n");
  EXPECT_EQ(code_of([&] { read_dataset(dir / "m.csv"); }), ErrorCode::kMissingFile);
  dir.write("bad.xyz", "0 0\n");
  dir.write("m2.csv", "bad.xyz,0\n");
  EXPECT_EQ(code_of([&] { read_dataset(dir / "m2.csv"); }), ErrorCode::kMalformedFile);
  dir.write("m3.csv", "bad.xyz\n");
  EXPECT_EQ(code_of([&] { read_dataset(dir / "m3.csv"); }), ErrorCode::kMalformedFile);
  dir.write("empty.xyz", "");
  dir.write("m4.csv", "empty.xyz,0\n");
  EXPECT_EQ(code_of([&] { read_dataset(dir / "m4.csv"); }), ErrorCode::kMalformedFile);
}

TEST(Dataset, OffEntriesSampledToPointCount) {
  testutil::TempDir dir;
  dir.write("t.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
  dir.write("m.csv", "t.off,2\nt.off,2\n");
  DatasetOptions opts;
  opts.n_points = 64;
  opts.seed = 5;
  auto ds = read_dataset(dir / "m.csv", opts);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].cloud.size(), 64u);
  EXPECT_FALSE(ds[0].cloud == ds[1].cloud);  // per-sample seeds differ
  EXPECT_EQ(read_dataset(dir / "m.csv", opts)[1].cloud, ds[1].cloud);
}

TEST(Dataset, DeterministicXyzReads) {
  testutil::TempDir dir;
  save_xyz(dir / "a.xyz", oracle::random_cloud(40, 12));
  dir.write("m.csv", "a.xyz,0\n");
  auto a = read_dataset(dir / "m.csv");
  auto b = read_dataset(dir / "m.csv");
  EXPECT_EQ(a[0].cloud, b[0].cloud);
}

TEST(PointCache, RoundTripAtFloatPrecision) {
  testutil::TempDir dir;
  auto cloud = oracle::random_cloud(33, 13);
  save_point_cache(dir / "c.mlgc", cloud);
  auto back = load_point_file(dir / "c.mlgc", 0, 0);
  ASSERT_EQ(back.size(), cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (int d = 0; d < 3; ++d) EXPECT_EQ(back[i][d], static_cast<double>(static_cast<float>(cloud[i][d])));
  EXPECT_EQ(testutil::read_file(dir / "c.mlgc").substr(0, 4), "MLGC");
}

TEST(PointCloudType, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(PointCloud({}), Error);
  EXPECT_EQ(code_of([] { PointCloud({{0, NAN, 0}}); }), ErrorCode::kNonFinite);
}
