#include <doctest.h>

#include <array>
#include <cmath>
#include <map>

#include <json.hpp>

#include "picpoint/dataset.hpp"
#include "picpoint/image.hpp"
#include "picpoint/pointcloud_io.hpp"
#include "picpoint/synthetic.hpp"
#include "test_util.hpp"

using namespace picpoint;
namespace fs = std::filesystem;

namespace {

bool rigid(const Mat4& m) {
  Mat3 r = m.topLeftCorner<3, 3>();
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9 &&
         std::abs(r.determinant() - 1.0) <= 1e-9 && m.row(3) == Vec4(0, 0, 0, 1).transpose();
}

const Dataset& small_dataset() {
  static testutil::TempDir dir("dataio_small");
  static Dataset data = [] {
    BuildOptions o;
    o.seed = 3;
    build_synthetic_dataset(dir.path(), 10, o);
    return Dataset::load(dir.path());
  }();
  return data;
}

}  // namespace

TEST_SUITE("dataio") {

TEST_CASE("synthetic sphere lies on its radius") {
  Rng rng(1);
  SyntheticShapeSpec s{ShapeClass::sphere, 0.8, 1, 1, 0.0};
  PointCloud pc = generate_synthetic_object(s, 2000, rng);
  for (Eigen::Index c = 0; c < pc.size(); ++c) CHECK(std::abs(pc.points.col(c).norm() - 0.8) <= 1e-9);
  REQUIRE(pc.has_normals());
  for (Eigen::Index c = 0; c < pc.size(); ++c) CHECK(std::abs(pc.normals->col(c).norm() - 1.0) <= 1e-9);
}

TEST_CASE("synthetic box lies on its faces") {
  Rng rng(2);
  const double sigma = 0.01;
  SyntheticShapeSpec s{ShapeClass::box, 1.2, 0.6, 1.8, sigma};
  PointCloud pc = generate_synthetic_object(s, 2000, rng);
  const std::array<double, 3> half{0.6, 0.3, 0.9};
  int near = 0;
  for (Eigen::Index c = 0; c < pc.size(); ++c) {
    double best = 1e9;
    for (int axis = 0; axis < 3; ++axis)
      best = std::min(best, std::abs(std::abs(pc.points(axis, c)) - half[static_cast<std::size_t>(axis)]));
    near += best <= 4 * sigma;
  }
  CHECK(near >= 0.999 * pc.size());

  SyntheticShapeSpec exact{ShapeClass::box, 1.2, 0.6, 1.8, 0.0};
  PointCloud pe = generate_synthetic_object(exact, 500, rng);
  for (Eigen::Index c = 0; c < pe.size(); ++c) {
    double best = 1e9;
    for (int axis = 0; axis < 3; ++axis)
      best = std::min(best, std::abs(std::abs(pe.points(axis, c)) - half[static_cast<std::size_t>(axis)]));
    CHECK(best <= 1e-12);
  }
}

TEST_CASE("synthetic torus residual") {
  Rng rng(3);
  const double sigma = 0.01;
  SyntheticShapeSpec s{ShapeClass::torus, 1.0, 0.3, 1, sigma};
  PointCloud pc = generate_synthetic_object(s, 5000, rng);
  int ok = 0;
  for (Eigen::Index c = 0; c < pc.size(); ++c) {
    Vec3 p = pc.points.col(c);
    double ring = std::hypot(p.x(), p.z()) - 1.0;
    double residual = std::abs(std::hypot(ring, p.y()) - 0.3);
    ok += residual <= 3 * sigma;
  }
  CHECK(ok >= 0.99 * pc.size());
}

TEST_CASE("shape specs are validated") {
  CHECK_THROWS(validate(SyntheticShapeSpec{ShapeClass::sphere, -1, 1, 1, 0}));
  CHECK_THROWS(validate(SyntheticShapeSpec{ShapeClass::torus, 0.6, 0.7, 1, 0}));
  CHECK_THROWS(validate(SyntheticShapeSpec{ShapeClass::box, 1, 1, 1, -0.1}));
  for (ShapeClass c : kShapeClasses) CHECK(shape_class_from_name(shape_class_name(c)) == c);
}

TEST_CASE("PCPD round trip is bit exact") {
  testutil::TempDir dir("pcpd");
  Rng rng(4);
  PointCloud pc = generate_synthetic_object(random_shape_spec(ShapeClass::cone, 0.02, rng), 777, rng);
  pc.points = pc.points.cast<float>().cast<double>();
  pc.normals = pc.normals->cast<float>().cast<double>();
  write_pcpd(dir / "a.pcpd", pc);
  PointCloud back = read_pcpd(dir / "a.pcpd");
  CHECK(back.points.cast<float>() == pc.points.cast<float>());
  REQUIRE(back.has_normals());
  CHECK(back.normals->cast<float>() == pc.normals->cast<float>());

  std::string bytes = testutil::slurp(dir / "a.pcpd");
  CHECK(bytes.substr(0, 4) == "PCPD");
  CHECK(bytes.size() == 4 + 4 + 4 + 1 + 777 * 3 * 4 * 2);

  PointCloud bare;
  bare.points = pc.points;
  write_pcpd(dir / "b.pcpd", bare);
  CHECK_FALSE(read_pcpd(dir / "b.pcpd").has_normals());

  testutil::spit(dir / "bad.pcpd", "PCPX....");
  CHECK_THROWS_AS(read_pcpd(dir / "bad.pcpd"), FormatError);
  testutil::spit(dir / "short.pcpd", bytes.substr(0, 40));
  CHECK_THROWS_AS(read_pcpd(dir / "short.pcpd"), FormatError);
}

TEST_CASE("XYZ importer") {
  testutil::TempDir dir("xyz");
  testutil::spit(dir / "a.xyz", "0 0 0\n1 2 3\n# comment\n\n-1 0.5 2\n");
  PointCloud a = read_point_cloud(dir / "a.xyz");
  REQUIRE(a.size() == 3);
  CHECK(a.points.col(1) == Vec3(1, 2, 3));
  CHECK_FALSE(a.has_normals());

  testutil::spit(dir / "n.xyz", "0 0 0 0 0 2\n1 0 0 0 1 0\n");
  PointCloud n = read_xyz(dir / "n.xyz");
  REQUIRE(n.has_normals());
  CHECK(n.normals->col(0).isApprox(Vec3(0, 0, 1)));

  testutil::spit(dir / "mixed.xyz", "0 0 0\n1 2 3 0 0 1\n");
  CHECK_THROWS_AS(read_xyz(dir / "mixed.xyz"), FormatError);
  testutil::spit(dir / "junk.xyz", "a b c\n");
  CHECK_THROWS_AS(read_xyz(dir / "junk.xyz"), FormatError);
  CHECK_THROWS_AS(read_point_cloud(dir / "x.obj"), FormatError);
}

TEST_CASE("PNG round trip of quantized images") {
  testutil::TempDir dir("png");
  Image im(5, 7);
  Rng rng(5);
  for (float& f : im.data) f = static_cast<float>(rng.uniform());
  Image q = quantize8(im);
  write_png(dir / "a.png", im);
  CHECK(read_png(dir / "a.png") == q);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), ImageIoError);
}

TEST_CASE("synthetic build: balanced manifest and valid cameras") {
  testutil::TempDir dir("build100");
  BuildOptions o;
  o.seed = 11;
  BuildReport rep = build_synthetic_dataset(dir.path(), 100, o);
  CHECK(rep.objects_written == 100);
  CHECK(rep.skipped == 0);

  auto entries = read_manifest(dir / kManifestName);
  REQUIRE(entries.size() == 100);
  std::map<std::string, int> per_class;
  for (const auto& e : entries) {
    ++per_class[e.class_name];
    CHECK(e.n_points == 1024);
    int pngs = 0;
    for (const auto& f : fs::directory_iterator(dir.path() / e.views_dir)) pngs += f.path().extension() == ".png";
    CHECK(pngs == 20);
    auto poses = read_camera_json(dir.path() / e.views_dir / kCameraFileName);
    REQUIRE(poses.size() == 20);
    for (const auto& p : poses) {
      CHECK(rigid(p.m_view));
      CHECK(p.m_proj(3, 2) == -1.0);
    }
  }
  CHECK(per_class.size() == 5);
  for (const auto& [name, count] : per_class) CHECK(count == 20);

  auto line = testutil::slurp(dir / kManifestName);
  auto first = nlohmann::json::parse(line.substr(0, line.find('\n')));
  for (const char* key : {"object_id", "class", "cloud", "views_dir", "n_points"}) CHECK(first.contains(key));

  ValidationReport v = validate_dataset(dir.path());
  CHECK(v.ok());
  CHECK(v.objects_checked == 100);
}

TEST_CASE("synthetic build is deterministic under the seed") {
  testutil::TempDir a("det_a"), b("det_b");
  BuildOptions o;
  o.seed = 5;
  o.views = 3;
  build_synthetic_dataset(a.path(), 10, o);
  build_synthetic_dataset(b.path(), 10, o);
  CHECK(testutil::slurp(a / kManifestName) == testutil::slurp(b / kManifestName));
  for (const auto& e : read_manifest(a / kManifestName)) {
    CHECK(testutil::slurp(a.path() / e.cloud) == testutil::slurp(b.path() / e.cloud));
    CHECK(testutil::slurp(a.path() / e.views_dir / view_file_name(1)) ==
          testutil::slurp(b.path() / e.views_dir / view_file_name(1)));
  }
  o.seed = 6;
  testutil::TempDir c("det_c");
  build_synthetic_dataset(c.path(), 10, o);
  auto e0 = read_manifest(a / kManifestName)[0];
  CHECK(testutil::slurp(a.path() / e0.cloud) != testutil::slurp(c.path() / e0.cloud));
}

TEST_CASE("directory ingest skips malformed files and counts them") {
  testutil::TempDir src("ingest_src"), out("ingest_out");
  Rng rng(8);
  fs::create_directories(src.path() / "box");
  for (int k = 0; k < 3; ++k) {
    PointCloud pc = generate_synthetic_object(random_shape_spec(ShapeClass::box, 0.0, rng), 300, rng);
    write_pcpd(src.path() / "box" / ("b" + std::to_string(k) + ".pcpd"), pc);
  }
  fs::create_directories(src.path() / "torus");
  PointCloud t = generate_synthetic_object(random_shape_spec(ShapeClass::torus, 0.0, rng), 300, rng);
  std::string xyz;
  for (Eigen::Index c = 0; c < t.size(); ++c)
    xyz += std::to_string(t.points(0, c)) + " " + std::to_string(t.points(1, c)) + " " +
           std::to_string(t.points(2, c)) + "\n";
  testutil::spit(src.path() / "torus" / "t0.xyz", xyz);
  testutil::spit(src.path() / "torus" / "broken.xyz", "1 2\n");
  testutil::spit(src.path() / "box" / "broken.pcpd", "PCPD");

  BuildOptions o;
  o.views = 2;
  o.n_points = 256;
  BuildReport rep = build_dataset_from_directory(src.path(), out.path(), o);
  CHECK(rep.objects_written == 4);
  CHECK(rep.skipped == 2);
  auto report = nlohmann::json::parse(testutil::slurp(out / kBuildReportName));
  CHECK(report["skipped"] == 2);

  Dataset d = Dataset::load(out.path());
  REQUIRE(d.size() == 4);
  CHECK(d.class_names() == std::vector<std::string>{"box", "torus"});
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d.cloud(i).size() == 256);
    CHECK(d.view_count(i) == 2);
  }
}

TEST_CASE("sample_batch is deterministic without augmentation") {
  const Dataset& d = small_dataset();
  Rng a(9), b(9);
  Batch x = sample_batch(d, 4, 64, a, false);
  Batch y = sample_batch(d, 4, 64, b, false);
  CHECK(x.object_indices == y.object_indices);
  CHECK(x.view_ids == y.view_ids);
  CHECK(x.center_indices == y.center_indices);
  for (std::size_t s = 0; s < x.size(); ++s) {
    CHECK(x.clouds[s].points == y.clouds[s].points);
    CHECK(x.images[s] == y.images[s]);
    CHECK(x.patch_targets[s] == y.patch_targets[s]);
  }
  std::vector<std::size_t> sorted = x.object_indices;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  // The unit sphere slightly overfills the default frustum, so only silhouette
  // points may drop out, and exactly those that project out of frame.
  std::size_t valid = 0, total = 0;
  for (std::size_t s = 0; s < x.size(); ++s)
    for (std::size_t l = 0; l < 64; ++l) {
      Projection p = project_point(x.clouds[s].points.col(x.center_indices[s][l]), x.poses[s]);
      CHECK(x.valid_mask[s][l] == p.in_frame);
      valid += x.valid_mask[s][l], ++total;
    }
  CHECK(valid >= 0.9 * total);

  CHECK_THROWS(sample_batch(d, 11, 64, a, false));
}

TEST_CASE("batch targets match the reprojected centers") {
  const Dataset& d = small_dataset();
  Rng rng(10);
  int checked = 0;
  for (int rep = 0; rep < 5; ++rep) {
    Batch b = sample_batch(d, 8, 64, rng, true, BatchOptions{7, false});
    CHECK(b.images.empty());
    for (std::size_t s = 0; s < b.size(); ++s) {
      REQUIRE(b.center_indices[s].size() == 64);
      for (std::size_t l = 0; l < 64; ++l) {
        if (!b.valid_mask[s][l]) continue;
        Vec3 c = b.clouds[s].points.col(b.center_indices[s][l]);
        Vec4 clip = b.poses[s].m_proj * b.poses[s].m_view * Vec4(c.x(), c.y(), c.z(), 1);
        double u = (clip.x() / clip.w() + 1) / 2, v = (1 - clip.y() / clip.w()) / 2;
        int i = std::min(static_cast<int>(std::floor(u * 7)), 6);
        int j = std::min(static_cast<int>(std::floor(v * 7)), 6);
        CHECK(b.patch_targets[s][l] == PixelIndex{i, j, 7});
        ++checked;
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("view selection is uniform") {
  testutil::TempDir dir("one");
  BuildOptions o;
  o.n_points = 128;
  build_synthetic_dataset(dir.path(), 1, o);
  Dataset d = Dataset::load(dir.path());
  Rng rng(12);
  std::array<int, 20> hits{};
  const int draws = 20000;
  for (int t = 0; t < draws; ++t) {
    Batch b = sample_batch(d, 1, 1, rng, false, BatchOptions{7, false});
    ++hits[static_cast<std::size_t>(b.view_ids[0])];
  }
  for (int h : hits) {
    CHECK(h >= 0.04 * draws);
    CHECK(h <= 0.06 * draws);
  }
}

TEST_CASE("validation flags a corrupted dataset") {
  testutil::TempDir dir("corrupt");
  BuildOptions o;
  o.views = 2;
  build_synthetic_dataset(dir.path(), 5, o);
  auto e = read_manifest(dir / kManifestName)[2];
  testutil::spit(dir.path() / e.cloud, "garbage");
  ValidationReport v = validate_dataset(dir.path(), false);
  CHECK_FALSE(v.ok());
  CHECK(v.failures.size() == 1);
}

}
