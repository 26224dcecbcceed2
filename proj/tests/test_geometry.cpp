#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "picpoint/geometry.hpp"
#include "picpoint/rng.hpp"

using namespace picpoint;

namespace {

PointCloud cloud_of(std::initializer_list<Vec3> pts) {
  PointCloud pc;
  pc.points.resize(3, static_cast<Eigen::Index>(pts.size()));
  int c = 0;
  for (const auto& p : pts) pc.points.col(c++) = p;
  return pc;
}

PointCloud random_cloud(int n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud pc;
  pc.points.resize(3, n);
  for (int c = 0; c < n; ++c)
    for (int r = 0; r < 3; ++r) pc.points(r, c) = rng.uniform(-3.0, 5.0);
  return pc;
}

CameraPose front_camera() {
  CameraPose pose;
  pose.m_view = look_at(Vec3(0, 0, 2.2), Vec3::Zero(), Vec3(0, 1, 0));
  pose.m_proj = perspective(50.0 * std::numbers::pi / 180.0, 1.0, 0.1, 10.0);
  return pose;
}

// Step-by-step homogeneous projection, kept separate from the library path.
Projection oracle_project(const Vec3& p, const CameraPose& pose) {
  Vec4 h(p.x(), p.y(), p.z(), 1.0);
  Vec4 cam = pose.m_view * h;
  Vec4 clip = pose.m_proj * cam;
  double ndc_x = clip.x() / clip.w();
  double ndc_y = clip.y() / clip.w();
  Projection out;
  out.u = (ndc_x + 1.0) / 2.0;
  out.v = (1.0 - ndc_y) / 2.0;
  out.depth = -cam.z();
  out.in_frame = out.u >= 0 && out.u <= 1 && out.v >= 0 && out.v <= 1;
  return out;
}

Vec3 random_in_frustum(Rng& rng) {
  // Inside a cone well within the 50 degree field of view of front_camera.
  double depth = rng.uniform(0.5, 4.0);
  double half = depth * std::tan(20.0 * std::numbers::pi / 180.0);
  return Vec3(rng.uniform(-half, half), rng.uniform(-half, half), 2.2 - depth);
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("normalize centers and scales a segment") {
  PointCloud out = normalize(cloud_of({Vec3(1, 1, 1), Vec3(3, 1, 1)}));
  CHECK(out.points.col(0).isApprox(Vec3(-1, 0, 0)));
  CHECK(out.points.col(1).isApprox(Vec3(1, 0, 0)));
}

TEST_CASE("normalize is idempotent") {
  PointCloud once = normalize(random_cloud(200, 3));
  PointCloud twice = normalize(once);
  CHECK((once.points - twice.points).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("normalize output has zero centroid and unit extent") {
  PointCloud out = normalize(random_cloud(1024, 4));
  Vec3 centroid = Vec3::Zero();
  double extent = 0;
  for (Eigen::Index c = 0; c < out.size(); ++c) centroid += out.points.col(c);
  centroid /= static_cast<double>(out.size());
  for (Eigen::Index c = 0; c < out.size(); ++c) extent = std::max(extent, out.points.col(c).norm());
  CHECK(centroid.norm() < 1e-6);
  CHECK(std::abs(extent - 1.0) <= 1e-6);
}

TEST_CASE("normalize carries normals and rejects degenerate clouds") {
  PointCloud pc = random_cloud(10, 5);
  pc.normals = Eigen::Matrix3Xd::Zero(3, 10);
  pc.normals->row(2).setOnes();
  PointCloud out = normalize(pc);
  REQUIRE(out.has_normals());
  CHECK(*out.normals == *pc.normals);

  CHECK_THROWS_WITH_AS(normalize(cloud_of({Vec3(1, 2, 3), Vec3(1, 2, 3)})), "zero extent", GeometryError);
  CHECK_THROWS_AS(normalize(PointCloud{}), GeometryError);
}

TEST_CASE("dodecahedron viewpoints") {
  auto v = dodecahedron_viewpoints(std::sqrt(3.0));
  REQUIRE(v.size() == 20);
  CHECK(std::any_of(v.begin(), v.end(), [](const Vec3& p) { return p == Vec3(1, 1, 1); }));

  auto w = dodecahedron_viewpoints(2.5);
  for (const auto& p : w) CHECK(std::abs(p.norm() - 2.5) <= 1e-9);

  // Nearest-neighbor angle over all pairs.
  double min_angle = 180;
  for (std::size_t a = 0; a < w.size(); ++a)
    for (std::size_t b = a + 1; b < w.size(); ++b) {
      double c = w[a].dot(w[b]) / (w[a].norm() * w[b].norm());
      min_angle = std::min(min_angle, std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / std::numbers::pi);
    }
  CHECK(min_angle == doctest::Approx(41.81).epsilon(1e-4));

  // Closed under sign flips: every vertex has its negation in the set.
  for (const auto& p : w)
    CHECK(std::any_of(w.begin(), w.end(), [&](const Vec3& q) { return (p + q).norm() < 1e-12; }));

  CHECK_THROWS_AS(dodecahedron_viewpoints(0.0), GeometryError);
  CHECK_THROWS_AS(dodecahedron_viewpoints(-1.0), GeometryError);
}

TEST_CASE("look_at") {
  Mat4 m = look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3(0, 1, 0));
  Vec4 o = m * Vec4(0, 0, 0, 1);
  CHECK(o.head<3>().isApprox(Vec3(0, 0, -2)));

  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    Vec3 eye(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
    Vec3 target(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    Mat4 v = look_at(eye, target, Vec3(0, 1, 0));
    Mat3 r = v.topLeftCorner<3, 3>();
    CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
    Vec4 back = v.inverse() * Vec4(0, 0, 0, 1);
    CHECK((back.head<3>() - eye).cwiseAbs().maxCoeff() <= 1e-9);
    Vec4 fwd = v * Vec4(target.x(), target.y(), target.z(), 1);
    CHECK(fwd.z() < 0);
    CHECK(std::abs(fwd.x()) < 1e-9);
    CHECK(std::abs(fwd.y()) < 1e-9);
  }
  CHECK_THROWS_WITH_AS(look_at(Vec3(0, 2, 0), Vec3::Zero(), Vec3(0, 1, 0)), "degenerate basis", GeometryError);
  CHECK_THROWS_AS(look_at(Vec3(1, 1, 1), Vec3(1, 1, 1), Vec3(0, 1, 0)), GeometryError);
}

TEST_CASE("perspective") {
  const double near = 0.1, far = 10.0, fov = 0.8;
  Mat4 p = perspective(fov, 1.0, near, far);
  Vec4 axial = p * Vec4(0, 0, -(near + far) / 2, 1);
  CHECK(axial.x() / axial.w() == 0.0);
  CHECK(axial.y() / axial.w() == 0.0);

  Vec4 top = p * Vec4(0, near * std::tan(fov / 2), -near, 1);
  CHECK(std::abs(top.y() / top.w() - 1.0) <= 1e-9);
  CHECK(std::abs(top.z() / top.w() + 1.0) <= 1e-9);

  Vec4 a = p * Vec4(0.3, 0.1, -2, 1);
  Vec4 b = p * Vec4(-0.3, 0.1, -2, 1);
  CHECK(a.x() / a.w() == -(b.x() / b.w()));

  CHECK_THROWS_AS(perspective(0.0, 1.0, 0.1, 1.0), GeometryError);
  CHECK_THROWS_AS(perspective(std::numbers::pi, 1.0, 0.1, 1.0), GeometryError);
  CHECK_THROWS_AS(perspective(1.0, 1.0, 0.0, 1.0), GeometryError);
  CHECK_THROWS_AS(perspective(1.0, 1.0, 2.0, 1.0), GeometryError);
  CHECK_THROWS_AS(perspective(1.0, 0.0, 0.1, 1.0), GeometryError);
}

TEST_CASE("project_point") {
  CameraPose pose = front_camera();
  Projection c = project_point(Vec3::Zero(), pose);
  CHECK(std::abs(c.u - 0.5) <= 1e-9);
  CHECK(std::abs(c.v - 0.5) <= 1e-9);
  CHECK(std::abs(c.depth - 2.2) <= 1e-9);
  CHECK(c.in_frame);

  // v grows downward: a point above the axis projects to the upper half.
  CHECK(project_point(Vec3(0, 0.3, 0), pose).v < 0.5);
  CHECK(project_point(Vec3(0.3, 0, 0), pose).u > 0.5);

  Rng rng(21);
  Eigen::Matrix3Xd pts(3, 1000);
  for (int t = 0; t < 1000; ++t) pts.col(t) = random_in_frustum(rng);
  ProjectionBatch batch = project_points(pts, pose);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    Projection o = oracle_project(pts.col(t), pose);
    Projection s = project_point(pts.col(t), pose);
    REQUIRE(batch.in_front[t]);
    const Projection& b = batch.projections[t];
    worst = std::max({worst, std::abs(o.u - s.u), std::abs(o.v - s.v), std::abs(o.depth - s.depth),
                      std::abs(o.u - b.u), std::abs(o.v - b.v)});
    CHECK(o.in_frame == s.in_frame);
  }
  CHECK(worst <= 1e-9);

  Projection off = project_point(Vec3(5, 0, 1.5), pose);
  CHECK_FALSE(off.in_frame);
  CHECK_THROWS_WITH_AS(project_point(Vec3(0, 0, 3), pose), "behind camera", GeometryError);
  ProjectionBatch behind = project_points(Eigen::Matrix3Xd(Vec3(0, 0, 3)), pose);
  CHECK_FALSE(behind.in_front[0]);
}

TEST_CASE("pixel_index") {
  CHECK(pixel_index(0.5, 0.5, 7) == PixelIndex{3, 3, 7});
  CHECK(pixel_index(1.0, 1.0, 7) == PixelIndex{6, 6, 7});
  CHECK(pixel_index(0.142, 0.999, 7) == PixelIndex{0, 6, 7});
  CHECK(pixel_index(0.0, 0.0).flat() == 0);
  CHECK(pixel_index(0.99, 0.0).flat() == 6);
  CHECK(pixel_index(0.0, 0.99).flat() == 42);

  int mismatches = 0;
  for (int a = 0; a <= 1000; ++a)
    for (int b = 0; b <= 1000; ++b) {
      double u = a / 1000.0, v = b / 1000.0;
      int oi = std::min(static_cast<int>(std::floor(u * 7)), 6);
      int oj = std::min(static_cast<int>(std::floor(v * 7)), 6);
      PixelIndex p = pixel_index(u, v, 7);
      mismatches += (p.i != oi || p.j != oj);
    }
  CHECK(mismatches == 0);

  CHECK_THROWS_AS(pixel_index(-0.01, 0.5), GeometryError);
  CHECK_THROWS_AS(pixel_index(0.5, 1.01), GeometryError);
}

TEST_CASE("farthest_point_sampling") {
  PointCloud pc = random_cloud(50, 6);
  auto all = farthest_point_sampling(pc, 50);
  std::vector<int> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> iota(50);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  CHECK(all.front() == 0);

  CHECK(farthest_point_sampling(pc, 1) == std::vector<int>{0});

  // Seeded at a corner, FPS lands on the brute-force optimum over all
  // size-4 subsets of corners and center.
  PointCloud corners_first = cloud_of({Vec3(0, 0, 0), Vec3(0.5, 0.5, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)});
  auto pick2 = farthest_point_sampling(corners_first, 4);
  std::sort(pick2.begin(), pick2.end());
  CHECK(pick2 == std::vector<int>{0, 2, 3, 4});
  double best = 0;
  std::vector<int> best_set;
  for (int skip = 0; skip < 5; ++skip) {
    std::vector<int> s;
    for (int q = 0; q < 5; ++q)
      if (q != skip) s.push_back(q);
    double m = 1e9;
    for (int a : s)
      for (int b : s)
        if (a < b) m = std::min(m, (corners_first.points.col(a) - corners_first.points.col(b)).norm());
    if (m > best) best = m, best_set = s;
  }
  CHECK(best_set == pick2);

  CHECK(farthest_point_sampling(pc, 17) == farthest_point_sampling(pc, 17));
  CHECK_THROWS_AS(farthest_point_sampling(pc, 51), GeometryError);
  CHECK_THROWS_AS(farthest_point_sampling(pc, 0), GeometryError);
}

TEST_CASE("knn_graph") {
  PointCloud line = cloud_of({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)});
  auto g = knn_graph(line, 1);
  CHECK(g[1] == std::vector<int>{0});
  CHECK(g[0] == std::vector<int>{1});
  CHECK(g[2] == std::vector<int>{1});

  PointCloud pc = random_cloud(64, 8);
  auto knn = knn_graph(pc, 8);
  for (int n = 0; n < 64; ++n) {
    std::vector<std::pair<double, int>> d;
    for (int m = 0; m < 64; ++m)
      if (m != n) d.push_back({(pc.points.col(n) - pc.points.col(m)).squaredNorm(), m});
    std::sort(d.begin(), d.end());
    std::vector<int> want;
    for (int t = 0; t < 8; ++t) want.push_back(d[t].second);
    CHECK(knn[n] == want);
  }

  PointCloud dup = cloud_of({Vec3(0, 0, 0), Vec3(5, 5, 5), Vec3(5, 5, 5), Vec3(1, 0, 0)});
  auto gd = knn_graph(dup, 2);
  CHECK(gd[1][0] == 2);
  CHECK(gd[2][0] == 1);

  CHECK_THROWS_AS(knn_graph(line, 3), GeometryError);
}

TEST_CASE("random_rotation") {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    Mat4 r = random_rotation(rng);
    Mat3 q = r.topLeftCorner<3, 3>();
    CHECK((q.transpose() * q - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(std::abs(q.determinant() - 1.0) <= 1e-9);
    CHECK(r.row(3) == Vec4(0, 0, 0, 1).transpose());
  }
  Rng a(77), b(77);
  CHECK(random_rotation(a) == random_rotation(b));

  Rng u(5);
  Vec3 mean = Vec3::Zero();
  for (int t = 0; t < 10000; ++t) mean += random_rotation(u).topLeftCorner<3, 3>() * Vec3(0, 0, 1);
  CHECK((mean / 10000.0).norm() < 0.05);
}

TEST_CASE("compose_rotation keeps projections") {
  CameraPose pose = front_camera();
  CameraPose same = compose_rotation(pose, Mat4::Identity());
  CHECK((same.m_view - pose.m_view).cwiseAbs().maxCoeff() == 0.0);
  CHECK(same.m_proj == pose.m_proj);

  Rng rng(12);
  double worst = 0;
  for (int t = 0; t < 10000; ++t) {
    Mat4 r = random_rotation(rng);
    Vec3 p = random_in_frustum(rng);
    Vec3 rp = r.topLeftCorner<3, 3>() * p;
    Projection a = project_point(p, pose);
    Projection b = project_point(rp, compose_rotation(pose, r));
    worst = std::max({worst, std::abs(a.u - b.u), std::abs(a.v - b.v)});
  }
  CHECK(worst <= 1e-9);

  Mat4 r1 = random_rotation(rng), r2 = random_rotation(rng);
  CameraPose two = compose_rotation(compose_rotation(pose, r1), r2);
  CameraPose one = compose_rotation(pose, r2 * r1);
  CHECK((two.m_view - one.m_view).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("rotate moves points and normals together") {
  PointCloud pc = random_cloud(20, 14);
  pc.normals = Eigen::Matrix3Xd::Random(3, 20).colwise().normalized();
  Rng rng(3);
  Mat4 r = random_rotation(rng);
  PointCloud out = rotate(pc, r);
  Mat3 q = r.topLeftCorner<3, 3>();
  CHECK((out.points - q * pc.points).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((*out.normals - q * *pc.normals).cwiseAbs().maxCoeff() <= 1e-12);
}

}
