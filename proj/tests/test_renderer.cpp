#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "picpoint/geometry.hpp"
#include "picpoint/renderer.hpp"
#include "picpoint/rng.hpp"
#include "picpoint/synthetic.hpp"
#include "test_util.hpp"

using namespace picpoint;

namespace {

CameraPose front_pose() { return rig_pose(Vec3(0, 0, 2.2), RigConfig{}); }

PointCloud single(const Vec3& p) {
  PointCloud pc;
  pc.points = p;
  return pc;
}

bool is_background(const Image& im, int y, int x) {
  return im.at(y, x, 0) == 1.0f && im.at(y, x, 1) == 1.0f && im.at(y, x, 2) == 1.0f;
}

}  // namespace

TEST_SUITE("renderer") {

TEST_CASE("single point at the origin splats at the image center") {
  RenderedView v = render_splat(single(Vec3::Zero()), front_pose(), 224, 224, 2.0);
  int y0 = 224, y1 = -1, x0 = 224, x1 = -1;
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      if (!is_background(v.image, y, x)) {
        y0 = std::min(y0, y), y1 = std::max(y1, y);
        x0 = std::min(x0, x), x1 = std::max(x1, x);
      }
  REQUIRE(y1 >= 0);
  CHECK(std::abs((x0 + x1) / 2.0 - 112) <= 2.0);
  CHECK(std::abs((y0 + y1) / 2.0 - 112) <= 2.0);
  CHECK(x1 - x0 <= 4);
  for (float f : v.image.data) CHECK((f >= 0.0f && f <= 1.0f));
}

TEST_CASE("splat patch agrees with the mapping pipeline") {
  Rng rng(31);
  const CameraPose pose = front_pose();
  int agree = 0;
  for (int t = 0; t < 100; ++t) {
    Vec3 p;
    do p = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    while (p.norm() > 0.5);
    RenderedView v = render_splat(single(p), pose, 224, 224, 2.0);
    double sx = 0, sy = 0;
    int count = 0;
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x)
        if (!is_background(v.image, y, x)) sx += x + 0.5, sy += y + 0.5, ++count;
    REQUIRE(count > 0);
    PixelIndex from_image = pixel_index(sx / count / 224.0, sy / count / 224.0, 7);
    Projection pr = project_point(p, pose);
    agree += from_image == pixel_index(pr.u, pr.v, 7);
  }
  CHECK(agree == 100);
}

TEST_CASE("rendering is deterministic") {
  Rng rng(2);
  PointCloud pc = normalize(generate_synthetic_object(random_shape_spec(ShapeClass::torus, 0.01, rng), 1024, rng));
  RenderedView a = render_splat(pc, front_pose(), 224, 224, 2.0);
  RenderedView b = render_splat(pc, front_pose(), 224, 224, 2.0);
  CHECK(a.image == b.image);
  PointCloud empty;
  empty.points.resize(3, 0);
  CHECK_THROWS_AS(render_splat(empty, front_pose(), 224, 224, 2.0), GeometryError);
}

TEST_CASE("nearer point wins on a shared ray in either order") {
  const CameraPose pose = front_pose();
  Vec3 near(0, 0, 0.5), far(0, 0, -0.5);
  PointCloud ab, ba;
  ab.points.resize(3, 2);
  ab.points << near, far;
  ba.points.resize(3, 2);
  ba.points << far, near;
  Image ia = render_splat(ab, pose, 224, 224, 2.0).image;
  Image ib = render_splat(ba, pose, 224, 224, 2.0).image;
  Projection pr = project_point(near, pose);
  int x = static_cast<int>(std::floor(pr.u * 224)), y = static_cast<int>(std::floor(pr.v * 224));
  auto nearest = colormap(1.0);  // depth shading: nearest point maps to the top of the colormap
  for (int c = 0; c < 3; ++c) {
    CHECK(ia.at(y, x, c) == nearest[c]);
    CHECK(ib.at(y, x, c) == nearest[c]);
  }
  CHECK(ia == ib);
}

TEST_CASE("generate_views covers the dodecahedron rig") {
  Rng rng(4);
  SyntheticShapeSpec sphere{ShapeClass::sphere, 1.0, 1.0, 1.0, 0.0};
  PointCloud pc = normalize(generate_synthetic_object(sphere, 1024, rng));
  RigConfig rig;
  auto views = generate_views(pc, rig);
  REQUIRE(views.size() == 20);
  auto eyes = dodecahedron_viewpoints(rig.camera_distance);
  int lo = 224 * 224, hi = 0;
  for (int k = 0; k < 20; ++k) {
    CHECK(views[k].view_id == k);
    Vec4 e = views[k].pose.m_view * Vec4(eyes[k].x(), eyes[k].y(), eyes[k].z(), 1);
    CHECK(e.head<3>().norm() <= 1e-9);
    int fg = 0;
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x) fg += !is_background(views[k].image, y, x);
    lo = std::min(lo, fg), hi = std::max(hi, fg);
  }
  CHECK(lo > 0);
  CHECK((hi - lo) < 0.2 * hi);
}

TEST_CASE("pole viewpoints use the fallback up vector") {
  CameraPose top = rig_pose(Vec3(0, 2.2, 0), RigConfig{});
  Vec4 o = top.m_view * Vec4(0, 0, 0, 1);
  CHECK(std::abs(o.z() + 2.2) <= 1e-9);
  CHECK(top.m_view.allFinite());
}

TEST_CASE("camera JSON round trip") {
  testutil::TempDir dir("cam");
  auto poses = dodecahedron_rig(RigConfig{});
  write_camera_json(dir / "cameras.json", poses);
  auto back = read_camera_json(dir / "cameras.json");
  REQUIRE(back.size() == poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    CHECK(back[k].m_view == poses[k].m_view);
    CHECK(back[k].m_proj == poses[k].m_proj);
  }
  auto j = nlohmann::json::parse(testutil::slurp(dir / "cameras.json"));
  REQUIRE(j["views"].size() == 20);
  CHECK(j["views"][3]["view_id"] == 3);
  CHECK(j["views"][3]["m_view"].size() == 16);
  CHECK(j["views"][3]["m_proj"].size() == 16);
}

TEST_CASE("colormap stays in the unit cube") {
  for (int k = 0; k <= 100; ++k) {
    auto c = colormap(k / 100.0);
    for (float f : c) CHECK((f >= 0.0f && f <= 1.0f));
  }
}

}
