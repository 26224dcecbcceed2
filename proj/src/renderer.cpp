#include "picpoint/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"

namespace picpoint {

std::array<float, 3> colormap(double t) {
  static constexpr std::array<std::array<float, 3>, 4> anchors{{
      {0.16f, 0.07f, 0.40f},
      {0.13f, 0.45f, 0.56f},
      {0.37f, 0.79f, 0.38f},
      {0.99f, 0.91f, 0.15f},
  }};
  const double c = std::clamp(t, 0.0, 1.0) * 3.0;
  const int seg = std::min(static_cast<int>(c), 2);
  const float f = static_cast<float>(c - seg);
  std::array<float, 3> rgb{};
  for (int k = 0; k < 3; ++k) rgb[k] = anchors[seg][k] * (1.0f - f) + anchors[seg + 1][k] * f;
  return rgb;
}

RenderedView render_splat(const PointCloud& pc, const CameraPose& pose, int height, int width,
                          double splat_radius_px) {
  if (pc.size() < 1) throw GeometryError("cannot render an empty cloud");
  if (height < 1 || width < 1) throw GeometryError("image size must be positive");

  RenderedView view;
  view.pose = pose;
  view.image = Image(height, width, 1.0f);

  const ProjectionBatch proj = project_points(pc.points, pose);
  const auto n = static_cast<std::size_t>(pc.size());

  std::vector<int> order;
  order.reserve(n);
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -dmin;
  for (std::size_t p = 0; p < n; ++p) {
    if (!proj.in_front[p]) continue;
    order.push_back(static_cast<int>(p));
    dmin = std::min(dmin, proj.projections[p].depth);
    dmax = std::max(dmax, proj.projections[p].depth);
  }
  // Farthest first; stable so equal depths keep index order.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return proj.projections[static_cast<std::size_t>(a)].depth >
           proj.projections[static_cast<std::size_t>(b)].depth;
  });

  const Mat3 view_rot = pose.m_view.block<3, 3>(0, 0);
  const int reach = static_cast<int>(std::floor(splat_radius_px));
  const double r2 = splat_radius_px * splat_radius_px;
  const double span = dmax - dmin;

  for (int p : order) {
    const Projection& pr = proj.projections[static_cast<std::size_t>(p)];
    double shade;
    if (pc.normals) {
      const Vec3 n_cam = view_rot * pc.normals->col(p);
      shade = 0.25 + 0.75 * std::abs(n_cam.z());
    } else {
      shade = span > 0.0 ? 1.0 - (pr.depth - dmin) / span : 1.0;
    }
    const auto rgb = colormap(shade);
    const double px = std::floor(pr.u * width);
    const double py = std::floor(pr.v * height);
    if (!std::isfinite(px) || !std::isfinite(py)) continue;
    const long cx = static_cast<long>(px);
    const long cy = static_cast<long>(py);
    for (long dy = -reach; dy <= reach; ++dy) {
      const long y = cy + dy;
      if (y < 0 || y >= height) continue;
      for (long dx = -reach; dx <= reach; ++dx) {
        const long x = cx + dx;
        if (x < 0 || x >= width) continue;
        if (static_cast<double>(dx * dx + dy * dy) > r2) continue;
        for (int c = 0; c < 3; ++c) view.image.at(static_cast<int>(y), static_cast<int>(x), c) = rgb[c];
      }
    }
  }
  return view;
}

CameraPose rig_pose(const Vec3& eye, const RigConfig& rig) {
  const Vec3 forward = (-eye).normalized();
  Vec3 up(0.0, 1.0, 0.0);
  if (std::abs(forward.dot(up)) > 1.0 - 1e-6) up = Vec3(0.0, 0.0, 1.0);
  CameraPose pose;
  pose.m_view = look_at(eye, Vec3::Zero(), up);
  pose.m_proj = perspective(rig.fov_y_degrees * std::numbers::pi / 180.0,
                            static_cast<double>(rig.width) / rig.height, rig.near, rig.far);
  return pose;
}

std::vector<CameraPose> dodecahedron_rig(const RigConfig& rig) {
  std::vector<CameraPose> poses;
  for (const Vec3& eye : dodecahedron_viewpoints(rig.camera_distance)) poses.push_back(rig_pose(eye, rig));
  return poses;
}

std::vector<RenderedView> generate_views(const PointCloud& pc, const RigConfig& rig) {
  const auto poses = dodecahedron_rig(rig);
  std::vector<RenderedView> views(poses.size());
#pragma omp parallel for schedule(static)
  for (int v = 0; v < static_cast<int>(poses.size()); ++v) {
    views[static_cast<std::size_t>(v)] =
        render_splat(pc, poses[static_cast<std::size_t>(v)], rig.height, rig.width, rig.splat_radius_px);
    views[static_cast<std::size_t>(v)].view_id = v;
  }
  return views;
}

namespace {

nlohmann::json matrix_to_json(const Mat4& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) arr.push_back(m(r, c));
  return arr;
}

Mat4 matrix_from_json(const nlohmann::json& arr) {
  if (!arr.is_array() || arr.size() != 16) throw std::runtime_error("camera matrix must have 16 entries");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = arr.at(static_cast<std::size_t>(r * 4 + c)).get<double>();
  return m;
}

}  // namespace

void write_camera_json(const std::filesystem::path& path, const std::vector<CameraPose>& poses) {
  nlohmann::json doc;
  doc["views"] = nlohmann::json::array();
  for (std::size_t k = 0; k < poses.size(); ++k) {
    doc["views"].push_back({{"view_id", k},
                            {"m_view", matrix_to_json(poses[k].m_view)},
                            {"m_proj", matrix_to_json(poses[k].m_proj)}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write camera metadata: " + path.string());
  out << doc.dump() << '\n';
}

std::vector<CameraPose> read_camera_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read camera metadata: " + path.string());
  const nlohmann::json doc = nlohmann::json::parse(in);
  const auto& views = doc.at("views");
  std::vector<CameraPose> poses(views.size());
  std::vector<bool> seen(views.size(), false);
  for (const auto& v : views) {
    const auto id = v.at("view_id").get<std::size_t>();
    if (id >= poses.size() || seen[id]) throw std::runtime_error("bad view_id in " + path.string());
    seen[id] = true;
    poses[id].m_view = matrix_from_json(v.at("m_view"));
    poses[id].m_proj = matrix_from_json(v.at("m_proj"));
  }
  return poses;
}

}  // namespace picpoint
