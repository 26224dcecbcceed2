#include "picpoint/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace picpoint {

PointCloud normalize(const PointCloud& pc) {
  if (pc.size() < 1) throw GeometryError("empty point cloud");
  if (!pc.points.allFinite()) throw GeometryError("non-finite coordinates");
  const Vec3 centroid = pc.points.rowwise().mean();
  PointCloud out = pc;
  out.points = pc.points.colwise() - centroid;
  const double extent = out.points.colwise().norm().maxCoeff();
  if (!(extent > 1e-12 * (1.0 + centroid.norm()))) throw GeometryError("zero extent");
  out.points /= extent;
  return out;
}

std::vector<Vec3> dodecahedron_viewpoints(double radius) {
  if (!(radius > 0.0)) throw GeometryError("dodecahedron radius must be positive");
  const double phi = std::numbers::phi;
  const double inv = 1.0 / phi;
  std::vector<Vec3> raw;
  raw.reserve(20);
  for (double sx : {1.0, -1.0})
    for (double sy : {1.0, -1.0})
      for (double sz : {1.0, -1.0}) raw.emplace_back(sx, sy, sz);
  const std::array<std::pair<double, double>, 4> signs{{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};
  for (auto [a, b] : signs) raw.emplace_back(0.0, a * inv, b * phi);
  for (auto [a, b] : signs) raw.emplace_back(a * inv, b * phi, 0.0);
  for (auto [a, b] : signs) raw.emplace_back(a * phi, 0.0, b * inv);

  const double scale = radius / std::sqrt(3.0);
  for (Vec3& v : raw) v *= scale;
  return raw;
}

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 diff = target - eye;
  if (diff.norm() == 0.0) throw GeometryError("eye equals target");
  const Vec3 forward = diff.normalized();
  const Vec3 side_raw = forward.cross(up);
  if (side_raw.norm() <= 1e-9 * up.norm()) throw GeometryError("degenerate basis");
  const Vec3 side = side_raw.normalized();
  const Vec3 true_up = side.cross(forward);

  Mat4 view = Mat4::Identity();
  view.block<1, 3>(0, 0) = side.transpose();
  view.block<1, 3>(1, 0) = true_up.transpose();
  view.block<1, 3>(2, 0) = -forward.transpose();
  view.block<3, 1>(0, 3) = -view.block<3, 3>(0, 0) * eye;
  return view;
}

Mat4 perspective(double fov_y, double aspect, double near, double far) {
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw GeometryError("fov_y must be in (0, pi)");
  if (!(aspect > 0.0)) throw GeometryError("aspect must be positive");
  if (!(near > 0.0 && near < far)) throw GeometryError("require 0 < near < far");
  const double f = 1.0 / std::tan(fov_y / 2.0);
  Mat4 proj = Mat4::Zero();
  proj(0, 0) = f / aspect;
  proj(1, 1) = f;
  proj(2, 2) = (far + near) / (near - far);
  proj(2, 3) = 2.0 * far * near / (near - far);
  proj(3, 2) = -1.0;
  return proj;
}

namespace {

Projection finish_projection(const Vec4& clip, const Vec4& cam) {
  Projection p;
  const double ndc_x = clip.x() / clip.w();
  const double ndc_y = clip.y() / clip.w();
  p.u = (ndc_x + 1.0) / 2.0;
  p.v = (1.0 - ndc_y) / 2.0;
  p.depth = -cam.z();
  p.in_frame = p.u >= 0.0 && p.u <= 1.0 && p.v >= 0.0 && p.v <= 1.0;
  return p;
}

}  // namespace

Projection project_point(const Vec3& p, const CameraPose& pose) {
  const Vec4 cam = pose.m_view * p.homogeneous();
  const Vec4 clip = pose.m_proj * cam;
  if (!(clip.w() > 0.0)) throw GeometryError("behind camera");
  return finish_projection(clip, cam);
}

ProjectionBatch project_points(const Eigen::Matrix3Xd& points, const CameraPose& pose) {
  const Eigen::Index n = points.cols();
  const Eigen::Matrix4Xd cam = pose.m_view * points.colwise().homogeneous();
  const Eigen::Matrix4Xd clip = pose.m_proj * cam;
  ProjectionBatch out;
  out.projections.resize(static_cast<std::size_t>(n));
  out.in_front.assign(static_cast<std::size_t>(n), false);
  for (Eigen::Index c = 0; c < n; ++c) {
    if (!(clip(3, c) > 0.0)) continue;
    out.in_front[static_cast<std::size_t>(c)] = true;
    out.projections[static_cast<std::size_t>(c)] = finish_projection(clip.col(c), cam.col(c));
  }
  return out;
}

PixelIndex pixel_index(double u, double v, int grid) {
  if (grid < 1) throw GeometryError("grid must be positive");
  if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0))
    throw GeometryError("(u, v) outside [0, 1]^2");
  PixelIndex idx;
  idx.grid = grid;
  idx.i = std::min(static_cast<int>(std::floor(u * grid)), grid - 1);
  idx.j = std::min(static_cast<int>(std::floor(v * grid)), grid - 1);
  return idx;
}

std::vector<int> farthest_point_sampling(const PointCloud& pc, int count) {
  const int n = static_cast<int>(pc.size());
  if (count < 1) throw GeometryError("FPS count must be >= 1");
  if (count > n) throw GeometryError("FPS count exceeds cloud size");

  std::vector<double> min_dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(count));
  int current = 0;
  for (int step = 0; step < count; ++step) {
    order.push_back(current);
    chosen[static_cast<std::size_t>(current)] = 1;
    if (step + 1 == count) break;
    const Vec3 c = pc.points.col(current);
    int best = -1;
    double best_dist = -1.0;
    for (int p = 0; p < n; ++p) {
      const double d = (pc.points.col(p) - c).squaredNorm();
      double& md = min_dist[static_cast<std::size_t>(p)];
      if (d < md) md = d;
      if (!chosen[static_cast<std::size_t>(p)] && md > best_dist) {
        best_dist = md;
        best = p;
      }
    }
    current = best;
  }
  return order;
}

std::vector<std::vector<int>> knn_graph(const PointCloud& pc, int k) {
  const int n = static_cast<int>(pc.size());
  if (k < 1 || k >= n) throw GeometryError("knn requires 1 <= k < N");
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(n));
  std::vector<std::pair<double, int>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) {
    cand.clear();
    for (int b = 0; b < n; ++b) {
      if (b == a) continue;
      cand.emplace_back((pc.points.col(a) - pc.points.col(b)).squaredNorm(), b);
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    auto& row = rows[static_cast<std::size_t>(a)];
    row.reserve(static_cast<std::size_t>(k));
    for (int s = 0; s < k; ++s) row.push_back(cand[static_cast<std::size_t>(s)].second);
  }
  return rows;
}

Mat4 random_rotation(Rng& rng) {
  const double u1 = rng.uniform();
  const double u2 = rng.uniform();
  const double u3 = rng.uniform();
  const double two_pi = 2.0 * std::numbers::pi;
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  Eigen::Quaterniond q(b * std::cos(two_pi * u3), a * std::sin(two_pi * u2),
                       a * std::cos(two_pi * u2), b * std::sin(two_pi * u3));
  q.normalize();
  Mat4 r = Mat4::Identity();
  r.block<3, 3>(0, 0) = q.toRotationMatrix();
  return r;
}

CameraPose compose_rotation(const CameraPose& pose, const Mat4& rotation) {
  Mat4 inverse = Mat4::Identity();
  inverse.block<3, 3>(0, 0) = rotation.block<3, 3>(0, 0).transpose();
  CameraPose out = pose;
  out.m_view = pose.m_view * inverse;
  return out;
}

PointCloud rotate(const PointCloud& pc, const Mat4& rotation) {
  const Mat3 r = rotation.block<3, 3>(0, 0);
  PointCloud out = pc;
  out.points = r * pc.points;
  if (pc.normals) out.normals = r * *pc.normals;
  return out;
}

}  // namespace picpoint
