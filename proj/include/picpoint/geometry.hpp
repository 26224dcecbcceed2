#pragma once

// Camera conventions used throughout the project:
//  - column vectors, right-handed world, camera looks down -z;
//  - clip = m_proj * m_view * (p, 1); NDC = clip.xy / clip.w in [-1, 1]^2,
//    a point at camera depth -near maps to NDC z = -1;
//  - image coordinates u = (ndc_x + 1) / 2 to the right and
//    v = (1 - ndc_y) / 2 downward from the top-left corner.

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <stdexcept>
#include <vector>

#include "picpoint/rng.hpp"

namespace picpoint {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PointCloud {
  Eigen::Matrix3Xd points;                  // one point per column
  std::optional<Eigen::Matrix3Xd> normals;  // unit normals, same layout
  std::optional<int> label;

  Eigen::Index size() const { return points.cols(); }
  bool has_normals() const { return normals.has_value(); }
};

struct CameraPose {
  Mat4 m_view = Mat4::Identity();  // world -> camera
  Mat4 m_proj = Mat4::Identity();  // camera -> clip
};

/// Feature-grid cell. `i` follows the horizontal image axis (from u) and `j`
/// the vertical one (from v); the flat cell id is j * grid + i.
struct PixelIndex {
  int i = 0;
  int j = 0;
  int grid = 7;

  int flat() const { return j * grid + i; }
  bool operator==(const PixelIndex&) const = default;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // camera-space -z
  bool in_frame = false;
};

/// Centers at the origin and scales so the farthest point has norm 1.
PointCloud normalize(const PointCloud& pc);

/// Regular dodecahedron vertices scaled to `radius`. Order: the cube vertices
/// (+-1, +-1, +-1) with x, then y, then z sign iterating "+ before -", followed
/// by (0, +-1/phi, +-phi), (+-1/phi, +-phi, 0) and (+-phi, 0, +-1/phi), each
/// group in sign order (+,+), (+,-), (-,+), (-,-).
std::vector<Vec3> dodecahedron_viewpoints(double radius);

Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

/// OpenGL-style perspective frustum.
Mat4 perspective(double fov_y, double aspect, double near, double far);

/// Throws GeometryError("behind camera") when clip.w <= 0. Points outside the
/// frame are returned with in_frame = false.
Projection project_point(const Vec3& p, const CameraPose& pose);

struct ProjectionBatch {
  std::vector<Projection> projections;
  std::vector<bool> in_front;  // false: behind camera, projection undefined
};

/// Batched projection of every column of `points`; never throws for points
/// behind the camera, it flags them instead.
ProjectionBatch project_points(const Eigen::Matrix3Xd& points, const CameraPose& pose);

/// Floor-and-clamp mapping of (u, v) in [0, 1]^2 onto a grid x grid lattice.
PixelIndex pixel_index(double u, double v, int grid = 7);

/// Greedy farthest point sampling seeded at index 0; ties go to the lowest index.
std::vector<int> farthest_point_sampling(const PointCloud& pc, int count);

/// Row n lists the k nearest other points to n, nearest first, ties by index.
std::vector<std::vector<int>> knn_graph(const PointCloud& pc, int k);

/// Uniform random rotation (Shoemake quaternion), homogeneous 4x4.
Mat4 random_rotation(Rng& rng);

/// Pose whose view matrix is m_view * R^-1, so projecting R p through the
/// result equals projecting p through `pose`.
CameraPose compose_rotation(const CameraPose& pose, const Mat4& rotation);

/// Applies a homogeneous rotation to points and normals.
PointCloud rotate(const PointCloud& pc, const Mat4& rotation);

}  // namespace picpoint
