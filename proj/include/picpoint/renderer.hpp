#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "picpoint/geometry.hpp"
#include "picpoint/image.hpp"

namespace picpoint {

struct RenderedView {
  Image image;
  CameraPose pose;
  int view_id = 0;
};

struct RigConfig {
  double camera_distance = 2.2;
  double fov_y_degrees = 50.0;
  double near = 0.1;
  double far = 10.0;
  int height = 224;
  int width = 224;
  double splat_radius_px = 2.0;
};

/// Fixed 3-channel colormap for a scalar in [0, 1] (dark blue -> teal -> yellow).
std::array<float, 3> colormap(double t);

/// Point-splat renderer. Each point becomes a disc of radius splat_radius_px
/// around the pixel that contains its projection; points are painted farthest
/// first (ties by index) on a white background. Shading is a headlight
/// Lambertian term when normals exist, otherwise normalized depth.
RenderedView render_splat(const PointCloud& pc, const CameraPose& pose, int height, int width,
                          double splat_radius_px);

/// Camera pose for one dodecahedron vertex, looking at the origin.
/// Up is (0, 1, 0), falling back to (0, 0, 1) when the view direction is
/// parallel to it.
CameraPose rig_pose(const Vec3& eye, const RigConfig& rig);

std::vector<CameraPose> dodecahedron_rig(const RigConfig& rig);

/// One rendering per dodecahedron viewpoint, view_id in canonical vertex order.
std::vector<RenderedView> generate_views(const PointCloud& pc, const RigConfig& rig);

/// {"views":[{"view_id":k,"m_view":[16 row-major],"m_proj":[16 row-major]}]}
void write_camera_json(const std::filesystem::path& path, const std::vector<CameraPose>& poses);
std::vector<CameraPose> read_camera_json(const std::filesystem::path& path);

}  // namespace picpoint
