#pragma once

#include <filesystem>
#include <stdexcept>

#include "picpoint/geometry.hpp"

namespace picpoint {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary point cloud file, little-endian:
///   "PCPD" | u32 version (=1) | u32 N | u8 has_normals |
///   N x 3 fp32 points | [N x 3 fp32 normals]
/// Coordinates are stored as fp32; in-memory values are the exact widening.
void write_pcpd(const std::filesystem::path& path, const PointCloud& pc);
PointCloud read_pcpd(const std::filesystem::path& path);

/// Text importer: one "x y z [nx ny nz]" per line, '#' comments allowed.
PointCloud read_xyz(const std::filesystem::path& path);

/// Dispatches on extension (.pcpd or .xyz/.txt).
PointCloud read_point_cloud(const std::filesystem::path& path);

}  // namespace picpoint
