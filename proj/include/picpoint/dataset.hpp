#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "picpoint/geometry.hpp"
#include "picpoint/image.hpp"
#include "picpoint/renderer.hpp"

namespace picpoint {

namespace fs = std::filesystem;

/// One line of manifest.jsonl. Paths are relative to the dataset root.
struct ManifestEntry {
  std::string object_id;
  std::string class_name;
  std::string cloud;
  std::string views_dir;
  int n_points = 0;
};

struct BuildOptions {
  int views = 20;
  int n_points = 1024;
  std::uint64_t seed = 0;
  double jitter_sigma = 0.01;
  bool random_orientation = false;  // synthetic objects only
  RigConfig rig;
};

struct BuildReport {
  int objects_written = 0;
  int skipped = 0;
  std::vector<std::string> skipped_files;
};

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kBuildReportName = "build_report.json";
inline constexpr const char* kCameraFileName = "cameras.json";

std::string view_file_name(int view_id);

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const fs::path& path);

/// Class-balanced synthetic set: object k has class k mod 5.
BuildReport build_synthetic_dataset(const fs::path& out, int n_objects, const BuildOptions& options);

/// Ingests every *.pcpd / *.xyz / *.txt below `source`. The class is the name of
/// the containing directory ("unknown" at top level). A sibling directory
/// "<stem>_views" holding cameras.json and view_XX.png is copied as-is instead
/// of rendering. Unreadable files are skipped and listed in build_report.json.
BuildReport build_dataset_from_directory(const fs::path& source, const fs::path& out, const BuildOptions& options);

/// In-memory view of a built dataset: clouds and camera metadata are loaded
/// eagerly, images on demand.
class Dataset {
 public:
  static Dataset load(const fs::path& root);

  std::size_t size() const { return entries_.size(); }
  const fs::path& root() const { return root_; }
  const ManifestEntry& entry(std::size_t i) const { return entries_.at(i); }
  const PointCloud& cloud(std::size_t i) const { return clouds_.at(i); }
  const std::vector<CameraPose>& poses(std::size_t i) const { return poses_.at(i); }
  std::size_t view_count(std::size_t i) const { return poses_.at(i).size(); }
  Image load_view(std::size_t i, int view_id) const;

  const std::vector<std::string>& class_names() const { return class_names_; }
  int label(std::size_t i) const { return labels_.at(i); }
  std::ptrdiff_t find(const std::string& object_id) const;

 private:
  fs::path root_;
  std::vector<ManifestEntry> entries_;
  std::vector<PointCloud> clouds_;
  std::vector<std::vector<CameraPose>> poses_;
  std::vector<std::string> class_names_;
  std::vector<int> labels_;
};

struct Batch {
  std::vector<std::size_t> object_indices;
  std::vector<int> view_ids;
  std::vector<PointCloud> clouds;          // augmented when requested
  std::vector<Image> images;               // empty unless load_images
  std::vector<CameraPose> poses;           // composed with the augmentation
  std::vector<std::vector<int>> center_indices;
  std::vector<std::vector<PixelIndex>> patch_targets;
  std::vector<std::vector<bool>> valid_mask;

  std::size_t size() const { return clouds.size(); }
};

struct BatchOptions {
  int grid = 7;
  bool load_images = true;
};

/// Draws m distinct objects and one view each; optionally rotates the cloud and
/// composes the pose; FPS centers are projected to patch targets, with
/// out-of-frame or behind-camera centers masked out.
Batch sample_batch(const Dataset& data, int m, int centers, Rng& rng, bool augment,
                   const BatchOptions& options = {});

struct ValidationReport {
  std::size_t objects_checked = 0;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

/// Re-runs the on-disk invariants: clouds load and are normalized, normals are
/// unit length, camera files parse with orthonormal view rotations, and every
/// view image exists with values in range.
ValidationReport validate_dataset(const fs::path& root, bool check_images = true);

}  // namespace picpoint
