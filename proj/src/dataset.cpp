#include "picpoint/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>

#include "json.hpp"
#include "picpoint/pointcloud_io.hpp"
#include "picpoint/synthetic.hpp"

namespace picpoint {

using ojson = nlohmann::ordered_json;

std::string view_file_name(int view_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "view_%02d.png", view_id);
  return buf;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  for (const auto& e : entries) {
    ojson line;
    line["object_id"] = e.object_id;
    line["class"] = e.class_name;
    line["cloud"] = e.cloud;
    line["views_dir"] = e.views_dir;
    line["n_points"] = e.n_points;
    out << line.dump() << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest: " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.object_id = j.at("object_id").get<std::string>();
      e.class_name = j.at("class").get<std::string>();
      e.cloud = j.at("cloud").get<std::string>();
      e.views_dir = j.at("views_dir").get<std::string>();
      e.n_points = j.at("n_points").get<int>();
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return entries;
}

namespace {

void write_report(const fs::path& out, const BuildReport& report) {
  ojson j;
  j["objects"] = report.objects_written;
  j["skipped"] = report.skipped;
  j["skipped_files"] = report.skipped_files;
  std::ofstream f(out / kBuildReportName, std::ios::trunc);
  f << j.dump(2) << '\n';
}

// Renders and stores one normalized cloud; returns its manifest entry.
ManifestEntry emit_object(const fs::path& out, const std::string& object_id, const std::string& class_name,
                          const PointCloud& cloud, const BuildOptions& options,
                          const std::optional<fs::path>& external_views) {
  const fs::path cloud_rel = fs::path("clouds") / (object_id + ".pcpd");
  const fs::path views_rel = fs::path("views") / object_id;
  write_pcpd(out / cloud_rel, cloud);
  fs::create_directories(out / views_rel);
  if (external_views) {
    const auto poses = read_camera_json(*external_views / kCameraFileName);
    for (std::size_t v = 0; v < poses.size(); ++v) {
      const auto name = view_file_name(static_cast<int>(v));
      read_png(*external_views / name);  // validates before copying
      fs::copy_file(*external_views / name, out / views_rel / name, fs::copy_options::overwrite_existing);
    }
    write_camera_json(out / views_rel / kCameraFileName, poses);
  } else {
    auto poses = dodecahedron_rig(options.rig);
    poses.resize(static_cast<std::size_t>(options.views));
    for (std::size_t v = 0; v < poses.size(); ++v) {
      const auto view = render_splat(cloud, poses[v], options.rig.height, options.rig.width, options.rig.splat_radius_px);
      write_png(out / views_rel / view_file_name(static_cast<int>(v)), view.image);
    }
    write_camera_json(out / views_rel / kCameraFileName, poses);
  }
  ManifestEntry e;
  e.object_id = object_id;
  e.class_name = class_name;
  e.cloud = cloud_rel.generic_string();
  e.views_dir = views_rel.generic_string();
  e.n_points = static_cast<int>(cloud.size());
  return e;
}

void check_options(const BuildOptions& options) {
  if (options.views < 1 || options.views > 20) throw std::invalid_argument("views must be in [1, 20]");
  if (options.n_points < 1) throw std::invalid_argument("n_points must be >= 1");
}

PointCloud resample(const PointCloud& pc, int n_points, Rng& rng) {
  const auto n = static_cast<std::size_t>(pc.size());
  std::vector<std::size_t> pick;
  if (n >= static_cast<std::size_t>(n_points)) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = 0; k < static_cast<std::size_t>(n_points); ++k)
      std::swap(perm[k], perm[k + rng.below(n - k)]);
    pick.assign(perm.begin(), perm.begin() + n_points);
  } else {
    for (int k = 0; k < n_points; ++k) pick.push_back(rng.below(n));
  }
  PointCloud out;
  out.points.resize(3, n_points);
  if (pc.normals) out.normals = Eigen::Matrix3Xd(3, n_points);
  for (int k = 0; k < n_points; ++k) {
    const auto src = static_cast<Eigen::Index>(pick[static_cast<std::size_t>(k)]);
    out.points.col(k) = pc.points.col(src);
    if (pc.normals) out.normals->col(k) = pc.normals->col(src);
  }
  out.label = pc.label;
  return out;
}

}  // namespace

BuildReport build_synthetic_dataset(const fs::path& out, int n_objects, const BuildOptions& options) {
  check_options(options);
  if (n_objects < 1) throw std::invalid_argument("n_objects must be >= 1");
  fs::create_directories(out / "clouds");
  fs::create_directories(out / "views");

  std::vector<ManifestEntry> entries(static_cast<std::size_t>(n_objects));
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n_objects; ++k) {
    Rng rng(mix_seed(options.seed, static_cast<std::uint64_t>(k)));
    const ShapeClass shape = kShapeClasses[static_cast<std::size_t>(k) % kShapeClasses.size()];
    const auto spec = random_shape_spec(shape, options.jitter_sigma, rng);
    PointCloud pc = generate_synthetic_object(spec, options.n_points, rng);
    if (options.random_orientation) pc = rotate(pc, random_rotation(rng));
    pc = normalize(pc);
    char id[64];
    std::snprintf(id, sizeof(id), "%s_%05d", std::string(shape_class_name(shape)).c_str(), k);
    entries[static_cast<std::size_t>(k)] =
        emit_object(out, id, std::string(shape_class_name(shape)), pc, options, std::nullopt);
  }
  write_manifest(out / kManifestName, entries);
  BuildReport report;
  report.objects_written = n_objects;
  write_report(out, report);
  return report;
}

BuildReport build_dataset_from_directory(const fs::path& source, const fs::path& out, const BuildOptions& options) {
  check_options(options);
  if (!fs::is_directory(source)) throw std::runtime_error("source is not a directory: " + source.string());
  std::vector<fs::path> files;
  for (const auto& it : fs::recursive_directory_iterator(source)) {
    if (!it.is_regular_file()) continue;
    const auto ext = it.path().extension().string();
    if (ext == ".pcpd" || ext == ".xyz" || ext == ".txt") files.push_back(it.path());
  }
  std::sort(files.begin(), files.end());
  fs::create_directories(out / "clouds");
  fs::create_directories(out / "views");

  BuildReport report;
  std::vector<ManifestEntry> entries;
  for (std::size_t k = 0; k < files.size(); ++k) {
    const fs::path& file = files[k];
    const fs::path rel = fs::relative(file, source);
    std::string class_name = rel.has_parent_path() ? rel.parent_path().filename().string() : "unknown";
    std::string object_id = (rel.parent_path() / rel.stem()).generic_string();
    std::replace(object_id.begin(), object_id.end(), '/', '_');
    try {
      Rng rng(mix_seed(options.seed, k));
      PointCloud pc = normalize(resample(read_point_cloud(file), options.n_points, rng));
      std::optional<fs::path> ext_views;
      const fs::path candidate = file.parent_path() / (file.stem().string() + "_views");
      if (fs::is_directory(candidate) && fs::exists(candidate / kCameraFileName)) ext_views = candidate;
      entries.push_back(emit_object(out, object_id, class_name, pc, options, ext_views));
      ++report.objects_written;
    } catch (const std::exception& ex) {
      std::cerr << "warning: skipping " << file.string() << ": " << ex.what() << '\n';
      ++report.skipped;
      report.skipped_files.push_back(rel.generic_string());
    }
  }
  write_manifest(out / kManifestName, entries);
  write_report(out, report);
  return report;
}

Dataset Dataset::load(const fs::path& root) {
  const fs::path manifest = root / kManifestName;
  if (!fs::exists(manifest)) throw std::runtime_error("manifest not found: " + manifest.string());
  Dataset d;
  d.root_ = root;
  d.entries_ = read_manifest(manifest);
  std::map<std::string, int> classes;
  for (const auto& e : d.entries_) classes.emplace(e.class_name, 0);
  int next = 0;
  for (auto& [name, id] : classes) {
    id = next++;
    d.class_names_.push_back(name);
  }
  d.clouds_.resize(d.entries_.size());
  d.poses_.resize(d.entries_.size());
  for (std::size_t i = 0; i < d.entries_.size(); ++i) {
    const auto& e = d.entries_[i];
    d.clouds_[i] = read_pcpd(root / e.cloud);
    d.clouds_[i].label = classes.at(e.class_name);
    d.poses_[i] = read_camera_json(root / e.views_dir / kCameraFileName);
    if (d.poses_[i].empty()) throw std::runtime_error("object without views: " + e.object_id);
    d.labels_.push_back(classes.at(e.class_name));
  }
  return d;
}

Image Dataset::load_view(std::size_t i, int view_id) const {
  if (view_id < 0 || static_cast<std::size_t>(view_id) >= view_count(i))
    throw std::out_of_range("view id out of range");
  return read_png(root_ / entries_.at(i).views_dir / view_file_name(view_id));
}

std::ptrdiff_t Dataset::find(const std::string& object_id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].object_id == object_id) return static_cast<std::ptrdiff_t>(i);
  return -1;
}

Batch sample_batch(const Dataset& data, int m, int centers, Rng& rng, bool augment, const BatchOptions& options) {
  if (m < 1) throw std::invalid_argument("batch size must be >= 1");
  if (static_cast<std::size_t>(m) > data.size()) throw std::invalid_argument("batch size exceeds dataset size");
  const std::size_t n = data.size();

  // Partial Fisher-Yates over object indices.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t k = 0; k < static_cast<std::size_t>(m); ++k) std::swap(perm[k], perm[k + rng.below(n - k)]);

  Batch b;
  for (int s = 0; s < m; ++s) {
    const std::size_t obj = perm[static_cast<std::size_t>(s)];
    const int view = static_cast<int>(rng.below(data.view_count(obj)));
    PointCloud cloud = data.cloud(obj);
    CameraPose pose = data.poses(obj)[static_cast<std::size_t>(view)];
    if (augment) {
      const Mat4 r = random_rotation(rng);
      cloud = rotate(cloud, r);
      pose = compose_rotation(pose, r);
    }
    const auto idx = farthest_point_sampling(cloud, centers);
    Eigen::Matrix3Xd pts(3, centers);
    for (int l = 0; l < centers; ++l) pts.col(l) = cloud.points.col(idx[static_cast<std::size_t>(l)]);
    const ProjectionBatch proj = project_points(pts, pose);
    std::vector<PixelIndex> targets(static_cast<std::size_t>(centers));
    std::vector<bool> valid(static_cast<std::size_t>(centers), false);
    for (std::size_t l = 0; l < static_cast<std::size_t>(centers); ++l) {
      if (!proj.in_front[l] || !proj.projections[l].in_frame) continue;
      targets[l] = pixel_index(proj.projections[l].u, proj.projections[l].v, options.grid);
      valid[l] = true;
    }
    if (options.load_images) b.images.push_back(data.load_view(obj, view));
    b.object_indices.push_back(obj);
    b.view_ids.push_back(view);
    b.clouds.push_back(std::move(cloud));
    b.poses.push_back(pose);
    b.center_indices.push_back(idx);
    b.patch_targets.push_back(std::move(targets));
    b.valid_mask.push_back(std::move(valid));
  }
  return b;
}

ValidationReport validate_dataset(const fs::path& root, bool check_images) {
  ValidationReport report;
  const auto entries = read_manifest(root / kManifestName);
  for (const auto& e : entries) {
    ++report.objects_checked;
    auto fail = [&](const std::string& what) { report.failures.push_back(e.object_id + ": " + what); };
    try {
      const PointCloud pc = read_pcpd(root / e.cloud);
      if (pc.size() != e.n_points) fail("point count differs from manifest");
      const Vec3 centroid = pc.points.rowwise().mean();
      // fp32 storage bounds the achievable precision of the stored cloud.
      if (centroid.norm() > 1e-5) fail("cloud not centered");
      if (std::abs(pc.points.colwise().norm().maxCoeff() - 1.0) > 1e-5) fail("cloud not unit-scaled");
      if (pc.normals) {
        const auto norms = pc.normals->colwise().norm();
        if ((norms.array() - 1.0).abs().maxCoeff() > 1e-5) fail("normals not unit length");
      }
      const auto poses = read_camera_json(root / e.views_dir / kCameraFileName);
      if (poses.empty()) fail("no views");
      for (std::size_t v = 0; v < poses.size(); ++v) {
        const Mat3 r = poses[v].m_view.block<3, 3>(0, 0);
        if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || std::abs(r.determinant() - 1.0) > 1e-6)
          fail("view " + std::to_string(v) + " rotation not orthonormal");
        if (!poses[v].m_proj.allFinite() || poses[v].m_proj(3, 2) >= 0.0)
          fail("view " + std::to_string(v) + " projection malformed");
        if (check_images) {
          const fs::path img_path = root / e.views_dir / view_file_name(static_cast<int>(v));
          const Image img = read_png(img_path);
          if (img.height < 1 || img.width < 1) fail("empty image " + img_path.string());
        }
      }
    } catch (const std::exception& ex) {
      fail(ex.what());
    }
  }
  return report;
}

}  // namespace picpoint
