#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "picpoint/dataset.hpp"
#include "picpoint/dgcnn.hpp"
#include "picpoint/image_backbone.hpp"
#include "picpoint/trainer.hpp"

namespace picpoint {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One pooled backbone feature per object, rows in dataset order.
struct FeatureTable {
  std::vector<std::string> object_ids;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  Eigen::MatrixXd features;  // objects x C3
};

/// Forwards every normalized cloud without augmentation, in parallel over
/// objects. Throws when the backbone input width does not match the data.
template <typename T>
FeatureTable extract_global_features(const Dgcnn<T>& backbone, const Dataset& data, bool use_normals);
FeatureTable extract_global_features(const std::filesystem::path& backbone_file, const Dataset& data);

struct ProbeOptions {
  std::uint64_t split_seed = 0;
  double C = 1.0;
  double tolerance = 1e-4;
  int max_epochs = 5000;
  double test_fraction = 0.2;
};

struct ProbeReport {
  double overall_accuracy = 0;
  std::map<std::string, double> per_class_accuracy;
  int n_train = 0;
  int n_test = 0;
  std::string backbone_id;
  std::uint64_t seed = 0;
  double C = 1.0;
  double tolerance = 1e-4;
  bool converged = true;
  std::vector<std::string> class_names;
  std::vector<std::vector<int>> confusion;  // [true][predicted] on the test split

  nlohmann::ordered_json to_json() const;
  /// Header "true\predicted,<classes>", then one row per true class.
  std::string confusion_csv() const;
};

/// Stratified split: each class is shuffled by the seed and round(fraction * n)
/// of it (at least one) goes to the test side.
void stratified_split(const std::vector<int>& labels, int n_classes, std::uint64_t seed, double test_fraction,
                      std::vector<int>& train, std::vector<int>& test);

/// Weights of an L2-regularized hinge-loss SVM, min 0.5|w|^2 + C sum max(0, 1 - y w.x),
/// by dual coordinate descent until the projected-gradient spread drops
/// below `tolerance`. Rows of x are samples; y is +-1. Sets *converged.
Eigen::VectorXd fit_linear_svm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double C, double tolerance,
                               int max_epochs, std::uint64_t seed, bool* converged = nullptr);

/// One-vs-rest linear SVM on standardized features with a bias column.
/// Predictions take the largest decision value, ties to the lower class.
ProbeReport linear_probe(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                         const std::vector<std::string>& class_names, const ProbeOptions& options = {});
ProbeReport linear_probe(const FeatureTable& table, const ProbeOptions& options = {});

struct HeatmapResult {
  Eigen::MatrixXd distances;  // grid x grid, distances(i, j) for horizontal cell i, vertical cell j
  Eigen::MatrixXd cosines;    // same layout
  int anchor_point_index = 0;
  std::string object_id;
  int view_id = 0;
  PixelIndex target_patch;

  PixelIndex argmin_patch() const;
  nlohmann::ordered_json to_json() const;
};

/// Point branch, local heads and the frozen image backbone, evaluated without
/// augmentation. Holds float weights.
class CorrespondenceModel {
 public:
  /// Needs a full checkpoint; a backbone-only file is rejected.
  static CorrespondenceModel from_checkpoint(const std::filesystem::path& checkpoint);
  /// Untrained heads and backbone, initialized as a fresh run of `config`.
  static CorrespondenceModel random_init(const TrainConfig& config);

  HeatmapResult heatmap(const Dataset& data, std::size_t object, int view_id, int anchor_point_index) const;

  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  std::shared_ptr<Model<float>> model_;
  std::shared_ptr<ImageBackbone> image_;
};

/// Colormapped distances (near = bright) upsampled to the view and blended at
/// `alpha` over it, with the target cell outlined.
Image heatmap_overlay(const HeatmapResult& result, const Image& view, double alpha = 0.5);

struct RetrievalReport {
  int anchors = 0;
  int hits = 0;
  double accuracy() const { return anchors ? static_cast<double>(hits) / anchors : 0.0; }
};

/// Argmin-patch retrieval over random (object, view, anchor) triples whose
/// anchor projects inside the frame.
RetrievalReport retrieval_accuracy(const CorrespondenceModel& model, const Dataset& data, int anchors,
                                   std::uint64_t seed);

struct AblationCell {
  std::string name;
  nlohmann::json overrides;  // TrainConfig keys
};

struct AblationGrid {
  nlohmann::json base;  // TrainConfig keys shared by all cells
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;
  std::uint64_t probe_seed = 0;
  bool include_random_init = true;
};

/// {"base": {...}, "seeds": [...], "cells": [{"name":..., "overrides": {...}}],
///  "probe_seed": 0, "include_random_init": true}
AblationGrid ablation_grid_from_json(const nlohmann::json& j);
AblationGrid load_ablation_grid(const std::filesystem::path& path);
/// The four loss/pose cells (full, global-only, local-only, no-pose), plus
/// their with-normals variants when requested.
AblationGrid default_ablation_grid(const nlohmann::json& base, std::vector<std::uint64_t> seeds, bool with_normals);

struct AblationRow {
  std::string cell;
  std::uint64_t seed = 0;
  std::string config_hash;
  double accuracy = 0;
  double seconds = 0;
  std::string run_dir;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::map<std::string, double> median;  // per cell over seeds

  nlohmann::ordered_json to_json() const;
};

/// Runs pretrain + export + probe per (cell, seed) under out/<cell>/seed<k>,
/// reusing finished runs whose metrics and report exist, and writes
/// out/ablation.json after each row. A "random-init" cell probes the
/// untrained backbone of the base config. Cells run sequentially and share
/// one image-feature cache.
AblationTable ablation_matrix(const AblationGrid& grid, const std::filesystem::path& out,
                              const std::function<void(const AblationRow&)>& on_row = {});

double median(std::vector<double> values);

}  // namespace picpoint
