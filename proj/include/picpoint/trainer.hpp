#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "picpoint/dataset.hpp"
#include "picpoint/dgcnn.hpp"
#include "picpoint/heads.hpp"
#include "picpoint/image_backbone.hpp"
#include "picpoint/objective.hpp"
#include "picpoint/optim.hpp"
#include "picpoint/tensor_archive.hpp"

namespace picpoint {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double lr_point_branch = 1e-3;
  double lr_image_branch = 5e-5;
  double weight_decay = 1e-6;
  double tau = kDefaultTau;
  int L = 64;
  int d = 512;
  bool use_local_loss = true;
  bool use_global_loss = true;
  bool use_pose = true;
  bool use_normals = false;
  std::uint64_t seed = 0;
  std::string backbone2d = "tiny-cnn";  // or "external:<path>"

  // Run plumbing.
  std::string data;          // dataset root
  std::string out = "run";   // output directory
  long max_steps = 0;        // stop after this many steps (0: run the full schedule)
  long checkpoint_every = 0; // steps between periodic checkpoints (0: final only)
  std::string precision = "fp32";  // or "fp64"
  bool deterministic = false;
  bool augment = true;
  int k = 20;
  bool dynamic_graph = true;
  int grid = 7;

  void validate() const;
  DgcnnConfig backbone_config() const;
  HeadConfig head_config() const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are an error.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);

/// Names of the fields that differ, ignoring run plumbing that may change
/// between invocations (out, max_steps, checkpoint_every, deterministic).
std::vector<std::string> config_differences(const TrainConfig& a, const TrainConfig& b);

/// 16 hex digits of FNV-1a over the canonical JSON of the config.
std::string config_hash(const TrainConfig& c);

/// True when PICPOINT_DETERMINISTIC=1 is set.
bool deterministic_from_env();
/// Pins the kernels to one thread when deterministic.
void apply_determinism(bool deterministic);

std::shared_ptr<ImageBackbone> make_image_backbone(const std::string& spec);

/// Trainable parameters of one system. The point branch is the 3D backbone,
/// both 3D heads and the pose encoder; the image branch is the two 2D heads.
template <typename T>
struct Model {
  Dgcnn<T> backbone;
  Mlp2<T> global3d;
  LocalHead3D<T> local3d;
  Mlp2<T> pose;
  Mlp2<T> global2d;
  Mlp2<T> local2d;

  Model() = default;
  Model(const TrainConfig& config, int image_channels, Rng& rng);

  std::vector<nn::Parameter<T>*> point_branch();
  std::vector<nn::Parameter<T>*> image_branch();
  std::vector<nn::Parameter<T>*> all();
  std::vector<nn::Parameter<T>*> heads();

  void store(TensorArchive& archive, bool with_heads) const;
  /// Copies tensors into existing parameters, checking names and shapes.
  void load(const TensorArchive& archive, bool with_heads);
};

extern template struct Model<float>;
extern template struct Model<double>;

inline constexpr const char* kBackbonePrefix = "backbone3d.";
inline constexpr const char* kHeadPrefix = "head.";

struct StepMetrics {
  long step = 0;
  std::optional<double> lcl;
  std::optional<double> glb;
  double total = 0;
  double lr_point = 0;
  double lr_image = 0;
};

std::string metrics_line(const StepMetrics& m);

/// Precision-independent handle on a training run.
class Trainer {
 public:
  /// Builds model and optimizer from the config. A shared feature cache may
  /// be passed to reuse image features across runs with the same backbone.
  explicit Trainer(const TrainConfig& config, std::shared_ptr<FeatureCache> cache = nullptr);
  /// Restores a checkpoint. When `config` is given it must match the stored
  /// one in every training-relevant field.
  static Trainer resume(const std::filesystem::path& checkpoint, const std::optional<TrainConfig>& config = {},
                        std::shared_ptr<FeatureCache> cache = nullptr);

  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;
  ~Trainer();

  StepMetrics step();
  /// Runs until the schedule ends or max_steps is reached, appending to
  /// <out>/metrics.jsonl, writing periodic and final checkpoints to
  /// <out>/checkpoint.pcta. Returns the metrics of the steps run.
  std::vector<StepMetrics> run(const std::function<void(const StepMetrics&)>& on_step = {});

  void save_checkpoint(const std::filesystem::path& path) const;

  const TrainConfig& config() const;
  long steps_done() const;
  long total_steps() const;
  std::uint32_t image_backbone_checksum() const;
  const ImageBackbone& image_backbone() const;
  /// Parameter names per optimizer group, in group order ("point", "image").
  std::vector<std::pair<std::string, std::vector<std::string>>> optimizer_groups() const;
  /// Data addresses of every optimized tensor.
  std::vector<const void*> optimizer_storage() const;
  /// Squared gradient norm of parameters whose name starts with `prefix`
  /// after the most recent step.
  double grad_norm2(const std::string& prefix) const;
  std::vector<std::size_t> last_batch_objects() const;

  struct Impl;

 private:
  explicit Trainer(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

/// Convenience: train with `config` and return the per-step metrics.
std::vector<StepMetrics> pretrain(const TrainConfig& config, std::shared_ptr<FeatureCache> cache = nullptr);

/// Writes only the backbone3d tensors and the backbone config.
void export_backbone(const std::filesystem::path& checkpoint, const std::filesystem::path& out);

/// Backbone from an exported file or a full checkpoint.
template <typename T>
Dgcnn<T> load_backbone(const std::filesystem::path& path, bool* use_normals = nullptr);

}  // namespace picpoint
