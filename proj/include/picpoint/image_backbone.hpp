#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "picpoint/image.hpp"
#include "picpoint/kernels.hpp"
#include "picpoint/tensor_archive.hpp"

namespace picpoint {

/// Top-level image features: grid column j*G + i holds patch (i, j), i along
/// the image width, j along the height.
struct FeatureMap2D {
  nn::Matrix<float> grid;  // C2 x G*G
  nn::Vector<float> global;  // spatial mean of grid
  int grid_size = 0;
};

/// Frozen convolution stack: each layer is a 3x3 (or KxK) stride-s convolution
/// with replicate padding, bias and ReLU. Inputs are RGB in [0, 1] shifted by
/// -0.5. There is no backward pass; the weights are never updated.
class ImageBackbone {
 public:
  struct Layer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 2;
    nn::Matrix<float> weight;  // out x in*K*K, column (ci*K + ky)*K + kx
    nn::Vector<float> bias;
  };

  static constexpr std::uint64_t kTinyCnnSeed = 20240607;

  /// 224 -> 112 -> 56 -> 28 -> 14 -> 7 with channels 16, 32, 64, 96, 128.
  /// Weights ~ N(0, 2 / fan_in) from an Rng seeded with `seed`, biases zero.
  static ImageBackbone tiny_cnn(std::uint64_t seed = kTinyCnnSeed);

  /// Conv-stack weight file, see save().
  static ImageBackbone load(const std::filesystem::path& path);

  /// Writes a tensor archive whose metadata lists the layers
  /// ({"format":"picpoint-conv-stack","input_size":S,"layers":[{"name","in_channels",
  /// "out_channels","kernel","stride"}...]}) and whose tensors are
  /// "<name>.weight" [out, in, K, K] and "<name>.bias" [out].
  void save(const std::filesystem::path& path) const;

  FeatureMap2D forward(const Image& image, KernelMode mode = KernelMode::omp) const;

  const std::string& kind() const { return kind_; }
  int input_size() const { return input_size_; }
  int grid_size() const;
  int channels() const { return layers_.back().out_channels; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// CRC-32 over every weight and bias value.
  std::uint32_t checksum() const;

 private:
  std::string kind_;
  int input_size_ = 224;
  std::vector<Layer> layers_;
};

/// Memoized backbone outputs keyed by (object id, view id). The features are a
/// pure function of the stored image and the frozen weights, so one cache can
/// serve several training runs over the same dataset and backbone.
class FeatureCache {
 public:
  explicit FeatureCache(std::shared_ptr<const ImageBackbone> backbone) : backbone_(std::move(backbone)) {}

  template <typename Load>
  const FeatureMap2D& get(const std::string& object_id, int view_id, Load&& load_image) {
    const std::string key = object_id + "#" + std::to_string(view_id);
    {
      std::lock_guard lock(mutex_);
      auto it = entries_.find(key);
      if (it != entries_.end()) return *it->second;
    }
    auto features = std::make_unique<FeatureMap2D>(backbone_->forward(load_image()));
    std::lock_guard lock(mutex_);
    auto [it, inserted] = entries_.emplace(key, std::move(features));
    return *it->second;
  }

  const ImageBackbone& backbone() const { return *backbone_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::shared_ptr<const ImageBackbone> backbone_;
  std::mutex mutex_;
  std::unordered_map<std::string, std::unique_ptr<FeatureMap2D>> entries_;
};

}  // namespace picpoint
