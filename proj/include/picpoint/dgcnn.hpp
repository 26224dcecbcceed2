#pragma once

#include <span>
#include <vector>

#include "picpoint/geometry.hpp"
#include "picpoint/kernels.hpp"
#include "picpoint/nn.hpp"

namespace picpoint {

struct EdgeStage {
  int hidden = 64;
  int out = 64;
};

struct DgcnnConfig {
  int in_channels = 3;  // 6 with normals
  int k = 20;
  std::vector<EdgeStage> stages{{64, 64}, {64, 64}, {64, 128}};
  bool dynamic_graph = true;
  KernelMode kernels = KernelMode::omp;

  int feature_dim() const { return stages.back().out; }
};

template <typename T>
struct LocalFeatures3D {
  nn::Matrix<T> per_center;  // C3 x L
  nn::Vector<T> global;      // C3, channel max over all points
};

/// Backbone input: xyz rows, followed by normal rows when requested.
template <typename T>
nn::Matrix<T> backbone_input(const PointCloud& pc, bool use_normals);

/// Mini-DGCNN. Each EdgeConv stage applies a shared two-layer map to
/// (x_n, x_j - x_n) over the k nearest neighbors j of n, takes the channel
/// max over neighbors and a leaky rectifier. The first graph is built on xyz;
/// later graphs are rebuilt in the current feature space (dynamic graph).
template <typename T>
class Dgcnn {
 public:
  struct StageCache {
    nn::Matrix<T> input;
    kernels::IndexMatrix nbr;
    nn::Matrix<T> pre_self;
    nn::Matrix<T> pre_nbr;
    nn::Matrix<T> max_out;
    kernels::SlotMatrix argmax;
  };
  struct Cache {
    std::vector<StageCache> stages;
    std::vector<int> centers;
    std::vector<Eigen::Index> global_argmax;
  };

  Dgcnn() = default;
  Dgcnn(const DgcnnConfig& config, Rng& rng);

  const DgcnnConfig& config() const { return config_; }
  DgcnnConfig& mutable_config() { return config_; }

  /// Top-level per-point features, C3 x N.
  nn::Matrix<T> point_features(const nn::Matrix<T>& input, Cache* cache = nullptr) const;

  LocalFeatures3D<T> forward(const nn::Matrix<T>& input, std::span<const int> centers, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients; returns d(input).
  nn::Matrix<T> backward(const Cache& cache, const nn::Matrix<T>& d_per_center, const nn::Vector<T>& d_global);

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;

 private:
  struct Stage {
    nn::Linear<T> edge1;  // hidden x 2*in, columns [A | B] act on (x_n, x_j - x_n)
    nn::Linear<T> edge2;  // out x hidden
  };

  DgcnnConfig config_;
  std::vector<Stage> stages_;
};

extern template class Dgcnn<float>;
extern template class Dgcnn<double>;

}  // namespace picpoint
