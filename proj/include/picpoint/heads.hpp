#pragma once

#include <string>
#include <vector>

#include "picpoint/geometry.hpp"
#include "picpoint/nn.hpp"

namespace picpoint {

struct HeadConfig {
  int d = 512;
  int global_hidden = 512;
  int local_hidden = 256;
  int pose_dim = 64;
  int pose_hidden = 64;
};

/// Row-major flattening of the 4x4 view matrix (16 values).
template <typename T>
nn::Vector<T> pose_vector(const Mat4& m_view);

/// Two affine layers with a ReLU in between, applied to every column,
/// optionally followed by L2 normalization of each output column. Serves as
/// the global heads (per sample), the local 2D head (per patch) and the pose
/// encoder (no normalization).
template <typename T>
class Mlp2 {
 public:
  struct Cache {
    nn::Matrix<T> x, a1, h, y;
  };

  Mlp2() = default;
  Mlp2(const std::string& name, int in, int hidden, int out, bool normalize, Rng& rng);

  nn::Matrix<T> forward(const nn::Matrix<T>& x, Cache* cache = nullptr) const;
  nn::Matrix<T> backward(const Cache& cache, const nn::Matrix<T>& dout);

  std::vector<nn::Parameter<T>*> parameters() { return nn::collect<T>(fc1, fc2); }
  std::vector<const nn::Parameter<T>*> parameters() const;

  int in_features() const { return fc1.in_features(); }

  nn::Linear<T> fc1, fc2;
  bool normalize = true;
};

/// Local 3D head: per-location C3 -> hidden -> ReLU, then the sample's pose
/// code is appended to every location before the second affine map and the
/// L2 normalization. Without pose the second layer sees only the hidden units.
template <typename T>
class LocalHead3D {
 public:
  struct Cache {
    nn::Matrix<T> x, a1, cat, y;
    int locations = 0;
  };

  LocalHead3D() = default;
  LocalHead3D(const std::string& name, int in, const HeadConfig& config, bool use_pose, Rng& rng);

  /// features: C3 x (m*L), column s*L + l; pose: pose_dim x m (ignored without pose).
  nn::Matrix<T> forward(const nn::Matrix<T>& features, const nn::Matrix<T>& pose, int locations,
                        Cache* cache = nullptr) const;
  /// Returns d(features); d(pose) is written to d_pose (summed over locations).
  nn::Matrix<T> backward(const Cache& cache, const nn::Matrix<T>& dout, nn::Matrix<T>* d_pose);

  std::vector<nn::Parameter<T>*> parameters() { return nn::collect<T>(fc1, fc2); }
  std::vector<const nn::Parameter<T>*> parameters() const;

  bool use_pose() const { return pose_dim_ > 0; }

  nn::Linear<T> fc1, fc2;

 private:
  int pose_dim_ = 0;
};

extern template class Mlp2<float>;
extern template class Mlp2<double>;
extern template class LocalHead3D<float>;
extern template class LocalHead3D<double>;

}  // namespace picpoint
