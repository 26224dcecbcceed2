#include "picpoint/heads.hpp"

#include <stdexcept>

namespace picpoint {

template <typename T>
nn::Vector<T> pose_vector(const Mat4& m_view) {
  nn::Vector<T> v(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) v(r * 4 + c) = static_cast<T>(m_view(r, c));
  return v;
}

template nn::Vector<float> pose_vector<float>(const Mat4&);
template nn::Vector<double> pose_vector<double>(const Mat4&);

template <typename T>
Mlp2<T>::Mlp2(const std::string& name, int in, int hidden, int out, bool normalize_output, Rng& rng)
    : fc1(name + ".fc1", in, hidden, rng), fc2(name + ".fc2", hidden, out, rng), normalize(normalize_output) {}

template <typename T>
nn::Matrix<T> Mlp2<T>::forward(const nn::Matrix<T>& x, Cache* cache) const {
  if (x.rows() != fc1.in_features()) throw std::invalid_argument("head input has the wrong width");
  nn::Matrix<T> a1 = fc1.forward(x);
  nn::Matrix<T> h = nn::relu(a1);
  nn::Matrix<T> y = fc2.forward(h);
  nn::Matrix<T> out = normalize ? nn::l2_normalize_columns(y) : y;
  if (cache) {
    cache->x = x;
    cache->a1 = std::move(a1);
    cache->h = std::move(h);
    cache->y = std::move(y);
  }
  return out;
}

template <typename T>
nn::Matrix<T> Mlp2<T>::backward(const Cache& cache, const nn::Matrix<T>& dout) {
  const nn::Matrix<T> dy = normalize ? nn::l2_normalize_columns_backward(cache.y, dout) : dout;
  const nn::Matrix<T> dh = fc2.backward(cache.h, dy);
  return fc1.backward(cache.x, nn::relu_backward(cache.a1, dh));
}

template <typename T>
std::vector<const nn::Parameter<T>*> Mlp2<T>::parameters() const {
  return {&fc1.weight, &fc1.bias, &fc2.weight, &fc2.bias};
}

template <typename T>
LocalHead3D<T>::LocalHead3D(const std::string& name, int in, const HeadConfig& config, bool use_pose, Rng& rng)
    : fc1(name + ".fc1", in, config.local_hidden, rng),
      fc2(name + ".fc2", config.local_hidden + (use_pose ? config.pose_dim : 0), config.d, rng),
      pose_dim_(use_pose ? config.pose_dim : 0) {}

template <typename T>
nn::Matrix<T> LocalHead3D<T>::forward(const nn::Matrix<T>& features, const nn::Matrix<T>& pose, int locations,
                                      Cache* cache) const {
  if (features.rows() != fc1.in_features()) throw std::invalid_argument("local head input has the wrong width");
  if (locations < 1 || features.cols() % locations != 0) throw std::invalid_argument("bad location count");
  const Eigen::Index m = features.cols() / locations;
  if (pose_dim_ > 0 && (pose.rows() != pose_dim_ || pose.cols() != m))
    throw std::invalid_argument("pose codes must be pose_dim x m");

  nn::Matrix<T> a1 = fc1.forward(features);
  const Eigen::Index hidden = a1.rows();
  nn::Matrix<T> cat(hidden + pose_dim_, features.cols());
  cat.topRows(hidden) = nn::relu(a1);
  if (pose_dim_ > 0)
    for (Eigen::Index s = 0; s < m; ++s)
      for (int l = 0; l < locations; ++l) cat.col(s * locations + l).bottomRows(pose_dim_) = pose.col(s);
  nn::Matrix<T> y = fc2.forward(cat);
  nn::Matrix<T> out = nn::l2_normalize_columns(y);
  if (cache) {
    cache->x = features;
    cache->a1 = std::move(a1);
    cache->cat = std::move(cat);
    cache->y = std::move(y);
    cache->locations = locations;
  }
  return out;
}

template <typename T>
nn::Matrix<T> LocalHead3D<T>::backward(const Cache& cache, const nn::Matrix<T>& dout, nn::Matrix<T>* d_pose) {
  const nn::Matrix<T> dy = nn::l2_normalize_columns_backward(cache.y, dout);
  const nn::Matrix<T> dcat = fc2.backward(cache.cat, dy);
  const Eigen::Index hidden = cache.a1.rows();
  if (d_pose) {
    const Eigen::Index m = cache.x.cols() / cache.locations;
    d_pose->setZero(pose_dim_, m);
    if (pose_dim_ > 0)
      for (Eigen::Index s = 0; s < m; ++s)
        for (int l = 0; l < cache.locations; ++l) d_pose->col(s) += dcat.col(s * cache.locations + l).bottomRows(pose_dim_);
  }
  return fc1.backward(cache.x, nn::relu_backward(cache.a1, nn::Matrix<T>(dcat.topRows(hidden))));
}

template <typename T>
std::vector<const nn::Parameter<T>*> LocalHead3D<T>::parameters() const {
  return {&fc1.weight, &fc1.bias, &fc2.weight, &fc2.bias};
}

template class Mlp2<float>;
template class Mlp2<double>;
template class LocalHead3D<float>;
template class LocalHead3D<double>;

}  // namespace picpoint
