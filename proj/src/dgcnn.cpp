#include "picpoint/dgcnn.hpp"

#include <stdexcept>
#include <string>

namespace picpoint {

template <typename T>
nn::Matrix<T> backbone_input(const PointCloud& pc, bool use_normals) {
  if (use_normals && !pc.normals) throw std::invalid_argument("backbone expects normals but the cloud has none");
  const Eigen::Index n = pc.size();
  nn::Matrix<T> x(use_normals ? 6 : 3, n);
  x.topRows(3) = pc.points.cast<T>();
  if (use_normals) x.bottomRows(3) = pc.normals->cast<T>();
  return x;
}

template nn::Matrix<float> backbone_input<float>(const PointCloud&, bool);
template nn::Matrix<double> backbone_input<double>(const PointCloud&, bool);

template <typename T>
Dgcnn<T>::Dgcnn(const DgcnnConfig& config, Rng& rng) : config_(config) {
  if (config.stages.empty()) throw std::invalid_argument("DGCNN needs at least one stage");
  int in = config.in_channels;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const std::string prefix = "backbone3d.edgeconv" + std::to_string(s);
    Stage st;
    st.edge1 = nn::Linear<T>(prefix + ".edge1", 2 * in, config.stages[s].hidden, rng);
    st.edge2 = nn::Linear<T>(prefix + ".edge2", config.stages[s].hidden, config.stages[s].out, rng);
    stages_.push_back(std::move(st));
    in = config.stages[s].out;
  }
}

template <typename T>
nn::Matrix<T> Dgcnn<T>::point_features(const nn::Matrix<T>& input, Cache* cache) const {
  const Eigen::Index n = input.cols();
  if (input.rows() != config_.in_channels) throw std::invalid_argument("backbone input has the wrong channel count");
  if (config_.k < 1 || config_.k >= n) throw std::invalid_argument("DGCNN requires k < N");
  if (!input.allFinite()) throw std::invalid_argument("non-finite backbone input");

  const bool serial = config_.kernels == KernelMode::serial;
  auto knn = [&](const nn::Matrix<T>& f) {
    return serial ? kernels::serial::knn<T>(f, config_.k) : kernels::omp::knn<T>(f, config_.k);
  };

  if (cache) cache->stages.assign(stages_.size(), StageCache{});
  nn::Matrix<T> x = input;
  kernels::IndexMatrix graph;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& st = stages_[s];
    const Eigen::Index in = x.rows();
    const auto a = st.edge1.weight.value.leftCols(in);
    const auto b = st.edge1.weight.value.rightCols(in);
    if (s == 0) {
      graph = knn(nn::Matrix<T>(x.topRows(3)));
    } else if (config_.dynamic_graph) {
      graph = knn(x);
    }
    nn::Matrix<T> pre_self = (a - b) * x;
    pre_self.colwise() += st.edge1.bias.value.col(0);
    nn::Matrix<T> pre_nbr = b * x;
    nn::Matrix<T> max_out;
    kernels::SlotMatrix argmax;
    if (serial)
      kernels::serial::edgeconv_forward<T>(pre_self, pre_nbr, graph, st.edge2.weight.value, st.edge2.bias.value, max_out, argmax);
    else
      kernels::omp::edgeconv_forward<T>(pre_self, pre_nbr, graph, st.edge2.weight.value, st.edge2.bias.value, max_out, argmax);
    nn::Matrix<T> y = max_out.unaryExpr([](T v) { return nn::leaky(v); });
    if (cache) {
      StageCache& sc = cache->stages[s];
      sc.input = std::move(x);
      sc.nbr = graph;
      sc.pre_self = std::move(pre_self);
      sc.pre_nbr = std::move(pre_nbr);
      sc.max_out = std::move(max_out);
      sc.argmax = std::move(argmax);
    }
    x = std::move(y);
  }
  return x;
}

template <typename T>
LocalFeatures3D<T> Dgcnn<T>::forward(const nn::Matrix<T>& input, std::span<const int> centers, Cache* cache) const {
  const nn::Matrix<T> top = point_features(input, cache);
  LocalFeatures3D<T> out;
  out.per_center.resize(top.rows(), static_cast<Eigen::Index>(centers.size()));
  for (std::size_t l = 0; l < centers.size(); ++l) {
    const int c = centers[l];
    if (c < 0 || c >= top.cols()) throw std::out_of_range("center index out of range");
    out.per_center.col(static_cast<Eigen::Index>(l)) = top.col(c);
  }
  out.global.resize(top.rows());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(top.rows()));
  for (Eigen::Index c = 0; c < top.rows(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index p = 1; p < top.cols(); ++p)
      if (top(c, p) > top(c, best)) best = p;
    out.global(c) = top(c, best);
    arg[static_cast<std::size_t>(c)] = best;
  }
  if (cache) {
    cache->centers.assign(centers.begin(), centers.end());
    cache->global_argmax = std::move(arg);
  }
  return out;
}

template <typename T>
nn::Matrix<T> Dgcnn<T>::backward(const Cache& cache, const nn::Matrix<T>& d_per_center, const nn::Vector<T>& d_global) {
  const StageCache& last = cache.stages.back();
  const Eigen::Index n = last.input.cols();
  nn::Matrix<T> dy = nn::Matrix<T>::Zero(last.max_out.rows(), n);
  for (std::size_t l = 0; l < cache.centers.size(); ++l) dy.col(cache.centers[l]) += d_per_center.col(static_cast<Eigen::Index>(l));
  for (Eigen::Index c = 0; c < dy.rows(); ++c) dy(c, cache.global_argmax[static_cast<std::size_t>(c)]) += d_global(c);

  const bool serial = config_.kernels == KernelMode::serial;
  for (std::size_t s = stages_.size(); s-- > 0;) {
    Stage& st = stages_[s];
    const StageCache& sc = cache.stages[s];
    const Eigen::Index in = sc.input.rows();
    const nn::Matrix<T> g = dy.binaryExpr(sc.max_out, [](T d, T v) { return d * nn::leaky_grad(v); });
    nn::Matrix<T> d_self, d_nbr;
    if (serial)
      kernels::serial::edgeconv_backward<T>(sc.pre_self, sc.pre_nbr, sc.nbr, st.edge2.weight.value, sc.argmax, g,
                                            st.edge2.weight.grad, d_self, d_nbr);
    else
      kernels::omp::edgeconv_backward<T>(sc.pre_self, sc.pre_nbr, sc.nbr, st.edge2.weight.value, sc.argmax, g,
                                         st.edge2.weight.grad, d_self, d_nbr);
    st.edge2.bias.grad.col(0) += g.rowwise().sum();

    const nn::Matrix<T> xt = sc.input.transpose();
    st.edge1.weight.grad.leftCols(in).noalias() += d_self * xt;
    st.edge1.weight.grad.rightCols(in).noalias() += (d_nbr - d_self) * xt;
    st.edge1.bias.grad.col(0) += d_self.rowwise().sum();

    const auto a = st.edge1.weight.value.leftCols(in);
    const auto b = st.edge1.weight.value.rightCols(in);
    dy = (a - b).transpose() * d_self + b.transpose() * d_nbr;
  }
  return dy;
}

template <typename T>
std::vector<nn::Parameter<T>*> Dgcnn<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  for (Stage& st : stages_)
    for (auto* p : nn::collect<T>(st.edge1, st.edge2)) out.push_back(p);
  return out;
}

template <typename T>
std::vector<const nn::Parameter<T>*> Dgcnn<T>::parameters() const {
  std::vector<const nn::Parameter<T>*> out;
  for (const Stage& st : stages_) {
    for (auto* p : st.edge1.parameters()) out.push_back(p);
    for (auto* p : st.edge2.parameters()) out.push_back(p);
  }
  return out;
}

template class Dgcnn<float>;
template class Dgcnn<double>;

}  // namespace picpoint
