#pragma once

// Minimal reverse-mode building blocks. Activations are stored one sample or
// location per column (channels x count). Every module exposes a const
// forward that optionally fills a cache, and a backward that accumulates into
// the parameter gradients and returns the input gradient.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "picpoint/rng.hpp"

namespace picpoint::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Fills a matrix with U(-bound, bound).
template <typename T>
void uniform_fill(Matrix<T>& m, double bound, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<T>(rng.uniform(-bound, bound));
}

/// Affine map y = W x + b applied to every column. Weights and biases are
/// initialized U(-1/sqrt(in), 1/sqrt(in)).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng) {
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.value.resize(out, in);
    bias.value.resize(out, 1);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    uniform_fill(weight.value, bound, rng);
    uniform_fill(bias.value, bound, rng);
    weight.zero_grad();
    bias.zero_grad();
  }

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  Matrix<T> forward(const Matrix<T>& x) const {
    Matrix<T> y = weight.value * x;
    y.colwise() += bias.value.col(0);
    return y;
  }

  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy) {
    weight.grad.noalias() += dy * x.transpose();
    bias.grad.col(0) += dy.rowwise().sum();
    return weight.value.transpose() * dy;
  }

  std::vector<Parameter<T>*> parameters() { return {&weight, &bias}; }
  std::vector<const Parameter<T>*> parameters() const { return {&weight, &bias}; }

  Parameter<T> weight;
  Parameter<T> bias;
};

template <typename T>
Matrix<T> relu(const Matrix<T>& x) {
  return x.cwiseMax(T(0));
}

/// dy masked by x > 0.
template <typename T>
Matrix<T> relu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  return (x.array() > T(0)).select(dy, T(0));
}

inline constexpr double kLeakySlope = 0.2;

template <typename T>
inline T leaky(T x) {
  return x > T(0) ? x : static_cast<T>(kLeakySlope) * x;
}

template <typename T>
inline T leaky_grad(T x) {
  return x > T(0) ? T(1) : static_cast<T>(kLeakySlope);
}

inline constexpr double kNormEpsilon = 1e-12;

/// y = x / (|x| + eps) per column.
template <typename T>
Matrix<T> l2_normalize_columns(const Matrix<T>& x) {
  Matrix<T> y = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const T norm = x.col(c).norm();
    y.col(c) /= norm + static_cast<T>(kNormEpsilon);
  }
  return y;
}

template <typename T>
Matrix<T> l2_normalize_columns_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  Matrix<T> dx(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const T r = x.col(c).norm();
    const T s = r + static_cast<T>(kNormEpsilon);
    dx.col(c) = dy.col(c) / s;
    if (r > T(0)) dx.col(c) -= x.col(c) * (x.col(c).dot(dy.col(c)) / (s * s * r));
  }
  return dx;
}

/// Collects raw pointers to every parameter of a module list.
template <typename T, typename... Modules>
std::vector<Parameter<T>*> collect(Modules&... modules) {
  std::vector<Parameter<T>*> out;
  (
      [&] {
        for (Parameter<T>* p : modules.parameters()) out.push_back(p);
      }(),
      ...);
  return out;
}

}  // namespace picpoint::nn
