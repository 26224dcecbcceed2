#pragma once

// Hot loops of the point and image backbones, in two flavours with identical
// signatures:
//   serial::  direct loop-nest reference implementations, used by the tests
//             as oracles;
//   omp::     blocked GEMM formulations parallelized with OpenMP over
//             independent outputs only, so results do not depend on the
//             thread count.
// The two agree to rounding; indices (neighbors, argmax slots) agree exactly
// on inputs without near-ties.

#include <Eigen/Dense>

#include <cstdint>

#include "picpoint/nn.hpp"

namespace picpoint {

enum class KernelMode { omp, serial };

}  // namespace picpoint

namespace picpoint::kernels {

template <typename T>
using Matrix = nn::Matrix<T>;
template <typename T>
using Vector = nn::Vector<T>;

/// k x N neighbor table, column n lists the neighbors of point n nearest first.
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
/// C x N table of winning neighbor slots of the EdgeConv max.
using SlotMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr int kMaxNeighbors = 255;

/// Geometry of a square-kernel stride-s convolution with replicate padding
/// of kernel/2 on a (channels x height*width) column-per-pixel image.
struct ConvShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 2;
  int in_height = 0;
  int in_width = 0;

  int out_height() const { return (in_height + stride - 1) / stride; }
  int out_width() const { return (in_width + stride - 1) / stride; }
};

namespace serial {

// kNN over the columns of `features` (self excluded, ties by lower index).
template <typename T>
IndexMatrix knn(const Matrix<T>& features, int k);

// EdgeConv with a two-layer edge map. `pre_self` = (A - B) x_n + b1 and
// `pre_nbr` = B x_j are the per-point halves of the first layer; the hidden
// edge activation is leaky(pre_self_n + pre_nbr_j) and the edge output
// W2 h + b2. `max_out` receives the max over the k neighbors (before the
// output nonlinearity), `argmax` the winning slot.
template <typename T>
void edgeconv_forward(const Matrix<T>& pre_self, const Matrix<T>& pre_nbr, const IndexMatrix& nbr,
                      const Matrix<T>& w2, const Matrix<T>& b2, Matrix<T>& max_out, SlotMatrix& argmax);

// Backward of edgeconv_forward given grad = d(max_out). Accumulates into d_w2,
// overwrites d_pre_self and d_pre_nbr.
template <typename T>
void edgeconv_backward(const Matrix<T>& pre_self, const Matrix<T>& pre_nbr, const IndexMatrix& nbr,
                       const Matrix<T>& w2, const SlotMatrix& argmax, const Matrix<T>& grad, Matrix<T>& d_w2,
                       Matrix<T>& d_pre_self, Matrix<T>& d_pre_nbr);

// Convolution without bias or activation; returns out_channels x out_h*out_w.
Matrix<float> conv2d(const Matrix<float>& input, const Matrix<float>& weight, const ConvShape& shape);

}  // namespace serial

namespace omp {

template <typename T>
IndexMatrix knn(const Matrix<T>& features, int k);

template <typename T>
void edgeconv_forward(const Matrix<T>& pre_self, const Matrix<T>& pre_nbr, const IndexMatrix& nbr,
                      const Matrix<T>& w2, const Matrix<T>& b2, Matrix<T>& max_out, SlotMatrix& argmax);

template <typename T>
void edgeconv_backward(const Matrix<T>& pre_self, const Matrix<T>& pre_nbr, const IndexMatrix& nbr,
                       const Matrix<T>& w2, const SlotMatrix& argmax, const Matrix<T>& grad, Matrix<T>& d_w2,
                       Matrix<T>& d_pre_self, Matrix<T>& d_pre_nbr);

Matrix<float> conv2d(const Matrix<float>& input, const Matrix<float>& weight, const ConvShape& shape);

}  // namespace omp

/// Number of OpenMP threads the omp:: kernels will use.
int thread_count();
void set_thread_count(int n);

}  // namespace picpoint::kernels
