#include <algorithm>
#include <stdexcept>
#include <utility>
#include <vector>

#include "picpoint/kernels.hpp"

namespace picpoint::kernels::serial {

template <typename T>
IndexMatrix knn(const Matrix<T>& features, int k) {
  const Eigen::Index n = features.cols();
  if (k < 1 || k >= n || k > kMaxNeighbors) throw std::invalid_argument("knn requires 1 <= k < N");
  IndexMatrix out(k, n);
  std::vector<std::pair<T, int>> cand;
  for (Eigen::Index a = 0; a < n; ++a) {
    cand.clear();
    for (Eigen::Index b = 0; b < n; ++b) {
      if (a == b) continue;
      T d = 0;
      for (Eigen::Index r = 0; r < features.rows(); ++r) {
        const T diff = features(r, a) - features(r, b);
        d += diff * diff;
      }
      cand.emplace_back(d, static_cast<int>(b));
    }
    std::sort(cand.begin(), cand.end());
    for (int s = 0; s < k; ++s) out(s, a) = cand[static_cast<std::size_t>(s)].second;
  }
  return out;
}

template <typename T>
void edgeconv_forward(const Matrix<T>& pre_self, const Matrix<T>& pre_nbr, const IndexMatrix& nbr,
                      const Matrix<T>& w2, const Matrix<T>& b2, Matrix<T>& max_out, SlotMatrix& argmax) {
  const Eigen::Index hidden = pre_self.rows();
  const Eigen::Index n = pre_self.cols();
  const Eigen::Index k = nbr.rows();
  const Eigen::Index out_ch = w2.rows();
  max_out.resize(out_ch, n);
  argmax.resize(out_ch, n);
  std::vector<T> h(static_cast<std::size_t>(hidden));
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index s = 0; s < k; ++s) {
      const int j = nbr(s, p);
      for (Eigen::Index r = 0; r < hidden; ++r) h[static_cast<std::size_t>(r)] = nn::leaky(pre_self(r, p) + pre_nbr(r, j));
      for (Eigen::Index c = 0; c < out_ch; ++c) {
        T o = b2(c, 0);
        for (Eigen::Index r = 0; r < hidden; ++r) o += w2(c, r) * h[static_cast<std::size_t>(r)];
        if (s == 0 || o > max_out(c, p)) {
          max_out(c, p) = o;
          argmax(c, p) = static_cast<std::uint8_t>(s);
        }
      }
    }
  }
}

template <typename T>
void edgeconv_backward(const Matrix<T>& pre_self, const Matrix<T>& pre_nbr, const IndexMatrix& nbr,
                       const Matrix<T>& w2, const SlotMatrix& argmax, const Matrix<T>& grad, Matrix<T>& d_w2,
                       Matrix<T>& d_pre_self, Matrix<T>& d_pre_nbr) {
  const Eigen::Index hidden = pre_self.rows();
  const Eigen::Index n = pre_self.cols();
  const Eigen::Index out_ch = w2.rows();
  d_pre_self.setZero(hidden, n);
  d_pre_nbr.setZero(hidden, n);
  std::vector<T> pre(static_cast<std::size_t>(hidden));
  for (Eigen::Index p = 0; p < n; ++p) {
    for (Eigen::Index c = 0; c < out_ch; ++c) {
      const T g = grad(c, p);
      if (g == T(0)) continue;
      const int s = argmax(c, p);
      const int j = nbr(s, p);
      for (Eigen::Index r = 0; r < hidden; ++r) {
        const T z = pre_self(r, p) + pre_nbr(r, j);
        d_w2(c, r) += g * nn::leaky(z);
        const T dz = g * w2(c, r) * nn::leaky_grad(z);
        d_pre_self(r, p) += dz;
        d_pre_nbr(r, j) += dz;
      }
    }
  }
}

Matrix<float> conv2d(const Matrix<float>& input, const Matrix<float>& weight, const ConvShape& shape) {
  const int oh = shape.out_height();
  const int ow = shape.out_width();
  const int kk = shape.kernel;
  const int pad = kk / 2;
  Matrix<float> out = Matrix<float>::Zero(shape.out_channels, static_cast<Eigen::Index>(oh) * ow);
  for (int co = 0; co < shape.out_channels; ++co)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        float acc = 0.0f;
        for (int ci = 0; ci < shape.in_channels; ++ci)
          for (int ky = 0; ky < kk; ++ky) {
            const int iy = std::clamp(y * shape.stride + ky - pad, 0, shape.in_height - 1);
            for (int kx = 0; kx < kk; ++kx) {
              const int ix = std::clamp(x * shape.stride + kx - pad, 0, shape.in_width - 1);
              acc += weight(co, (ci * kk + ky) * kk + kx) * input(ci, static_cast<Eigen::Index>(iy) * shape.in_width + ix);
            }
          }
        out(co, static_cast<Eigen::Index>(y) * ow + x) = acc;
      }
  return out;
}

template IndexMatrix knn<float>(const Matrix<float>&, int);
template IndexMatrix knn<double>(const Matrix<double>&, int);
template void edgeconv_forward<float>(const Matrix<float>&, const Matrix<float>&, const IndexMatrix&,
                                      const Matrix<float>&, const Matrix<float>&, Matrix<float>&, SlotMatrix&);
template void edgeconv_forward<double>(const Matrix<double>&, const Matrix<double>&, const IndexMatrix&,
                                       const Matrix<double>&, const Matrix<double>&, Matrix<double>&, SlotMatrix&);
template void edgeconv_backward<float>(const Matrix<float>&, const Matrix<float>&, const IndexMatrix&,
                                       const Matrix<float>&, const SlotMatrix&, const Matrix<float>&, Matrix<float>&,
                                       Matrix<float>&, Matrix<float>&);
template void edgeconv_backward<double>(const Matrix<double>&, const Matrix<double>&, const IndexMatrix&,
                                        const Matrix<double>&, const SlotMatrix&, const Matrix<double>&,
                                        Matrix<double>&, Matrix<double>&, Matrix<double>&);

}  // namespace picpoint::kernels::serial
