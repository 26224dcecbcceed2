#include <omp.h>
#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>
#include <stdexcept>
#include <vector>

#include "picpoint/kernels.hpp"

namespace picpoint::kernels {

int thread_count() { return omp_get_max_threads(); }
void set_thread_count(int n) { omp_set_num_threads(std::max(1, n)); }

namespace omp {
namespace {

// Fixed block sizes: results must not depend on how blocks map to threads.
constexpr Eigen::Index kKnnBlock = 64;
constexpr Eigen::Index kEdgeBlock = 32;
constexpr int kConvRowBlock = 4;

Eigen::Index block_count(Eigen::Index n, Eigen::Index block) { return (n + block - 1) / block; }

}  // namespace

namespace {

constexpr int kGroups = 64;

// Smallest group minimum with at least k group minima at or below it. The
// distances are split into kGroups interleaved groups, so at least k distinct
// distances lie at or below the result: it bounds the k-th smallest.
template <typename T>
T group_threshold(const T* d, Eigen::Index n, int k, T* mins) {
  std::fill(mins, mins + kGroups, std::numeric_limits<T>::infinity());
  Eigen::Index b0 = 0;
  for (; b0 + kGroups <= n; b0 += kGroups)
    for (int j = 0; j < kGroups; ++j) mins[j] = d[b0 + j] < mins[j] ? d[b0 + j] : mins[j];
  for (int j = 0; b0 + j < n; ++j) mins[j] = d[b0 + j] < mins[j] ? d[b0 + j] : mins[j];
  T thr = std::numeric_limits<T>::infinity();
  for (int i = 0; i < kGroups; ++i) {
    int count = 0;
#if defined(__AVX512F__)
    if constexpr (std::is_same_v<T, float>) {
      const __m512 v = _mm512_set1_ps(mins[i]);
      for (int j = 0; j < kGroups; j += 16)
        count += __builtin_popcount(_mm512_cmp_ps_mask(_mm512_loadu_ps(mins + j), v, _CMP_LE_OQ));
    } else
#endif
    {
      for (int j = 0; j < kGroups; ++j) count += mins[j] <= mins[i];
    }
    if (count >= k && mins[i] < thr) thr = mins[i];
  }
  return thr;
}

// Indices (ascending) and values of the distances at or below thr.
template <typename T>
int compress_below(const T* d, Eigen::Index n, T thr, int* ci, T* cd) {
  int c = 0;
  Eigen::Index b = 0;
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    const __m512 vt = _mm512_set1_ps(thr);
    __m512i idx = _mm512_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15);
    const __m512i step = _mm512_set1_epi32(16);
    for (; b + 16 <= n; b += 16) {
      const __m512 v = _mm512_loadu_ps(d + b);
      const __mmask16 m = _mm512_cmp_ps_mask(v, vt, _CMP_LE_OQ);
      if (m) {
        _mm512_mask_compressstoreu_epi32(ci + c, m, idx);
        _mm512_mask_compressstoreu_ps(cd + c, m, v);
        c += __builtin_popcount(m);
      }
      idx = _mm512_add_epi32(idx, step);
    }
  }
#endif
  for (; b < n; ++b)
    if (d[b] <= thr) {
      ci[c] = static_cast<int>(b);
      cd[c] = d[b];
      ++c;
    }
  return c;
}

// The k smallest of d (self excluded) ordered by (distance, index).
template <typename T>
void select_row(T* d, Eigen::Index n, Eigen::Index self, int k, T* mins, int* ci, T* cd, int* out) {
  d[self] = std::numeric_limits<T>::infinity();
  const T thr = group_threshold(d, n, k, mins);
  int c = compress_below(d, n, thr, ci, cd);
  if (std::isinf(thr)) {
    // Too few points to bound the selection: every other point is a candidate.
    c = static_cast<int>(std::remove(ci, ci + c, static_cast<int>(self)) - ci);
    for (int i = 0; i < c; ++i) cd[i] = d[ci[i]];
  }
  if (c < k) throw std::invalid_argument("knn: non-finite distances");
  // Candidates arrive in ascending index order, so a stable sort on distance
  // yields the (distance, index) order.
  if (c <= kGroups) {
    for (int i = 1; i < c; ++i) {
      const T v = cd[i];
      const int x = ci[i];
      int j = i;
      for (; j > 0 && cd[j - 1] > v; --j) {
        cd[j] = cd[j - 1];
        ci[j] = ci[j - 1];
      }
      cd[j] = v;
      ci[j] = x;
    }
    std::copy_n(ci, k, out);
  } else {
    std::vector<int> order(ci, ci + c);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return d[x] < d[y]; });
    std::copy_n(order.begin(), k, out);
  }
}

}  // namespace

template <typename T>
IndexMatrix knn(const Matrix<T>& features, int k) {
  const Eigen::Index n = features.cols();
  if (k < 1 || k >= n || k > kMaxNeighbors) throw std::invalid_argument("knn requires 1 <= k < N");
  IndexMatrix out(k, n);
  const Vector<T> sq = features.colwise().squaredNorm().transpose();
  const Eigen::Index blocks = block_count(n, kKnnBlock);

#pragma omp parallel
  {
    Matrix<T> gram;
    Vector<T> dist(n);
    std::vector<T> mins(kGroups), cd(static_cast<std::size_t>(n));
    std::vector<int> ci(static_cast<std::size_t>(n));
#pragma omp for schedule(static)
    for (Eigen::Index blk = 0; blk < blocks; ++blk) {
      const Eigen::Index a0 = blk * kKnnBlock;
      const Eigen::Index rows = std::min(kKnnBlock, n - a0);
      gram.noalias() = features.transpose() * features.middleCols(a0, rows);  // n x rows
      for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index a = a0 + r;
        dist = (sq.array() + sq(a)) - T(2) * gram.col(r).array();
        select_row(dist.data(), n, a, k, mins.data(), ci.data(), cd.data(), &out(0, a));
      }
    }
  }
  return out;
}

namespace {

// leaky(x) = max(x, slope * x) for a slope below one.
template <typename Derived>
auto leaky_vec(const Eigen::ArrayBase<Derived>& z) {
  using T = typename Derived::Scalar;
  return z.max(static_cast<T>(nn::kLeakySlope) * z);
}

}  // namespace

template <typename T>
void edgeconv_forward(const Matrix<T>& pre_self, const Matrix<T>& pre_nbr, const IndexMatrix& nbr,
                      const Matrix<T>& w2, const Matrix<T>& b2, Matrix<T>& max_out, SlotMatrix& argmax) {
  const Eigen::Index hidden = pre_self.rows();
  const Eigen::Index n = pre_self.cols();
  const Eigen::Index k = nbr.rows();
  const Eigen::Index out_ch = w2.rows();
  max_out.resize(out_ch, n);
  argmax.resize(out_ch, n);
  const Eigen::Index blocks = block_count(n, kEdgeBlock);

#pragma omp parallel
  {
    Matrix<T> h(hidden, kEdgeBlock * k);
    Matrix<T> o(out_ch, kEdgeBlock * k);
    Eigen::Array<T, Eigen::Dynamic, 1> best(out_ch);
    Eigen::Array<int, Eigen::Dynamic, 1> slot(out_ch);
#pragma omp for schedule(static)
    for (Eigen::Index blk = 0; blk < blocks; ++blk) {
      const Eigen::Index p0 = blk * kEdgeBlock;
      const Eigen::Index pts = std::min(kEdgeBlock, n - p0);
      for (Eigen::Index q = 0; q < pts; ++q)
        for (Eigen::Index s = 0; s < k; ++s)
          h.col(q * k + s) = leaky_vec(pre_self.col(p0 + q).array() + pre_nbr.col(nbr(s, p0 + q)).array()).matrix();
      o.leftCols(pts * k).noalias() = w2 * h.leftCols(pts * k);
      for (Eigen::Index q = 0; q < pts; ++q) {
        best = o.col(q * k).array();
        slot.setZero();
        for (Eigen::Index s = 1; s < k; ++s) {
          const auto v = o.col(q * k + s).array();
          const auto win = v > best;
          slot = win.select(static_cast<int>(s), slot);
          best = win.select(v, best);
        }
        max_out.col(p0 + q) = (best + b2.col(0).array()).matrix();
        argmax.col(p0 + q) = slot.template cast<std::uint8_t>().matrix();
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
  const Eigen::Index k = nbr.rows();
  const Eigen::Index out_ch = w2.rows();
  const Matrix<T> w2t = w2.transpose();
  const Eigen::Index blocks = block_count(n, kEdgeBlock);
  Matrix<T> d_edge(hidden, n * k);  // gradient w.r.t. the hidden pre-activation per edge
  std::vector<Matrix<T>> partial(static_cast<std::size_t>(blocks));  // per-block d(w2^T)
  d_pre_self.resize(hidden, n);
  d_pre_nbr.resize(hidden, n);
  const T slope = static_cast<T>(nn::kLeakySlope);

  // Per point block: hidden gradients of every edge and the block's share of d_w2.
#pragma omp parallel
  {
    std::vector<T> dh(static_cast<std::size_t>(hidden * k));
    std::vector<T> h(static_cast<std::size_t>(hidden * k));
#pragma omp for schedule(static)
    for (Eigen::Index blk = 0; blk < blocks; ++blk) {
      Matrix<T>& dw = partial[static_cast<std::size_t>(blk)];
      dw.setZero(hidden, out_ch);
      T* dwp = dw.data();
      const Eigen::Index p0 = blk * kEdgeBlock;
      const Eigen::Index pts = std::min(kEdgeBlock, n - p0);
      for (Eigen::Index p = p0; p < p0 + pts; ++p) {
        const T* self = pre_self.data() + p * hidden;
        for (Eigen::Index s = 0; s < k; ++s) {
          const T* other = pre_nbr.data() + static_cast<Eigen::Index>(nbr(s, p)) * hidden;
          T* hs = h.data() + s * hidden;
          for (Eigen::Index r = 0; r < hidden; ++r) {
            const T z = self[r] + other[r];
            hs[r] = z > T(0) ? z : slope * z;
          }
        }
        std::fill(dh.begin(), dh.end(), T(0));
        for (Eigen::Index c = 0; c < out_ch; ++c) {
          const T g = grad(c, p);
          if (g == T(0)) continue;
          const Eigen::Index s = argmax(c, p);
          T* dhs = dh.data() + s * hidden;
          const T* wc = w2t.data() + c * hidden;
          const T* hs = h.data() + s * hidden;
          T* dwc = dwp + c * hidden;
          for (Eigen::Index r = 0; r < hidden; ++r) {
            dhs[r] += g * wc[r];
            dwc[r] += g * hs[r];
          }
        }
        T* dself = d_pre_self.data() + p * hidden;
        std::fill(dself, dself + hidden, T(0));
        for (Eigen::Index s = 0; s < k; ++s) {
          const T* other = pre_nbr.data() + static_cast<Eigen::Index>(nbr(s, p)) * hidden;
          const T* dhs = dh.data() + s * hidden;
          T* de = d_edge.data() + (p * k + s) * hidden;
          for (Eigen::Index r = 0; r < hidden; ++r) {
            const T z = self[r] + other[r];
            de[r] = z > T(0) ? dhs[r] : slope * dhs[r];
            dself[r] += de[r];
          }
        }
      }
    }
  }
  Matrix<T> d_w2t = Matrix<T>::Zero(hidden, out_ch);
  for (const auto& dw : partial) d_w2t += dw;
  d_w2 += d_w2t.transpose();

  // Scatter to neighbors through the reverse adjacency, edges in ascending order.
  std::vector<int> offsets(static_cast<std::size_t>(n) + 1, 0);
  for (Eigen::Index e = 0; e < n * k; ++e) ++offsets[static_cast<std::size_t>(nbr(e % k, e / k)) + 1];
  for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) offsets[j + 1] += offsets[j];
  std::vector<int> edges(static_cast<std::size_t>(n * k));
  {
    std::vector<int> fill(offsets.begin(), offsets.end() - 1);
    for (Eigen::Index e = 0; e < n * k; ++e)
      edges[static_cast<std::size_t>(fill[static_cast<std::size_t>(nbr(e % k, e / k))]++)] = static_cast<int>(e);
  }
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < n; ++j) {
    T* dst = d_pre_nbr.data() + j * hidden;
    std::fill(dst, dst + hidden, T(0));
    for (int t = offsets[static_cast<std::size_t>(j)]; t < offsets[static_cast<std::size_t>(j) + 1]; ++t) {
      const T* src = d_edge.data() + static_cast<Eigen::Index>(edges[static_cast<std::size_t>(t)]) * hidden;
      for (Eigen::Index r = 0; r < hidden; ++r) dst[r] += src[r];
    }
  }
}

Matrix<float> conv2d(const Matrix<float>& input, const Matrix<float>& weight, const ConvShape& shape) {
  const int oh = shape.out_height();
  const int ow = shape.out_width();
  const int kk = shape.kernel;
  const int pad = kk / 2;
  const int patch = shape.in_channels * kk * kk;
  Matrix<float> out(shape.out_channels, static_cast<Eigen::Index>(oh) * ow);
  const int blocks = (oh + kConvRowBlock - 1) / kConvRowBlock;

#pragma omp parallel
  {
    Matrix<float> cols(patch, static_cast<Eigen::Index>(kConvRowBlock) * ow);
#pragma omp for schedule(static)
    for (int blk = 0; blk < blocks; ++blk) {
      const int y0 = blk * kConvRowBlock;
      const int rows = std::min(kConvRowBlock, oh - y0);
      for (int yy = 0; yy < rows; ++yy) {
        const int y = y0 + yy;
        for (int x = 0; x < ow; ++x) {
          const Eigen::Index col = static_cast<Eigen::Index>(yy) * ow + x;
          for (int ci = 0; ci < shape.in_channels; ++ci)
            for (int ky = 0; ky < kk; ++ky) {
              const int iy = std::clamp(y * shape.stride + ky - pad, 0, shape.in_height - 1);
              for (int kx = 0; kx < kk; ++kx) {
                const int ix = std::clamp(x * shape.stride + kx - pad, 0, shape.in_width - 1);
                cols((ci * kk + ky) * kk + kx, col) = input(ci, static_cast<Eigen::Index>(iy) * shape.in_width + ix);
              }
            }
        }
      }
      const Eigen::Index width = static_cast<Eigen::Index>(rows) * ow;
      out.middleCols(static_cast<Eigen::Index>(y0) * ow, width).noalias() = weight * cols.leftCols(width);
    }
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

}  // namespace omp
}  // namespace picpoint::kernels
