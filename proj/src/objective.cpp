#include "picpoint/objective.hpp"

#include <cmath>
#include <string>

namespace picpoint {

namespace {

template <typename T>
void check_tau(T tau) {
  if (!(tau > T(0))) throw ContrastiveError("temperature must be positive");
}

template <typename T>
void check_unit(const nn::Matrix<T>& m, const char* what) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double n = static_cast<double>(m.col(c).norm());
    if (!(std::abs(n - 1.0) <= 1e-4))
      throw ContrastiveError(std::string(what) + " column " + std::to_string(c) + " is not unit norm");
  }
}

// Valid anchors of the local term and their positive patch columns.
template <typename T>
void local_anchors(const ContrastiveBatchInputs<T>& in, std::vector<int>& cols, std::vector<int>& positives) {
  const int g2 = in.grid * in.grid;
  const std::size_t expected = static_cast<std::size_t>(in.m) * in.L;
  if (in.targets.size() != expected || in.valid_mask.size() != expected || in.z_local.cols() != in.m * in.L ||
      in.q_local.cols() != in.m * g2)
    throw ContrastiveError("local inputs have inconsistent shapes");
  for (int s = 0; s < in.m; ++s)
    for (int l = 0; l < in.L; ++l) {
      const std::size_t a = static_cast<std::size_t>(s) * in.L + l;
      if (!in.valid_mask[a]) continue;
      const PixelIndex& t = in.targets[a];
      if (t.i < 0 || t.j < 0 || t.i >= in.grid || t.j >= in.grid) throw ContrastiveError("target patch out of range");
      cols.push_back(static_cast<int>(a));
      positives.push_back(s * g2 + t.j * in.grid + t.i);
    }
  if (cols.empty()) throw ContrastiveError("no valid correspondences");
}

}  // namespace

template <typename T>
NceResult<T> info_nce(const nn::Matrix<T>& anchors, const nn::Matrix<T>& candidates, std::span<const int> positives,
                      T tau, bool with_grad) {
  check_tau(tau);
  const Eigen::Index n = anchors.cols();
  const Eigen::Index k = candidates.cols();
  if (n == 0 || static_cast<std::size_t>(n) != positives.size()) throw ContrastiveError("anchor/positive mismatch");
  if (anchors.rows() != candidates.rows()) throw ContrastiveError("embedding widths differ");

  // logits: K x n, one anchor per column.
  nn::Matrix<T> logits = candidates.transpose() * anchors;
  logits /= tau;
  NceResult<T> r;
  double total = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    const int pos = positives[static_cast<std::size_t>(a)];
    if (pos < 0 || pos >= k) throw ContrastiveError("positive index out of range");
    auto col = logits.col(a);
    const T mx = col.maxCoeff();
    const T shifted_pos = col(pos) - mx;
    col.array() = (col.array() - mx).exp();
    const T sum = col.sum();
    // -log(p_pos) = log(sum) - (l_pos - max), without exp(l_pos - max) underflowing.
    total += static_cast<double>(std::log(sum) - shifted_pos);
    if (with_grad) {
      col /= sum;  // softmax
      col(pos) -= T(1);
    }
  }
  r.loss = static_cast<T>(total / static_cast<double>(n));
  if (with_grad) {
    logits *= T(1) / (tau * static_cast<T>(n));
    r.d_anchors = candidates * logits;
    r.d_candidates = anchors * logits.transpose();
  }
  return r;
}

template <typename T>
T info_nce_local(const ContrastiveBatchInputs<T>& in) {
  std::vector<int> cols, positives;
  local_anchors(in, cols, positives);
  nn::Matrix<T> anchors(in.z_local.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t a = 0; a < cols.size(); ++a) anchors.col(static_cast<Eigen::Index>(a)) = in.z_local.col(cols[a]);
  return info_nce<T>(anchors, in.q_local, positives, in.tau, false).loss;
}

template <typename T>
T info_nce_global(const nn::Matrix<T>& z, const nn::Matrix<T>& q, T tau) {
  if (z.cols() < 1 || z.cols() != q.cols()) throw ContrastiveError("global inputs need m >= 1 matching columns");
  std::vector<int> positives(static_cast<std::size_t>(z.cols()));
  for (std::size_t s = 0; s < positives.size(); ++s) positives[s] = static_cast<int>(s);
  return info_nce<T>(z, q, positives, tau, false).loss;
}

template <typename T>
LossResult<T> total_loss(const ContrastiveBatchInputs<T>& in, const LossToggles& toggles, bool with_grad) {
  check_tau(in.tau);
  if (!toggles.local && !toggles.global) throw ContrastiveError("at least one loss term must be enabled");
  LossResult<T> r;
  if (toggles.local) {
    check_unit(in.z_local, "z_local");
    check_unit(in.q_local, "q_local");
    std::vector<int> cols, positives;
    local_anchors(in, cols, positives);
    nn::Matrix<T> anchors(in.z_local.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t a = 0; a < cols.size(); ++a) anchors.col(static_cast<Eigen::Index>(a)) = in.z_local.col(cols[a]);
    NceResult<T> nce = info_nce<T>(anchors, in.q_local, positives, in.tau, with_grad);
    r.lcl = nce.loss;
    if (with_grad) {
      r.d_z_local = nn::Matrix<T>::Zero(in.z_local.rows(), in.z_local.cols());
      for (std::size_t a = 0; a < cols.size(); ++a) r.d_z_local.col(cols[a]) = nce.d_anchors.col(static_cast<Eigen::Index>(a));
      r.d_q_local = std::move(nce.d_candidates);
    }
  }
  if (toggles.global) {
    check_unit(in.z_global, "z_global");
    check_unit(in.q_global, "q_global");
    if (in.z_global.cols() < 1 || in.z_global.cols() != in.q_global.cols())
      throw ContrastiveError("global inputs need m >= 1 matching columns");
    std::vector<int> positives(static_cast<std::size_t>(in.z_global.cols()));
    for (std::size_t s = 0; s < positives.size(); ++s) positives[s] = static_cast<int>(s);
    NceResult<T> nce = info_nce<T>(in.z_global, in.q_global, positives, in.tau, with_grad);
    r.glb = nce.loss;
    if (with_grad) {
      r.d_z_global = std::move(nce.d_anchors);
      r.d_q_global = std::move(nce.d_candidates);
    }
  }
  r.total = (r.lcl ? *r.lcl : T(0)) + (r.glb ? *r.glb : T(0));
  return r;
}

template NceResult<float> info_nce<float>(const nn::Matrix<float>&, const nn::Matrix<float>&, std::span<const int>,
                                          float, bool);
template NceResult<double> info_nce<double>(const nn::Matrix<double>&, const nn::Matrix<double>&,
                                            std::span<const int>, double, bool);
template float info_nce_local<float>(const ContrastiveBatchInputs<float>&);
template double info_nce_local<double>(const ContrastiveBatchInputs<double>&);
template float info_nce_global<float>(const nn::Matrix<float>&, const nn::Matrix<float>&, float);
template double info_nce_global<double>(const nn::Matrix<double>&, const nn::Matrix<double>&, double);
template LossResult<float> total_loss<float>(const ContrastiveBatchInputs<float>&, const LossToggles&, bool);
template LossResult<double> total_loss<double>(const ContrastiveBatchInputs<double>&, const LossToggles&, bool);

}  // namespace picpoint
