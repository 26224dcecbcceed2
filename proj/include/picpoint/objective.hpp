#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "picpoint/geometry.hpp"
#include "picpoint/nn.hpp"

namespace picpoint {

class ContrastiveError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kDefaultTau = 0.07;

/// Embeddings are stored one per column. Local 3D anchors use column s*L + l,
/// local image patches column s*G*G + j*G + i.
template <typename T>
struct ContrastiveBatchInputs {
  nn::Matrix<T> z_local;   // d x m*L
  nn::Matrix<T> q_local;   // d x m*G*G
  nn::Matrix<T> z_global;  // d x m
  nn::Matrix<T> q_global;  // d x m
  std::vector<PixelIndex> targets;  // m*L
  std::vector<bool> valid_mask;     // m*L
  int m = 0;
  int L = 0;
  int grid = 7;
  T tau = static_cast<T>(kDefaultTau);
};

template <typename T>
struct NceResult {
  T loss = 0;
  nn::Matrix<T> d_anchors;     // same shape as anchors
  nn::Matrix<T> d_candidates;  // same shape as candidates
};

/// Mean over anchors of -log softmax(anchor . candidates / tau)[positive],
/// with max-subtracted log-sum-exp. Gradients are filled when requested.
template <typename T>
NceResult<T> info_nce(const nn::Matrix<T>& anchors, const nn::Matrix<T>& candidates, std::span<const int> positives,
                      T tau, bool with_grad);

/// Every valid anchor against all m*G*G patches of the batch.
template <typename T>
T info_nce_local(const ContrastiveBatchInputs<T>& in);

/// Every sample against all m global image embeddings.
template <typename T>
T info_nce_global(const nn::Matrix<T>& z, const nn::Matrix<T>& q, T tau);

struct LossToggles {
  bool local = true;
  bool global = true;
};

template <typename T>
struct LossResult {
  T total = 0;
  std::optional<T> lcl;
  std::optional<T> glb;
  // Gradients of total (zero-sized for a disabled term).
  nn::Matrix<T> d_z_local, d_q_local, d_z_global, d_q_global;
};

/// Unweighted sum of the enabled terms. Checks unit norms (1e-4) and tau > 0.
template <typename T>
LossResult<T> total_loss(const ContrastiveBatchInputs<T>& in, const LossToggles& toggles = {}, bool with_grad = false);

}  // namespace picpoint
