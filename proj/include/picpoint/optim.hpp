#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "picpoint/nn.hpp"

namespace picpoint {

/// lr0 * (1 + cos(pi * step / (total - 1))) / 2: lr(0) = lr0 and the last of
/// `total` steps runs at exactly 0.
inline double cosine_lr(double lr0, long step, long total) {
  if (total <= 1) return lr0;
  const double t = static_cast<double>(std::min(step, total - 1)) / static_cast<double>(total - 1);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

/// Adam with L2 weight decay folded into the gradient (g + wd * w).
template <typename T>
class Adam {
 public:
  struct Group {
    std::string name;
    std::vector<nn::Parameter<T>*> params;
    double lr0 = 1e-3;
  };
  struct Moments {
    nn::Matrix<T> m, v;
  };

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  std::vector<Group> groups;
  std::vector<std::vector<Moments>> state;  // parallel to groups/params
  long steps = 0;

  void add_group(std::string name, std::vector<nn::Parameter<T>*> params, double lr0) {
    std::vector<Moments> s;
    for (auto* p : params)
      s.push_back({nn::Matrix<T>::Zero(p->value.rows(), p->value.cols()), nn::Matrix<T>::Zero(p->value.rows(), p->value.cols())});
    groups.push_back({std::move(name), std::move(params), lr0});
    state.push_back(std::move(s));
  }

  void zero_grad() {
    for (auto& g : groups)
      for (auto* p : g.params) p->zero_grad();
  }

  /// One update with per-group learning rates `lrs`.
  void step(const std::vector<double>& lrs) {
    ++steps;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const T lr = static_cast<T>(lrs.at(gi));
      for (std::size_t pi = 0; pi < groups[gi].params.size(); ++pi) {
        nn::Parameter<T>& p = *groups[gi].params[pi];
        Moments& s = state[gi][pi];
        const nn::Matrix<T> g = p.grad + static_cast<T>(weight_decay) * p.value;
        s.m = static_cast<T>(beta1) * s.m + static_cast<T>(1.0 - beta1) * g;
        s.v = static_cast<T>(beta2) * s.v + static_cast<T>(1.0 - beta2) * g.cwiseProduct(g);
        const T step_size = lr / static_cast<T>(bc1);
        const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
        p.value.array() -= step_size * s.m.array() / (s.v.array().sqrt() * denom_scale + static_cast<T>(eps));
      }
    }
  }
};

}  // namespace picpoint
