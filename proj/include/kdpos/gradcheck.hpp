#pragma once

#include <functional>

#include "kdpos/model.hpp"

namespace kdpos::nn {

// Central finite differences over every parameter scalar against the
// reverse-mode gradients. The loss closure must return the scalar loss and
// fill `glogits` with the loss gradient at the logits.
template <class S>
struct LossProbe {
  std::function<double(const Tensor<S>& logits, Tensor<S>* glogits)> eval;
};

template <class S>
double gradient_check(Model<S>& m, const Tensor<S>& input,
                      const LossProbe<S>& loss, double eps = 1e-4) {
  m.zero_grads();
  Tensor<S> logits = m.forward(input, false, nullptr);
  Tensor<S> glogits(logits.shape());
  loss.eval(logits, &glogits);
  m.backward(glogits);

  double worst = 0.0;
  for (Param<S>* p : m.params()) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const S saved = p->value[i];
      p->value[i] = saved + S(eps);
      double lp = loss.eval(m.forward(input, false, nullptr), nullptr);
      p->value[i] = saved - S(eps);
      double lm = loss.eval(m.forward(input, false, nullptr), nullptr);
      p->value[i] = saved;
      double fd = (lp - lm) / (2.0 * eps);
      double ad = double(p->grad[i]);
      double rel = std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace kdpos::nn
