#pragma once

#include <cmath>
#include <vector>

#include "kdpos/layers.hpp"

namespace kdpos::nn {

// Bias-corrected Adam.
template <class S>
class Adam {
 public:
  explicit Adam(double lr = 0.001, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-7)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Param<S>*>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (Param<S>* p : params) {
      ensure_slots(*p);
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        double g = double(p->grad[i]);
        double m = b1_ * double(p->slot_a[i]) + (1.0 - b1_) * g;
        double v = b2_ * double(p->slot_b[i]) + (1.0 - b2_) * g * g;
        p->slot_a[i] = S(m);
        p->slot_b[i] = S(v);
        p->value[i] -= S(lr_ * (m / c1) / (std::sqrt(v / c2) + eps_));
      }
    }
  }

  long steps() const { return t_; }

 private:
  static void ensure_slots(Param<S>& p) {
    if (p.slot_a.numel() != p.value.numel()) {
      p.slot_a = Tensor<S>(p.value.shape());
      p.slot_b = Tensor<S>(p.value.shape());
    }
  }
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

// Adadelta with accumulated squared gradients and updates; the final delta is
// scaled by the learning rate.
template <class S>
class Adadelta {
 public:
  explicit Adadelta(double lr = 0.9, double rho = 0.95, double eps = 1e-7)
      : lr_(lr), rho_(rho), eps_(eps) {}

  void step(const std::vector<Param<S>*>& params) {
    for (Param<S>* p : params) {
      ensure_slots(*p);
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        double g = double(p->grad[i]);
        double acc_g = rho_ * double(p->slot_a[i]) + (1.0 - rho_) * g * g;
        double delta =
            -std::sqrt(double(p->slot_b[i]) + eps_) / std::sqrt(acc_g + eps_) * g;
        double acc_d = rho_ * double(p->slot_b[i]) + (1.0 - rho_) * delta * delta;
        p->slot_a[i] = S(acc_g);
        p->slot_b[i] = S(acc_d);
        p->value[i] += S(lr_ * delta);
      }
    }
  }

 private:
  static void ensure_slots(Param<S>& p) {
    if (p.slot_a.numel() != p.value.numel()) {
      p.slot_a = Tensor<S>(p.value.shape());
      p.slot_b = Tensor<S>(p.value.shape());
    }
  }
  double lr_, rho_, eps_;
};

}  // namespace kdpos::nn
