#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "kdpos/tensor.hpp"

namespace kdpos::nn {

inline constexpr double kProbFloor = 1e-12;

// Row-wise stable softmax of a (batch, K) tensor.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& logits) {
  if (logits.rank() != 2) throw input_error("shape error: softmax needs (batch,K)");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  Tensor<S> p(logits.shape());
  for (std::size_t r = 0; r < b; ++r) {
    const S* z = logits.data() + r * k;
    S* pr = p.data() + r * k;
    S mx = z[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    S sum = S(0);
    for (std::size_t j = 0; j < k; ++j) {
      pr[j] = std::exp(z[j] - mx);
      sum += pr[j];
    }
    for (std::size_t j = 0; j < k; ++j) pr[j] /= sum;
  }
  return p;
}

template <class S>
void check_row_stochastic(const Tensor<S>& p, const char* what) {
  if (p.rank() != 2)
    throw input_error(std::string("shape error: ") + what + " needs (batch,K)");
  for (std::size_t r = 0; r < p.dim(0); ++r) {
    double sum = 0;
    for (std::size_t j = 0; j < p.dim(1); ++j) sum += double(p.at(r, j));
    if (std::abs(sum - 1.0) > 1e-6)
      throw input_error(std::string(what) + ": rows must sum to 1 (row " +
                        std::to_string(r) + " sums to " + std::to_string(sum) +
                        ")");
  }
}

// Mean over the batch of -sum(y * log(p)), probabilities clamped at 1e-12.
template <class S>
double categorical_crossentropy(const Tensor<S>& probs,
                                const Tensor<S>& onehot) {
  if (!same_shape(probs, onehot))
    throw input_error("shape error: probs and onehot differ");
  check_row_stochastic(probs, "categorical_crossentropy");
  const std::size_t b = probs.dim(0), k = probs.dim(1);
  double total = 0;
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < k; ++j) {
      double y = double(onehot.at(r, j));
      if (y != 0.0)
        total -= y * std::log(std::max(double(probs.at(r, j)), kProbFloor));
    }
  return total / double(b);
}

// Mean over the batch of log-sum-exp(z) - z[label].
template <class S>
double sparse_ce_from_logits(const Tensor<S>& logits,
                             const std::vector<std::uint32_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw input_error("shape error: logits/labels mismatch");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  double total = 0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= k)
      throw input_error("label out of range: " + std::to_string(labels[r]));
    const S* z = logits.data() + r * k;
    double mx = double(z[0]);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, double(z[j]));
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(double(z[j]) - mx);
    total += mx + std::log(sum) - double(z[labels[r]]);
  }
  return total / double(b);
}

// Gradient of sparse_ce_from_logits with respect to the logits.
template <class S>
Tensor<S> sparse_ce_grad(const Tensor<S>& logits,
                         const std::vector<std::uint32_t>& labels) {
  Tensor<S> g = softmax_rows(logits);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  const S inv = S(1.0 / double(b));
  for (std::size_t r = 0; r < b; ++r) {
    g.at(r, labels[r]) -= S(1);
    for (std::size_t j = 0; j < k; ++j) g.at(r, j) *= inv;
  }
  return g;
}

// Mean over the batch of sum(p * log(p/q)); p==0 terms contribute 0, q is
// clamped at 1e-12.
template <class S>
double kld(const Tensor<S>& p, const Tensor<S>& q) {
  if (!same_shape(p, q)) throw input_error("shape error: kld operands differ");
  check_row_stochastic(p, "kld p");
  check_row_stochastic(q, "kld q");
  const std::size_t b = p.dim(0), k = p.dim(1);
  double total = 0;
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < k; ++j) {
      double pv = double(p.at(r, j));
      if (pv > 0.0)
        total += pv * std::log(pv / std::max(double(q.at(r, j)), kProbFloor));
    }
  return total / double(b);
}

template <class S>
double accuracy(const Tensor<S>& logits,
                const std::vector<std::uint32_t>& labels) {
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::size_t hit = 0;
  for (std::size_t r = 0; r < b; ++r) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.at(r, j) > logits.at(r, arg)) arg = j;
    if (arg == labels[r]) ++hit;
  }
  return b ? double(hit) / double(b) : 0.0;
}

}  // namespace kdpos::nn
