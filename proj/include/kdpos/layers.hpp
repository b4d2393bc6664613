#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "kdpos/rng.hpp"
#include "kdpos/tensor.hpp"

namespace kdpos::nn {

template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatRM<S>>;
template <class S>
using CMapM = Eigen::Map<const MatRM<S>>;

// A trainable tensor with its gradient and two optimizer state slots.
template <class S>
struct Param {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
  Tensor<S> slot_a;  // Adam m / Adadelta accumulated gradient
  Tensor<S> slot_b;  // Adam v / Adadelta accumulated update

  explicit Param(std::vector<std::size_t> shape)
      : value(shape), grad(std::move(shape)) {}
};

template <class S>
class Layer {
 public:
  virtual ~Layer() = default;

  // Forward pass on a batched input; caches whatever backward needs.
  virtual Tensor<S> forward(const Tensor<S>& x, bool training, Rng* rng) = 0;

  // Propagates the loss gradient; accumulates into parameter gradients.
  virtual Tensor<S> backward(const Tensor<S>& gy) = 0;

  virtual void collect(std::vector<Param<S>*>& out) { (void)out; }
  virtual void init(Rng& rng) { (void)rng; }

  // Per-sample output shape (no batch dimension).
  virtual std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const = 0;

  virtual std::string summary() const = 0;

  void set_name(std::string n) { name_ = std::move(n); }
  const std::string& name() const { return name_; }

 protected:
  std::string name_;

  static void glorot_fill(Tensor<S>& t, std::size_t fan_in,
                          std::size_t fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    for (std::size_t i = 0; i < t.numel(); ++i)
      t[i] = static_cast<S>(rng.uniform(-bound, bound));
  }

  [[noreturn]] void shape_fail(const Tensor<S>& x,
                               const std::string& expect) const {
    throw input_error("shape error in " + (name_.empty() ? summary() : name_) +
                      ": got " + x.shape_str() + ", expected " + expect);
  }
};

// ---------------------------------------------------------------------------
// Dense: y = x W + b applied over the last axis (time-distributed when the
// input still carries a time dimension).
template <class S>
class Dense : public Layer<S> {
 public:
  Dense(std::size_t in, std::size_t units)
      : in_(in), units_(units), w_({in, units}), b_({units}) {
    w_.name = "w";
    b_.name = "b";
  }

  void init(Rng& rng) override {
    this->glorot_fill(w_.value, in_, units_, rng);
    b_.value.fill(S(0));
  }

  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    if (x.rank() < 2 || x.shape().back() != in_)
      this->shape_fail(x, "(...," + std::to_string(in_) + ")");
    x_ = x;
    std::size_t m = x.numel() / in_;
    std::vector<std::size_t> ys = x.shape();
    ys.back() = units_;
    Tensor<S> y(ys);
    MapM<S> Y(y.data(), m, units_);
    Y.noalias() = CMapM<S>(x.data(), m, in_) * CMapM<S>(w_.value.data(), in_, units_);
    Y.rowwise() += Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(
        b_.value.data(), units_);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    std::size_t m = gy.numel() / units_;
    Tensor<S> gx(x_.shape());
    CMapM<S> G(gy.data(), m, units_);
    MapM<S>(gx.data(), m, in_).noalias() =
        G * CMapM<S>(w_.value.data(), in_, units_).transpose();
    MapM<S>(w_.grad.data(), in_, units_).noalias() +=
        CMapM<S>(x_.data(), m, in_).transpose() * G;
    Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>>(b_.grad.data(), units_) +=
        G.colwise().sum();
    return gx;
  }

  void collect(std::vector<Param<S>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    auto s = in;
    s.back() = units_;
    return s;
  }

  std::string summary() const override {
    return "dense(" + std::to_string(in_) + "->" + std::to_string(units_) + ")";
  }

 private:
  std::size_t in_, units_;
  Param<S> w_, b_;
  Tensor<S> x_;
};

// ---------------------------------------------------------------------------
template <class S>
class Relu : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    y_ = x;
    for (std::size_t i = 0; i < y_.numel(); ++i)
      if (y_[i] < S(0)) y_[i] = S(0);
    return y_;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> gx = gy;
    for (std::size_t i = 0; i < gx.numel(); ++i)
      if (y_[i] <= S(0)) gx[i] = S(0);
    return gx;
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    return in;
  }
  std::string summary() const override { return "relu"; }

 private:
  Tensor<S> y_;
};

// ---------------------------------------------------------------------------
// Inverted dropout: active only in training, inference is the identity.
template <class S>
class Dropout : public Layer<S> {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0)
      throw input_error("dropout rate must be in [0,1)");
  }

  Tensor<S> forward(const Tensor<S>& x, bool training, Rng* rng) override {
    if (!training || rate_ == 0.0 || rng == nullptr) {
      active_ = false;
      return x;
    }
    active_ = true;
    mask_ = Tensor<S>(x.shape());
    const S keep_scale = S(1.0 / (1.0 - rate_));
    Tensor<S> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      mask_[i] = rng->uniform01() < rate_ ? S(0) : keep_scale;
      y[i] = x[i] * mask_[i];
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    if (!active_) return gy;
    Tensor<S> gx = gy;
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] *= mask_[i];
    return gx;
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    return in;
  }
  std::string summary() const override {
    std::ostringstream os;
    os << "dropout(" << rate_ << ")";
    return os.str();
  }

 private:
  double rate_;
  bool active_ = false;
  Tensor<S> mask_;
};

// ---------------------------------------------------------------------------
// Conv1D with "same" padding, stride 1, over (batch, time, channels).
template <class S>
class Conv1D : public Layer<S> {
 public:
  Conv1D(std::size_t in_ch, std::size_t filters, std::size_t kernel)
      : cin_(in_ch), cout_(filters), k_(kernel),
        w_({kernel, in_ch, filters}), b_({filters}) {
    w_.name = "w";
    b_.name = "b";
  }

  void init(Rng& rng) override {
    this->glorot_fill(w_.value, k_ * cin_, k_ * cout_, rng);
    b_.value.fill(S(0));
  }

  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    if (x.rank() != 3 || x.dim(2) != cin_)
      this->shape_fail(x, "(batch,time," + std::to_string(cin_) + ")");
    bsz_ = x.dim(0);
    t_ = x.dim(1);
    const std::size_t pad_l = (k_ - 1) / 2;
    cols_ = Tensor<S>({bsz_ * t_, k_ * cin_});
    for (std::size_t b = 0; b < bsz_; ++b) {
      for (std::size_t t = 0; t < t_; ++t) {
        S* row = cols_.data() + (b * t_ + t) * k_ * cin_;
        for (std::size_t tap = 0; tap < k_; ++tap) {
          std::ptrdiff_t src = std::ptrdiff_t(t + tap) - std::ptrdiff_t(pad_l);
          if (src < 0 || src >= std::ptrdiff_t(t_)) continue;
          const S* in = x.data() + (b * t_ + std::size_t(src)) * cin_;
          std::copy(in, in + cin_, row + tap * cin_);
        }
      }
    }
    Tensor<S> y({bsz_, t_, cout_});
    MapM<S> Y(y.data(), bsz_ * t_, cout_);
    Y.noalias() = CMapM<S>(cols_.data(), bsz_ * t_, k_ * cin_) *
                  CMapM<S>(w_.value.data(), k_ * cin_, cout_);
    Y.rowwise() += Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(
        b_.value.data(), cout_);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    const std::size_t m = bsz_ * t_;
    CMapM<S> G(gy.data(), m, cout_);
    MapM<S>(w_.grad.data(), k_ * cin_, cout_).noalias() +=
        CMapM<S>(cols_.data(), m, k_ * cin_).transpose() * G;
    Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>>(b_.grad.data(), cout_) +=
        G.colwise().sum();

    Tensor<S> gcols({m, k_ * cin_});
    MapM<S>(gcols.data(), m, k_ * cin_).noalias() =
        G * CMapM<S>(w_.value.data(), k_ * cin_, cout_).transpose();

    Tensor<S> gx({bsz_, t_, cin_});
    const std::size_t pad_l = (k_ - 1) / 2;
    for (std::size_t b = 0; b < bsz_; ++b) {
      for (std::size_t t = 0; t < t_; ++t) {
        const S* row = gcols.data() + (b * t_ + t) * k_ * cin_;
        for (std::size_t tap = 0; tap < k_; ++tap) {
          std::ptrdiff_t src = std::ptrdiff_t(t + tap) - std::ptrdiff_t(pad_l);
          if (src < 0 || src >= std::ptrdiff_t(t_)) continue;
          S* out = gx.data() + (b * t_ + std::size_t(src)) * cin_;
          const S* g = row + tap * cin_;
          for (std::size_t c = 0; c < cin_; ++c) out[c] += g[c];
        }
      }
    }
    return gx;
  }

  void collect(std::vector<Param<S>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    return {in[0], cout_};
  }

  std::string summary() const override {
    return "conv1d(filters=" + std::to_string(cout_) +
           ",kernel=" + std::to_string(k_) + ",same)";
  }

 private:
  std::size_t cin_, cout_, k_;
  Param<S> w_, b_;
  Tensor<S> cols_;
  std::size_t bsz_ = 0, t_ = 0;
};

// ---------------------------------------------------------------------------
// Conv2D with "same" padding, stride 1, over (batch, height, width, channels).
template <class S>
class Conv2D : public Layer<S> {
 public:
  Conv2D(std::size_t in_ch, std::size_t filters, std::size_t kh, std::size_t kw)
      : cin_(in_ch), cout_(filters), kh_(kh), kw_(kw),
        w_({kh, kw, in_ch, filters}), b_({filters}) {
    w_.name = "w";
    b_.name = "b";
  }

  void init(Rng& rng) override {
    this->glorot_fill(w_.value, kh_ * kw_ * cin_, kh_ * kw_ * cout_, rng);
    b_.value.fill(S(0));
  }

  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    if (x.rank() != 4 || x.dim(3) != cin_)
      this->shape_fail(x, "(batch,h,w," + std::to_string(cin_) + ")");
    bsz_ = x.dim(0);
    h_ = x.dim(1);
    wd_ = x.dim(2);
    const std::size_t m = bsz_ * h_ * wd_;
    const std::size_t kc = kh_ * kw_ * cin_;
    const std::size_t pad_t = (kh_ - 1) / 2, pad_lft = (kw_ - 1) / 2;
    cols_ = Tensor<S>({m, kc});
    std::size_t row_i = 0;
    for (std::size_t b = 0; b < bsz_; ++b)
      for (std::size_t i = 0; i < h_; ++i)
        for (std::size_t j = 0; j < wd_; ++j, ++row_i) {
          S* row = cols_.data() + row_i * kc;
          for (std::size_t ti = 0; ti < kh_; ++ti) {
            std::ptrdiff_t si = std::ptrdiff_t(i + ti) - std::ptrdiff_t(pad_t);
            if (si < 0 || si >= std::ptrdiff_t(h_)) continue;
            for (std::size_t tj = 0; tj < kw_; ++tj) {
              std::ptrdiff_t sj = std::ptrdiff_t(j + tj) - std::ptrdiff_t(pad_lft);
              if (sj < 0 || sj >= std::ptrdiff_t(wd_)) continue;
              const S* in =
                  x.data() + ((b * h_ + std::size_t(si)) * wd_ + std::size_t(sj)) * cin_;
              std::copy(in, in + cin_, row + (ti * kw_ + tj) * cin_);
            }
          }
        }
    Tensor<S> y({bsz_, h_, wd_, cout_});
    MapM<S> Y(y.data(), m, cout_);
    Y.noalias() = CMapM<S>(cols_.data(), m, kc) *
                  CMapM<S>(w_.value.data(), kc, cout_);
    Y.rowwise() += Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(
        b_.value.data(), cout_);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    const std::size_t m = bsz_ * h_ * wd_;
    const std::size_t kc = kh_ * kw_ * cin_;
    CMapM<S> G(gy.data(), m, cout_);
    MapM<S>(w_.grad.data(), kc, cout_).noalias() +=
        CMapM<S>(cols_.data(), m, kc).transpose() * G;
    Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>>(b_.grad.data(), cout_) +=
        G.colwise().sum();

    Tensor<S> gcols({m, kc});
    MapM<S>(gcols.data(), m, kc).noalias() =
        G * CMapM<S>(w_.value.data(), kc, cout_).transpose();

    Tensor<S> gx({bsz_, h_, wd_, cin_});
    const std::size_t pad_t = (kh_ - 1) / 2, pad_lft = (kw_ - 1) / 2;
    std::size_t row_i = 0;
    for (std::size_t b = 0; b < bsz_; ++b)
      for (std::size_t i = 0; i < h_; ++i)
        for (std::size_t j = 0; j < wd_; ++j, ++row_i) {
          const S* row = gcols.data() + row_i * kc;
          for (std::size_t ti = 0; ti < kh_; ++ti) {
            std::ptrdiff_t si = std::ptrdiff_t(i + ti) - std::ptrdiff_t(pad_t);
            if (si < 0 || si >= std::ptrdiff_t(h_)) continue;
            for (std::size_t tj = 0; tj < kw_; ++tj) {
              std::ptrdiff_t sj = std::ptrdiff_t(j + tj) - std::ptrdiff_t(pad_lft);
              if (sj < 0 || sj >= std::ptrdiff_t(wd_)) continue;
              S* out = gx.data() +
                       ((b * h_ + std::size_t(si)) * wd_ + std::size_t(sj)) * cin_;
              const S* g = row + (ti * kw_ + tj) * cin_;
              for (std::size_t c = 0; c < cin_; ++c) out[c] += g[c];
            }
          }
        }
    return gx;
  }

  void collect(std::vector<Param<S>*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    return {in[0], in[1], cout_};
  }

  std::string summary() const override {
    return "conv2d(filters=" + std::to_string(cout_) + ",kernel=" +
           std::to_string(kh_) + "x" + std::to_string(kw_) + ",same)";
  }

 private:
  std::size_t cin_, cout_, kh_, kw_;
  Param<S> w_, b_;
  Tensor<S> cols_;
  std::size_t bsz_ = 0, h_ = 0, wd_ = 0;
};

// ---------------------------------------------------------------------------
// Non-overlapping max pooling over time; remainder samples are dropped.
// Gradient flows to the first maximal element of each window.
template <class S>
class MaxPool1D : public Layer<S> {
 public:
  explicit MaxPool1D(std::size_t size) : p_(size) {
    if (size < 1) throw input_error("pool size must be >= 1");
  }

  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    if (x.rank() != 3) this->shape_fail(x, "(batch,time,ch)");
    bsz_ = x.dim(0);
    t_ = x.dim(1);
    c_ = x.dim(2);
    const std::size_t to = t_ / p_;
    if (to == 0)
      throw input_error("shape error: pool size " + std::to_string(p_) +
                        " exceeds time length " + std::to_string(t_));
    Tensor<S> y({bsz_, to, c_});
    arg_.assign(y.numel(), 0);
    for (std::size_t b = 0; b < bsz_; ++b)
      for (std::size_t o = 0; o < to; ++o)
        for (std::size_t c = 0; c < c_; ++c) {
          std::size_t base = (b * t_ + o * p_) * c_ + c;
          S best = x[base];
          std::uint32_t bi = 0;
          for (std::size_t k = 1; k < p_; ++k) {
            S v = x[base + k * c_];
            if (v > best) {
              best = v;
              bi = std::uint32_t(k);
            }
          }
          std::size_t oi = (b * to + o) * c_ + c;
          y[oi] = best;
          arg_[oi] = bi;
        }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    const std::size_t to = t_ / p_;
    Tensor<S> gx({bsz_, t_, c_});
    for (std::size_t b = 0; b < bsz_; ++b)
      for (std::size_t o = 0; o < to; ++o)
        for (std::size_t c = 0; c < c_; ++c) {
          std::size_t oi = (b * to + o) * c_ + c;
          gx[(b * t_ + o * p_ + arg_[oi]) * c_ + c] += gy[oi];
        }
    return gx;
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    if (in[0] / p_ == 0)
      throw input_error("pool size " + std::to_string(p_) +
                        " exceeds input length " + std::to_string(in[0]));
    return {in[0] / p_, in[1]};
  }

  std::string summary() const override {
    return "maxpool1d(" + std::to_string(p_) + ")";
  }

 private:
  std::size_t p_, bsz_ = 0, t_ = 0, c_ = 0;
  std::vector<std::uint32_t> arg_;
};

// ---------------------------------------------------------------------------
template <class S>
class MaxPool2D : public Layer<S> {
 public:
  MaxPool2D(std::size_t ph, std::size_t pw) : ph_(ph), pw_(pw) {
    if (ph < 1 || pw < 1) throw input_error("pool size must be >= 1");
  }

  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    if (x.rank() != 4) this->shape_fail(x, "(batch,h,w,ch)");
    bsz_ = x.dim(0);
    h_ = x.dim(1);
    w_ = x.dim(2);
    c_ = x.dim(3);
    const std::size_t ho = h_ / ph_, wo = w_ / pw_;
    if (ho == 0 || wo == 0)
      throw input_error("shape error: pool " + std::to_string(ph_) + "x" +
                        std::to_string(pw_) + " exceeds input " +
                        std::to_string(h_) + "x" + std::to_string(w_));
    Tensor<S> y({bsz_, ho, wo, c_});
    arg_.assign(y.numel(), 0);
    for (std::size_t b = 0; b < bsz_; ++b)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j)
          for (std::size_t c = 0; c < c_; ++c) {
            S best = S(0);
            std::uint32_t bi = 0;
            bool first = true;
            for (std::size_t ki = 0; ki < ph_; ++ki)
              for (std::size_t kj = 0; kj < pw_; ++kj) {
                S v = x[((b * h_ + i * ph_ + ki) * w_ + j * pw_ + kj) * c_ + c];
                if (first || v > best) {
                  best = v;
                  bi = std::uint32_t(ki * pw_ + kj);
                  first = false;
                }
              }
            std::size_t oi = ((b * ho + i) * wo + j) * c_ + c;
            y[oi] = best;
            arg_[oi] = bi;
          }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    const std::size_t ho = h_ / ph_, wo = w_ / pw_;
    Tensor<S> gx({bsz_, h_, w_, c_});
    for (std::size_t b = 0; b < bsz_; ++b)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j)
          for (std::size_t c = 0; c < c_; ++c) {
            std::size_t oi = ((b * ho + i) * wo + j) * c_ + c;
            std::size_t ki = arg_[oi] / pw_, kj = arg_[oi] % pw_;
            gx[((b * h_ + i * ph_ + ki) * w_ + j * pw_ + kj) * c_ + c] += gy[oi];
          }
    return gx;
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    if (in[0] / ph_ == 0 || in[1] / pw_ == 0)
      throw input_error("pool " + std::to_string(ph_) + "x" +
                        std::to_string(pw_) + " exceeds input");
    return {in[0] / ph_, in[1] / pw_, in[2]};
  }

  std::string summary() const override {
    return "maxpool2d(" + std::to_string(ph_) + "x" + std::to_string(pw_) + ")";
  }

 private:
  std::size_t ph_, pw_, bsz_ = 0, h_ = 0, w_ = 0, c_ = 0;
  std::vector<std::uint32_t> arg_;
};

// ---------------------------------------------------------------------------
template <class S>
class GlobalAvgPool1D : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    if (x.rank() != 3) this->shape_fail(x, "(batch,time,ch)");
    bsz_ = x.dim(0);
    t_ = x.dim(1);
    c_ = x.dim(2);
    Tensor<S> y({bsz_, c_});
    const S inv = S(1) / S(t_);
    for (std::size_t b = 0; b < bsz_; ++b)
      for (std::size_t t = 0; t < t_; ++t)
        for (std::size_t c = 0; c < c_; ++c)
          y[b * c_ + c] += x[(b * t_ + t) * c_ + c] * inv;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> gx({bsz_, t_, c_});
    const S inv = S(1) / S(t_);
    for (std::size_t b = 0; b < bsz_; ++b)
      for (std::size_t t = 0; t < t_; ++t)
        for (std::size_t c = 0; c < c_; ++c)
          gx[(b * t_ + t) * c_ + c] = gy[b * c_ + c] * inv;
    return gx;
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    return {in[1]};
  }
  std::string summary() const override { return "globalavgpool1d"; }

 private:
  std::size_t bsz_ = 0, t_ = 0, c_ = 0;
};

// ---------------------------------------------------------------------------
template <class S>
class Flatten : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    in_shape_ = x.shape();
    std::size_t b = x.dim(0);
    return x.reshaped({b, x.numel() / b});
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    return gy.reshaped(in_shape_);
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    std::size_t n = 1;
    for (std::size_t d : in) n *= d;
    return {n};
  }
  std::string summary() const override { return "flatten"; }

 private:
  std::vector<std::size_t> in_shape_;
};

// ---------------------------------------------------------------------------
// Single-layer LSTM over (batch, time, features). Gate order i,f,g,o; cell
// candidate uses tanh; forget-gate bias starts at 1.
template <class S>
class Lstm : public Layer<S> {
 public:
  Lstm(std::size_t in, std::size_t units, bool return_sequences = true)
      : d_(in), h_(units), rs_(return_sequences),
        wx_({in, 4 * units}), wh_({units, 4 * units}), b_({4 * units}) {
    wx_.name = "wx";
    wh_.name = "wh";
    b_.name = "b";
  }

  void init(Rng& rng) override {
    this->glorot_fill(wx_.value, d_, 4 * h_, rng);
    this->glorot_fill(wh_.value, h_, 4 * h_, rng);
    b_.value.fill(S(0));
    for (std::size_t i = h_; i < 2 * h_; ++i) b_.value[i] = S(1);
  }

  Tensor<S> forward(const Tensor<S>& x, bool, Rng*) override {
    if (x.rank() != 3 || x.dim(2) != d_)
      this->shape_fail(x, "(batch,time," + std::to_string(d_) + ")");
    x_ = x;
    bsz_ = x.dim(0);
    t_ = x.dim(1);
    gates_ = Tensor<S>({t_, bsz_, 4 * h_});
    cells_ = Tensor<S>({t_, bsz_, h_});
    tanhc_ = Tensor<S>({t_, bsz_, h_});
    hs_ = Tensor<S>({t_, bsz_, h_});

    Tensor<S> hprev({bsz_, h_}), cprev({bsz_, h_});
    Tensor<S> xt({bsz_, d_});
    for (std::size_t t = 0; t < t_; ++t) {
      for (std::size_t b = 0; b < bsz_; ++b)
        std::copy(x.data() + (b * t_ + t) * d_, x.data() + (b * t_ + t + 1) * d_,
                  xt.data() + b * d_);
      S* z = gates_.data() + t * bsz_ * 4 * h_;
      MapM<S> Z(z, bsz_, 4 * h_);
      Z.noalias() = CMapM<S>(xt.data(), bsz_, d_) *
                    CMapM<S>(wx_.value.data(), d_, 4 * h_);
      Z.noalias() += CMapM<S>(hprev.data(), bsz_, h_) *
                     CMapM<S>(wh_.value.data(), h_, 4 * h_);
      Z.rowwise() += Eigen::Map<const Eigen::RowVector<S, Eigen::Dynamic>>(
          b_.value.data(), 4 * h_);

      S* ct = cells_.data() + t * bsz_ * h_;
      S* tc = tanhc_.data() + t * bsz_ * h_;
      S* ht = hs_.data() + t * bsz_ * h_;
      for (std::size_t b = 0; b < bsz_; ++b) {
        S* zb = z + b * 4 * h_;
        for (std::size_t u = 0; u < h_; ++u) {
          S ig = sigmoid(zb[u]);
          S fg = sigmoid(zb[h_ + u]);
          S gg = std::tanh(zb[2 * h_ + u]);
          S og = sigmoid(zb[3 * h_ + u]);
          zb[u] = ig;
          zb[h_ + u] = fg;
          zb[2 * h_ + u] = gg;
          zb[3 * h_ + u] = og;
          S c = fg * cprev[b * h_ + u] + ig * gg;
          ct[b * h_ + u] = c;
          S tch = std::tanh(c);
          tc[b * h_ + u] = tch;
          ht[b * h_ + u] = og * tch;
        }
      }
      std::copy(ct, ct + bsz_ * h_, cprev.data());
      std::copy(ht, ht + bsz_ * h_, hprev.data());
    }

    if (rs_) {
      Tensor<S> y({bsz_, t_, h_});
      for (std::size_t t = 0; t < t_; ++t)
        for (std::size_t b = 0; b < bsz_; ++b)
          std::copy(hs_.data() + (t * bsz_ + b) * h_,
                    hs_.data() + (t * bsz_ + b + 1) * h_,
                    y.data() + (b * t_ + t) * h_);
      return y;
    }
    Tensor<S> y({bsz_, h_});
    std::copy(hs_.data() + (t_ - 1) * bsz_ * h_, hs_.data() + t_ * bsz_ * h_,
              y.data());
    return y;
  }

  Tensor<S> backward(const Tensor<S>& gy) override {
    Tensor<S> gx({bsz_, t_, d_});
    Tensor<S> dh({bsz_, h_}), dc({bsz_, h_}), dz({bsz_, 4 * h_});
    Tensor<S> xt({bsz_, d_}), gxt({bsz_, d_});

    for (std::size_t tt = t_; tt-- > 0;) {
      // Inject the output gradient for this step.
      if (rs_) {
        for (std::size_t b = 0; b < bsz_; ++b)
          for (std::size_t u = 0; u < h_; ++u)
            dh[b * h_ + u] += gy[(b * t_ + tt) * h_ + u];
      } else if (tt == t_ - 1) {
        std::copy(gy.data(), gy.data() + bsz_ * h_, dh.data());
      }

      const S* z = gates_.data() + tt * bsz_ * 4 * h_;
      const S* tc = tanhc_.data() + tt * bsz_ * h_;
      const S* cprev =
          tt == 0 ? nullptr : cells_.data() + (tt - 1) * bsz_ * h_;
      for (std::size_t b = 0; b < bsz_; ++b) {
        const S* zb = z + b * 4 * h_;
        for (std::size_t u = 0; u < h_; ++u) {
          S ig = zb[u], fg = zb[h_ + u], gg = zb[2 * h_ + u], og = zb[3 * h_ + u];
          S tch = tc[b * h_ + u];
          S dht = dh[b * h_ + u];
          S dct = dc[b * h_ + u] + dht * og * (S(1) - tch * tch);
          S cp = cprev ? cprev[b * h_ + u] : S(0);
          dz[b * 4 * h_ + u] = dct * gg * ig * (S(1) - ig);
          dz[b * 4 * h_ + h_ + u] = dct * cp * fg * (S(1) - fg);
          dz[b * 4 * h_ + 2 * h_ + u] = dct * ig * (S(1) - gg * gg);
          dz[b * 4 * h_ + 3 * h_ + u] = dht * tch * og * (S(1) - og);
          dc[b * h_ + u] = dct * fg;
        }
      }

      for (std::size_t b = 0; b < bsz_; ++b)
        std::copy(x_.data() + (b * t_ + tt) * d_,
                  x_.data() + (b * t_ + tt + 1) * d_, xt.data() + b * d_);
      CMapM<S> DZ(dz.data(), bsz_, 4 * h_);
      MapM<S>(wx_.grad.data(), d_, 4 * h_).noalias() +=
          CMapM<S>(xt.data(), bsz_, d_).transpose() * DZ;
      Eigen::Map<Eigen::RowVector<S, Eigen::Dynamic>>(b_.grad.data(), 4 * h_) +=
          DZ.colwise().sum();
      if (tt > 0) {
        const S* hp = hs_.data() + (tt - 1) * bsz_ * h_;
        MapM<S>(wh_.grad.data(), h_, 4 * h_).noalias() +=
            CMapM<S>(hp, bsz_, h_).transpose() * DZ;
        MapM<S>(dh.data(), bsz_, h_).noalias() =
            DZ * CMapM<S>(wh_.value.data(), h_, 4 * h_).transpose();
      }
      MapM<S>(gxt.data(), bsz_, d_).noalias() =
          DZ * CMapM<S>(wx_.value.data(), d_, 4 * h_).transpose();
      for (std::size_t b = 0; b < bsz_; ++b)
        std::copy(gxt.data() + b * d_, gxt.data() + (b + 1) * d_,
                  gx.data() + (b * t_ + tt) * d_);
    }
    return gx;
  }

  void collect(std::vector<Param<S>*>& out) override {
    out.push_back(&wx_);
    out.push_back(&wh_);
    out.push_back(&b_);
  }

  std::vector<std::size_t> out_shape(
      const std::vector<std::size_t>& in) const override {
    if (rs_) return {in[0], h_};
    return {h_};
  }

  std::string summary() const override {
    return "lstm(units=" + std::to_string(h_) +
           (rs_ ? ",return_sequences" : "") + ")";
  }

 private:
  static S sigmoid(S v) { return S(1) / (S(1) + std::exp(-v)); }

  std::size_t d_, h_;
  bool rs_;
  Param<S> wx_, wh_, b_;
  Tensor<S> x_, gates_, cells_, tanhc_, hs_;
  std::size_t bsz_ = 0, t_ = 0;
};

}  // namespace kdpos::nn
