#pragma once

#include <climits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdpos/builders.hpp"
#include "kdpos/losses.hpp"
#include "kdpos/optim.hpp"
#include "kdpos/window.hpp"

namespace kdpos::distill {

using signal::WindowDataset;
using signal::WindowMode;

enum class OptKind { adam, adadelta };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  std::optional<int> early_stop_patience = 20;
  OptKind optimizer = OptKind::adam;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
};

struct KdConfig {
  double alpha = 0.1;
  double temperature = 10.0;
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 0.001;  // Adam
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_accuracy;
  int best_epoch = -1;
  bool restored = false;

  int epochs_run() const { return int(train_loss.size()); }
};

// --- KD losses ---------------------------------------------------------------

template <class S>
nn::Tensor<S> tempered_softmax(const nn::Tensor<S>& logits, double temperature) {
  if (temperature <= 0) throw input_error("temperature must be > 0");
  nn::Tensor<S> scaled = logits;
  const S inv = S(1.0 / temperature);
  for (std::size_t i = 0; i < scaled.numel(); ++i) scaled[i] *= inv;
  return nn::softmax_rows(scaled);
}

// KLD(softened teacher, softened student) * T^2.
template <class S>
double distillation_loss(const nn::Tensor<S>& teacher_logits,
                         const nn::Tensor<S>& student_logits,
                         double temperature) {
  if (!nn::same_shape(teacher_logits, student_logits))
    throw input_error("shape error: teacher/student logits differ");
  return nn::kld(tempered_softmax(teacher_logits, temperature),
                 tempered_softmax(student_logits, temperature)) *
         temperature * temperature;
}

// Gradient of distillation_loss with respect to the student logits:
// T * (softmax(zs/T) - softmax(zt/T)) / batch.
template <class S>
nn::Tensor<S> distillation_grad(const nn::Tensor<S>& teacher_logits,
                                const nn::Tensor<S>& student_logits,
                                double temperature) {
  nn::Tensor<S> p = tempered_softmax(teacher_logits, temperature);
  nn::Tensor<S> q = tempered_softmax(student_logits, temperature);
  const std::size_t b = q.dim(0);
  const S scale = S(temperature / double(b));
  for (std::size_t i = 0; i < q.numel(); ++i) q[i] = (q[i] - p[i]) * scale;
  return q;
}

inline double total_kd_loss(double student_loss, double distill_loss,
                            double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw input_error("alpha must be in [0,1]");
  return alpha * student_loss + (1.0 - alpha) * distill_loss;
}

// --- batch assembly ----------------------------------------------------------

// (batch, win_len, channels) sequence layout for the teacher.
template <class S>
nn::Tensor<S> batch_seq(const WindowDataset& ds,
                        const std::vector<std::size_t>& idx) {
  nn::Tensor<S> x({idx.size(), ds.win_len, ds.channels});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const float* w = ds.window(idx[b]);
    for (std::size_t c = 0; c < ds.channels; ++c)
      for (std::size_t t = 0; t < ds.win_len; ++t)
        x[(b * ds.win_len + t) * ds.channels + c] = S(w[c * ds.win_len + t]);
  }
  return x;
}

// (batch, win_len, 3, 1) image layout for the students; uses the first three
// (RSSI) channels, so a teacher-mode dataset can serve as the aligned view.
template <class S>
nn::Tensor<S> batch_img(const WindowDataset& ds,
                        const std::vector<std::size_t>& idx) {
  if (ds.channels < 3)
    throw input_error("student batches need at least 3 channels");
  nn::Tensor<S> x({idx.size(), ds.win_len, std::size_t(3), std::size_t(1)});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const float* w = ds.window(idx[b]);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < ds.win_len; ++t)
        x[(b * ds.win_len + t) * 3 + c] = S(w[c * ds.win_len + t]);
  }
  return x;
}

inline std::vector<std::uint32_t> batch_labels(
    const WindowDataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<std::uint32_t> y(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    int cls = ds.labels[idx[b]];
    if (cls < 1 || cls > 4)
      throw input_error("label out of range: " + std::to_string(cls));
    y[b] = std::uint32_t(cls - 1);
  }
  return y;
}

// Batched inference logits for a whole dataset.
template <class S>
nn::Tensor<S> predict_logits(nn::Model<S>& model, const WindowDataset& ds,
                             std::size_t eval_batch = 256) {
  const bool seq = model.input_shape.size() == 2;
  nn::Tensor<S> out({ds.size(), nn::kNumClasses});
  for (std::size_t off = 0; off < ds.size(); off += eval_batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = off; i < std::min(ds.size(), off + eval_batch); ++i)
      idx.push_back(i);
    nn::Tensor<S> x = seq ? batch_seq<S>(ds, idx) : batch_img<S>(ds, idx);
    nn::Tensor<S> z = model.forward(x, false, nullptr);
    std::copy(z.data(), z.data() + z.numel(),
              out.data() + off * nn::kNumClasses);
  }
  return out;
}

// --- training ----------------------------------------------------------------

namespace detail {

// Session-stratified validation split: a seeded fraction of every session's
// windows goes to validation.
inline void split_train_val(const WindowDataset& ds, double fraction,
                            std::uint64_t seed,
                            std::vector<std::size_t>* train,
                            std::vector<std::size_t>* val) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::size_t>>
      groups;
  for (std::size_t i = 0; i < ds.size(); ++i)
    groups[{ds.prov[i].participant, ds.prov[i].session}].push_back(i);
  Rng rng(seed);
  for (auto& [key, idx] : groups) {
    rng.shuffle(idx);
    std::size_t nval = std::size_t(fraction * double(idx.size()) + 0.5);
    if (idx.size() >= 2 && nval == 0 && fraction > 0) nval = 1;
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < nval ? val : train)->push_back(idx[i]);
  }
  std::sort(train->begin(), train->end());
  std::sort(val->begin(), val->end());
}

template <class S>
double eval_accuracy(nn::Model<S>& model, const WindowDataset& ds,
                     const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  const bool seq = model.input_shape.size() == 2;
  std::size_t hit = 0;
  constexpr std::size_t kBatch = 256;
  for (std::size_t off = 0; off < idx.size(); off += kBatch) {
    std::vector<std::size_t> part(
        idx.begin() + std::ptrdiff_t(off),
        idx.begin() + std::ptrdiff_t(std::min(idx.size(), off + kBatch)));
    nn::Tensor<S> x = seq ? batch_seq<S>(ds, part) : batch_img<S>(ds, part);
    nn::Tensor<S> z = model.forward(x, false, nullptr);
    auto y = batch_labels(ds, part);
    hit += std::size_t(nn::accuracy(z, y) * double(part.size()) + 0.5);
  }
  return double(hit) / double(idx.size());
}

}  // namespace detail

// Minibatch supervised training with cross-entropy on the logits, optional
// early stopping on validation accuracy and best-weight restoration.
template <class S>
TrainHistory train_supervised(nn::Model<S>& model, const WindowDataset& ds,
                              const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw input_error("epochs must be >= 1");
  if (cfg.batch_size < 1) throw input_error("batch_size must be >= 1");
  if (cfg.validation_fraction <= 0 || cfg.validation_fraction >= 1)
    throw input_error("validation_fraction must be in (0,1)");

  std::vector<std::size_t> train_idx, val_idx;
  detail::split_train_val(ds, cfg.validation_fraction,
                          derive_seed(cfg.seed, "valsplit"), &train_idx,
                          &val_idx);
  if (train_idx.size() < std::size_t(cfg.batch_size))
    throw input_error("training error: dataset too small for one batch (" +
                      std::to_string(train_idx.size()) + " < " +
                      std::to_string(cfg.batch_size) + ")");

  const bool seq = model.input_shape.size() == 2;
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  nn::Adam<S> adam(cfg.learning_rate);
  nn::Adadelta<S> adadelta(cfg.learning_rate);
  auto params = model.params();

  TrainHistory hist;
  double best_acc = -1.0;
  int since_best = 0;
  std::vector<nn::Tensor<S>> best_params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t off = 0; off < train_idx.size();
         off += std::size_t(cfg.batch_size)) {
      std::vector<std::size_t> part(
          train_idx.begin() + std::ptrdiff_t(off),
          train_idx.begin() +
              std::ptrdiff_t(std::min(train_idx.size(),
                                      off + std::size_t(cfg.batch_size))));
      nn::Tensor<S> x = seq ? batch_seq<S>(ds, part) : batch_img<S>(ds, part);
      auto y = batch_labels(ds, part);
      model.zero_grads();
      nn::Tensor<S> z = model.forward(x, true, &dropout_rng);
      loss_sum += nn::sparse_ce_from_logits(z, y) * double(part.size());
      seen += part.size();
      model.backward(nn::sparse_ce_grad(z, y));
      if (cfg.optimizer == OptKind::adam)
        adam.step(params);
      else
        adadelta.step(params);
    }
    hist.train_loss.push_back(loss_sum / double(seen));

    double acc = detail::eval_accuracy(model, ds, val_idx);
    hist.val_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      hist.best_epoch = epoch;
      since_best = 0;
      best_params = model.snapshot_params();
    } else if (++since_best >= cfg.early_stop_patience.value_or(INT_MAX)) {
      break;
    }
  }

  if (!best_params.empty()) {
    model.restore_params(best_params);
    hist.restored = true;
  }
  return hist;
}

// Teacher: Adam on the 6-channel windows.
template <class S>
TrainHistory train_teacher(nn::Model<S>& teacher, const WindowDataset& ds,
                           const TrainConfig& cfg) {
  if (ds.mode != WindowMode::teacher || ds.channels != nn::kTeacherChannels)
    throw input_error("train_teacher needs a teacher-mode (6 channel) dataset");
  return train_supervised(teacher, ds, cfg);
}

// Baseline student: Adadelta on the 3-channel windows.
template <class S>
TrainHistory train_baseline_student(nn::Model<S>& student,
                                    const WindowDataset& ds,
                                    const TrainConfig& cfg) {
  if (ds.channels < nn::kStudentChannels)
    throw input_error("train_baseline_student needs a 3-channel dataset");
  return train_supervised(student, ds, cfg);
}

// Checks that a teacher/student dataset pair is window-aligned: same count,
// same labels, identical RSSI channels.
inline void check_alignment(const WindowDataset& ds6, const WindowDataset& ds3) {
  if (ds6.size() != ds3.size() || ds6.win_len != ds3.win_len)
    throw input_error("alignment error: datasets have different window counts");
  if (ds6.labels != ds3.labels)
    throw input_error("alignment error: datasets have different labels");
  const std::size_t n = 3 * ds6.win_len;
  for (std::size_t w = 0; w < ds6.size(); ++w)
    if (!std::equal(ds6.window(w), ds6.window(w) + n, ds3.window(w)))
      throw input_error("alignment error: RSSI channels differ at window " +
                        std::to_string(w));
}

// Distilled student: fixed-epoch Adam on total_kd_loss against the frozen
// teacher. Teacher logits are computed once up front (the teacher does not
// change, so per-epoch recomputation would be identical).
template <class S>
TrainHistory train_distilled_student(nn::Model<S>& teacher,
                                     nn::Model<S>& student,
                                     const WindowDataset& ds6,
                                     const WindowDataset& ds3,
                                     const KdConfig& kd, std::uint64_t seed) {
  if (kd.alpha < 0 || kd.alpha > 1) throw input_error("alpha must be in [0,1]");
  if (kd.temperature <= 0) throw input_error("temperature must be > 0");
  check_alignment(ds6, ds3);

  nn::Tensor<S> teacher_logits = predict_logits(teacher, ds6);

  std::vector<std::size_t> idx(ds3.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  Rng shuffle_rng(derive_seed(seed, "shuffle"));
  Rng dropout_rng(derive_seed(seed, "dropout"));
  nn::Adam<S> adam(kd.learning_rate);
  auto params = student.params();

  TrainHistory hist;
  for (int epoch = 0; epoch < kd.epochs; ++epoch) {
    shuffle_rng.shuffle(idx);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t off = 0; off < idx.size();
         off += std::size_t(kd.batch_size)) {
      std::vector<std::size_t> part(
          idx.begin() + std::ptrdiff_t(off),
          idx.begin() + std::ptrdiff_t(
                            std::min(idx.size(), off + std::size_t(kd.batch_size))));
      nn::Tensor<S> x = batch_img<S>(ds3, part);
      auto y = batch_labels(ds3, part);
      nn::Tensor<S> zt({part.size(), nn::kNumClasses});
      for (std::size_t b = 0; b < part.size(); ++b)
        std::copy(teacher_logits.data() + part[b] * nn::kNumClasses,
                  teacher_logits.data() + (part[b] + 1) * nn::kNumClasses,
                  zt.data() + b * nn::kNumClasses);

      student.zero_grads();
      nn::Tensor<S> zs = student.forward(x, true, &dropout_rng);

      double sl = nn::sparse_ce_from_logits(zs, y);
      double dl = distillation_loss(zt, zs, kd.temperature);
      loss_sum += total_kd_loss(sl, dl, kd.alpha) * double(part.size());
      seen += part.size();

      nn::Tensor<S> g = nn::sparse_ce_grad(zs, y);
      nn::Tensor<S> gd = distillation_grad(zt, zs, kd.temperature);
      for (std::size_t i = 0; i < g.numel(); ++i)
        g[i] = S(kd.alpha) * g[i] + S(1.0 - kd.alpha) * gd[i];
      student.backward(g);
      adam.step(params);
    }
    hist.train_loss.push_back(loss_sum / double(seen));
  }
  hist.best_epoch = kd.epochs - 1;
  return hist;
}

}  // namespace kdpos::distill
