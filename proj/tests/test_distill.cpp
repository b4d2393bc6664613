#include <doctest.h>

#include <cmath>

#include "kdpos/distill.hpp"
#include "kdpos/eval.hpp"

using namespace kdpos;
using namespace kdpos::distill;

namespace {

// Four linearly separable window classes: each class has a distinct sign
// pattern across channels at unit scale, plus small noise.
WindowDataset toy_dataset(std::size_t channels, std::size_t per_class,
                          std::uint64_t seed) {
  WindowDataset ds;
  ds.mode = channels == 6 ? WindowMode::teacher : WindowMode::student;
  ds.channels = channels;
  ds.win_len = 100;
  Rng rng(seed);
  for (int cls = 1; cls <= 4; ++cls) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < channels; ++c) {
        double level = ((cls >> (c % 2)) & 1 ? 1.0 : -1.0) * (0.5 + 0.25 * double(cls));
        for (std::size_t t = 0; t < 100; ++t)
          ds.data.push_back(float(level + 0.05 * rng.normal()));
      }
      ds.labels.push_back(std::uint8_t(cls));
      // Spread provenance over two sessions for the validation split.
      ds.prov.push_back({1, std::uint32_t(1 + (i % 2)),
                         double(ds.labels.size()) * 0.5});
    }
  }
  return ds;
}

nn::Tensor<double> logits_batch(std::initializer_list<double> vals,
                                std::size_t k = 4) {
  std::vector<double> v(vals);
  nn::Tensor<double> t({v.size() / k, k});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

}  // namespace

TEST_CASE("tempered softmax examples") {
  auto z = logits_batch({1, 1, 1, 1});
  for (double T : {1.0, 2.5, 10.0}) {
    auto p = tempered_softmax(z, T);
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(p.at(0, c) == doctest::Approx(0.25).epsilon(1e-12));
  }

  nn::Tensor<double> z2({1, 2});
  z2.at(0, 0) = 2.0;
  auto p2 = tempered_softmax(z2, 1.0);
  CHECK(p2.at(0, 0) == doctest::Approx(0.8807970780).epsilon(1e-4));
  CHECK(p2.at(0, 1) == doctest::Approx(0.1192029220).epsilon(1e-4));

  // Large temperature flattens towards uniform.
  Rng rng(3);
  nn::Tensor<double> zr({4, 4});
  for (std::size_t i = 0; i < zr.numel(); ++i) zr[i] = rng.uniform(-5, 5);
  auto pu = tempered_softmax(zr, 1000.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double mn = 1.0, mx = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      mn = std::min(mn, pu.at(r, c));
      mx = std::max(mx, pu.at(r, c));
    }
    CHECK(mx - mn < 0.01);
  }

  CHECK_THROWS_AS(tempered_softmax(z, 0.0), Error);
  CHECK_THROWS_AS(tempered_softmax(z, -2.0), Error);
}

TEST_CASE("distillation loss: identity, reference value and T^2 scaling") {
  Rng rng(7);
  for (double T : {1.0, 5.0, 10.0}) {
    for (int trial = 0; trial < 5; ++trial) {
      nn::Tensor<double> z({3, 4});
      for (std::size_t i = 0; i < z.numel(); ++i) z[i] = rng.uniform(-4, 4);
      CHECK(distillation_loss(z, z, T) == 0.0);
    }
  }

  // KLD(softmax([1,0,0,0]), uniform) computed with 30-digit arithmetic.
  auto zt = logits_batch({1, 0, 0, 0});
  auto zs = logits_batch({0, 0, 0, 0});
  CHECK(distillation_loss(zt, zs, 1.0) ==
        doctest::Approx(0.1179928669098832).epsilon(1e-9));

  // The T = 10 loss equals exactly 100x the tempered KLD.
  nn::Tensor<double> a({2, 4}), b({2, 4});
  for (std::size_t i = 0; i < a.numel(); ++i) {
    a[i] = rng.uniform(-3, 3);
    b[i] = rng.uniform(-3, 3);
  }
  double tempered_kld =
      nn::kld(tempered_softmax(a, 10.0), tempered_softmax(b, 10.0));
  CHECK(distillation_loss(a, b, 10.0) == 100.0 * tempered_kld);

  // Non-negative on random pairs.
  CHECK(distillation_loss(a, b, 5.0) >= 0.0);
}

TEST_CASE("total kd loss combination") {
  CHECK(total_kd_loss(1.5, 99.0, 1.0) == 1.5);
  CHECK(total_kd_loss(1.5, 99.0, 0.0) == 99.0);
  CHECK(total_kd_loss(1.0, 2.0, 0.1) == doctest::Approx(1.9).epsilon(1e-15));

  // Convex combination stays between the two losses.
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    double sl = rng.uniform(0, 5), dl = rng.uniform(0, 5);
    double alpha = rng.uniform01();
    double loss = total_kd_loss(sl, dl, alpha);
    CHECK(loss >= std::min(sl, dl) - 1e-12);
    CHECK(loss <= std::max(sl, dl) + 1e-12);
  }
  CHECK_THROWS_AS(total_kd_loss(1, 1, 1.5), Error);
}

TEST_CASE("teacher trains to high accuracy on separable data") {
  WindowDataset ds = toy_dataset(6, 40, 11);
  auto teacher = nn::build_teacher<float>(1);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 16;
  cfg.seed = 2;
  TrainHistory h = train_teacher(teacher, ds, cfg);

  // Training accuracy over the full toy set.
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  nn::Tensor<float> z = predict_logits(teacher, ds);
  auto labels = batch_labels(ds, idx);
  CHECK(nn::accuracy(z, labels) > 0.95);
  CHECK(h.epochs_run() <= cfg.epochs);
  CHECK(h.best_epoch >= 0);
  CHECK(h.restored);
}

TEST_CASE("baseline student trains on separable data with adadelta") {
  WindowDataset ds = toy_dataset(3, 40, 13);
  auto student = nn::build_student<float>(1, 3);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.optimizer = OptKind::adadelta;
  cfg.learning_rate = 0.9;
  cfg.seed = 4;
  TrainHistory h = train_baseline_student(student, ds, cfg);

  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  nn::Tensor<float> z = predict_logits(student, ds);
  CHECK(nn::accuracy(z, batch_labels(ds, idx)) > 0.90);
  CHECK(h.epochs_run() <= 60);
}

TEST_CASE("early stopping halts before the epoch limit on a plateau") {
  WindowDataset ds = toy_dataset(6, 30, 17);
  auto teacher = nn::build_teacher<float>(5);
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.batch_size = 16;
  cfg.early_stop_patience = 5;
  cfg.seed = 6;
  TrainHistory h = train_teacher(teacher, ds, cfg);
  CHECK(h.epochs_run() < 100);
  CHECK(h.best_epoch <= h.epochs_run() - 1);
  CHECK(h.restored);
}

TEST_CASE("training is deterministic for a fixed seed") {
  WindowDataset ds = toy_dataset(3, 20, 23);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.optimizer = OptKind::adadelta;
  cfg.learning_rate = 0.9;
  cfg.seed = 7;

  auto a = nn::build_student<float>(2, 9);
  auto b = nn::build_student<float>(2, 9);
  train_baseline_student(a, ds, cfg);
  train_baseline_student(b, ds, cfg);
  auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.numel(); ++j)
      CHECK(pa[i]->value[j] == pb[i]->value[j]);
}

TEST_CASE("dataset too small for one batch is a training error") {
  WindowDataset ds = toy_dataset(6, 2, 29);  // 8 windows
  auto teacher = nn::build_teacher<float>(1);
  TrainConfig cfg;
  cfg.batch_size = 64;
  CHECK_THROWS_WITH_AS(train_teacher(teacher, ds, cfg),
                       doctest::Contains("training error"), Error);
}

TEST_CASE("distillation keeps the teacher frozen") {
  WindowDataset ds6 = toy_dataset(6, 20, 31);
  WindowDataset ds3 = ds6.channel_slice(3, WindowMode::student);

  auto teacher = nn::build_teacher<float>(2);
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 16;
  tc.seed = 3;
  train_teacher(teacher, ds6, tc);

  auto before = teacher.snapshot_params();
  teacher.zero_grads();  // clear training leftovers; distillation must not refill
  auto student = nn::build_student<float>(3, 4);
  KdConfig kd;
  kd.epochs = 3;
  kd.batch_size = 16;
  train_distilled_student(teacher, student, ds6, ds3, kd, 5);

  auto after = teacher.snapshot_params();
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t j = 0; j < before[i].numel(); ++j)
      CHECK(before[i][j] == after[i][j]);
  // No gradient ever reaches the teacher's buffers.
  for (nn::Param<float>* p : teacher.params())
    for (std::size_t j = 0; j < p->grad.numel(); ++j) CHECK(p->grad[j] == 0.0f);
}

TEST_CASE("alpha = 1 reduces distillation to plain logit cross-entropy") {
  WindowDataset ds6 = toy_dataset(6, 15, 37);
  WindowDataset ds3 = ds6.channel_slice(3, WindowMode::student);
  auto teacher = nn::build_teacher<float>(6);  // untrained is fine

  KdConfig kd;
  kd.alpha = 1.0;
  kd.epochs = 4;
  kd.batch_size = 16;
  const std::uint64_t seed = 77;

  auto distilled = nn::build_student<float>(1, 8);
  train_distilled_student(teacher, distilled, ds6, ds3, kd, seed);

  // Reference: the same loop with the distillation term dropped.
  auto plain = nn::build_student<float>(1, 8);
  {
    std::vector<std::size_t> idx(ds3.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng shuffle_rng(derive_seed(seed, "shuffle"));
    Rng dropout_rng(derive_seed(seed, "dropout"));
    nn::Adam<float> adam(kd.learning_rate);
    auto params = plain.params();
    for (int epoch = 0; epoch < kd.epochs; ++epoch) {
      shuffle_rng.shuffle(idx);
      for (std::size_t off = 0; off < idx.size();
           off += std::size_t(kd.batch_size)) {
        std::vector<std::size_t> part(
            idx.begin() + std::ptrdiff_t(off),
            idx.begin() + std::ptrdiff_t(std::min(
                              idx.size(), off + std::size_t(kd.batch_size))));
        nn::Tensor<float> x = batch_img<float>(ds3, part);
        auto y = batch_labels(ds3, part);
        plain.zero_grads();
        nn::Tensor<float> z = plain.forward(x, true, &dropout_rng);
        plain.backward(nn::sparse_ce_grad(z, y));
        adam.step(params);
      }
    }
  }

  auto pa = distilled.params(), pb = plain.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.numel(); ++j)
      CHECK(pa[i]->value[j] == pb[i]->value[j]);
}

TEST_CASE("misaligned dataset pairs are rejected") {
  WindowDataset ds6 = toy_dataset(6, 10, 41);
  WindowDataset ds3 = ds6.channel_slice(3, WindowMode::student);
  auto teacher = nn::build_teacher<float>(1);
  auto student = nn::build_student<float>(1, 1);
  KdConfig kd;
  kd.epochs = 1;

  SUBCASE("different window count") {
    ds3.labels.pop_back();
    ds3.prov.pop_back();
    ds3.data.resize(ds3.data.size() - 3 * 100);
    CHECK_THROWS_WITH_AS(
        train_distilled_student(teacher, student, ds6, ds3, kd, 1),
        doctest::Contains("alignment error"), Error);
  }
  SUBCASE("different labels") {
    ds3.labels[0] = ds3.labels[0] == 1 ? 2 : 1;
    CHECK_THROWS_WITH_AS(
        train_distilled_student(teacher, student, ds6, ds3, kd, 1),
        doctest::Contains("alignment error"), Error);
  }
  SUBCASE("different rssi contents") {
    ds3.data[0] += 1.0f;
    CHECK_THROWS_WITH_AS(
        train_distilled_student(teacher, student, ds6, ds3, kd, 1),
        doctest::Contains("alignment error"), Error);
  }
}

TEST_CASE("distillation history has the fixed epoch count") {
  WindowDataset ds6 = toy_dataset(6, 10, 43);
  WindowDataset ds3 = ds6.channel_slice(3, WindowMode::student);
  auto teacher = nn::build_teacher<float>(1);
  auto student = nn::build_student<float>(2, 2);
  KdConfig kd;
  kd.epochs = 10;
  kd.batch_size = 16;
  TrainHistory h = train_distilled_student(teacher, student, ds6, ds3, kd, 3);
  CHECK(h.epochs_run() == 10);
  CHECK(!h.restored);
  for (double loss : h.train_loss) CHECK(std::isfinite(loss));
}
