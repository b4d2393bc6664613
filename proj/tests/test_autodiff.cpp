#include <doctest.h>

#include <cmath>

#include "kdpos/builders.hpp"
#include "kdpos/gradcheck.hpp"
#include "kdpos/losses.hpp"
#include "kdpos/optim.hpp"

using namespace kdpos;
using namespace kdpos::nn;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng,
                             double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = rng.uniform(-scale, scale);
  return t;
}

// Loss probes shared by the gradient checks.
LossProbe<double> sparse_ce_probe(std::vector<std::uint32_t> labels) {
  return {[labels](const Tensor<double>& z, Tensor<double>* g) {
    if (g) *g = sparse_ce_grad(z, labels);
    return sparse_ce_from_logits(z, labels);
  }};
}

LossProbe<double> categorical_ce_probe(Tensor<double> onehot) {
  return {[onehot](const Tensor<double>& z, Tensor<double>* g) {
    Tensor<double> p = softmax_rows(z);
    if (g) {
      *g = p;
      const std::size_t b = z.dim(0);
      for (std::size_t i = 0; i < p.numel(); ++i)
        (*g)[i] = (p[i] - onehot[i]) / double(b);
    }
    return categorical_crossentropy(p, onehot);
  }};
}

LossProbe<double> kld_probe(Tensor<double> target) {
  return {[target](const Tensor<double>& z, Tensor<double>* g) {
    Tensor<double> q = softmax_rows(z);
    if (g) {
      *g = q;
      const std::size_t b = z.dim(0);
      for (std::size_t i = 0; i < q.numel(); ++i)
        (*g)[i] = (q[i] - target[i]) / double(b);
    }
    return kld(target, q);
  }};
}

Tensor<double> onehot4(const std::vector<std::uint32_t>& labels) {
  Tensor<double> y({labels.size(), 4});
  for (std::size_t i = 0; i < labels.size(); ++i) y.at(i, labels[i]) = 1.0;
  return y;
}

Model<double> dense_relu_graph(std::uint64_t seed, std::size_t in = 5) {
  Model<double> m;
  m.name = "dense_relu";
  m.input_shape = {in};
  std::vector<std::unique_ptr<Layer<double>>> br;
  br.push_back(std::make_unique<Dense<double>>(in, 8));
  br.push_back(std::make_unique<Relu<double>>());
  m.branches.push_back(std::move(br));
  m.head.push_back(std::make_unique<Dense<double>>(8, 4));
  m.finalize(seed);
  return m;
}

}  // namespace

TEST_CASE("zero weights and biases give zero logits") {
  auto teacher = build_teacher<double>(1);
  for (Param<double>* p : teacher.params()) p->value.fill(0.0);
  Rng rng(2);
  Tensor<double> x = random_tensor({2, 100, 6}, rng, 3.0);
  Tensor<double> z = teacher.forward(x, false, nullptr);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("dropout is inactive at inference") {
  Dropout<double> drop(0.5);
  Rng rng(3);
  Tensor<double> x = random_tensor({4, 10}, rng);
  Tensor<double> y = drop.forward(x, false, &rng);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  // Training mode scales kept values by 1/(1-rate).
  Tensor<double> yt = drop.forward(x, true, &rng);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    bool kept = yt[i] != 0.0;
    if (kept) CHECK(yt[i] == doctest::Approx(x[i] * 2.0));
  }
}

TEST_CASE("forward at inference is a pure function") {
  auto student = build_student<double>(2, 7);
  Rng rng(5);
  Tensor<double> x = random_tensor({3, 100, 3, 1}, rng);
  Tensor<double> a = student.forward(x, false, nullptr);
  Tensor<double> b = student.forward(x, false, nullptr);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("conv1d same padding preserves length") {
  Conv1D<double> conv(6, 40, 10);
  Rng rng(4);
  conv.init(rng);
  Tensor<double> x = random_tensor({2, 100, 6}, rng);
  Tensor<double> y = conv.forward(x, false, nullptr);
  CHECK(y.shape() == std::vector<std::size_t>{2, 100, 40});
}

TEST_CASE("dense backward matches the analytic closed form") {
  // Quadratic loss L = 0.5 * ||W x + b - y||^2 on a single sample.
  Dense<double> dense(3, 2);
  Rng rng(6);
  dense.init(rng);
  Tensor<double> x({1, 3});
  x[0] = 0.5;
  x[1] = -1.25;
  x[2] = 2.0;
  Tensor<double> target({1, 2});
  target[0] = 1.0;
  target[1] = -2.0;

  Tensor<double> out = dense.forward(x, false, nullptr);
  Tensor<double> g({1, 2});
  g[0] = out[0] - target[0];
  g[1] = out[1] - target[1];
  Tensor<double> gx = dense.backward(g);

  std::vector<Param<double>*> ps;
  dense.collect(ps);
  const Tensor<double>& w = ps[0]->value;
  const Tensor<double>& gw = ps[0]->grad;
  const Tensor<double>& gb = ps[1]->grad;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(gw.at(i, j) == doctest::Approx(x[i] * g[j]).epsilon(1e-12));
  for (std::size_t j = 0; j < 2; ++j)
    CHECK(gb[j] == doctest::Approx(g[j]).epsilon(1e-12));
  for (std::size_t i = 0; i < 3; ++i) {
    double expect = w.at(i, 0) * g[0] + w.at(i, 1) * g[1];
    CHECK(gx[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("zero loss gradient produces zero parameter gradients") {
  auto m = dense_relu_graph(11);
  Rng rng(12);
  Tensor<double> x = random_tensor({3, 5}, rng);
  m.zero_grads();
  Tensor<double> z = m.forward(x, false, nullptr);
  Tensor<double> g(z.shape());
  m.backward(g);
  for (Param<double>* p : m.params())
    for (std::size_t i = 0; i < p->grad.numel(); ++i) CHECK(p->grad[i] == 0.0);
}

TEST_CASE("gradient check: dense+relu with softmax cross-entropy") {
  auto m = dense_relu_graph(21);
  Rng rng(22);
  Tensor<double> x = random_tensor({4, 5}, rng);
  CHECK(gradient_check(m, x, sparse_ce_probe({0, 1, 2, 3})) < 1e-4);
}

TEST_CASE("gradient check: lstm on a 6x100 window") {
  Model<double> m;
  m.input_shape = {100, 6};
  std::vector<std::unique_ptr<Layer<double>>> br;
  br.push_back(std::make_unique<Lstm<double>>(6, 16, true));
  br.push_back(std::make_unique<Flatten<double>>());
  m.branches.push_back(std::move(br));
  m.head.push_back(std::make_unique<Dense<double>>(1600, 4));
  m.finalize(23);

  Rng rng(24);
  Tensor<double> x = random_tensor({2, 100, 6}, rng);
  CHECK(gradient_check(m, x, sparse_ce_probe({1, 3})) < 1e-3);
}

TEST_CASE("gradient check: conv2d with max pooling") {
  Model<double> m;
  m.input_shape = {20, 3, 1};
  std::vector<std::unique_ptr<Layer<double>>> br;
  br.push_back(std::make_unique<Conv2D<double>>(1, 4, 3, 1));
  br.push_back(std::make_unique<Relu<double>>());
  br.push_back(std::make_unique<MaxPool2D<double>>(5, 1));
  br.push_back(std::make_unique<Flatten<double>>());
  m.branches.push_back(std::move(br));
  m.head.push_back(std::make_unique<Dense<double>>(48, 4));
  m.finalize(31);

  Rng rng(32);
  Tensor<double> x = random_tensor({3, 20, 3, 1}, rng);
  CHECK(gradient_check(m, x, sparse_ce_probe({0, 2, 3})) < 1e-4);
}

TEST_CASE("gradient check: every loss probe on a mixed graph") {
  Model<double> m;
  m.input_shape = {20, 4};
  std::vector<std::unique_ptr<Layer<double>>> a;
  a.push_back(std::make_unique<Conv1D<double>>(4, 6, 5));
  a.push_back(std::make_unique<Relu<double>>());
  a.push_back(std::make_unique<MaxPool1D<double>>(4));
  a.push_back(std::make_unique<GlobalAvgPool1D<double>>());
  std::vector<std::unique_ptr<Layer<double>>> b;
  b.push_back(std::make_unique<Lstm<double>>(4, 5, true));
  b.push_back(std::make_unique<Flatten<double>>());
  b.push_back(std::make_unique<Dense<double>>(100, 6));
  b.push_back(std::make_unique<Relu<double>>());
  m.branches.push_back(std::move(a));
  m.branches.push_back(std::move(b));
  m.head.push_back(std::make_unique<Dropout<double>>(0.5));  // off at inference
  m.head.push_back(std::make_unique<Dense<double>>(12, 4));
  m.finalize(41);

  Rng rng(42);
  Tensor<double> x = random_tensor({3, 20, 4}, rng);
  std::vector<std::uint32_t> labels{0, 1, 3};

  CHECK(gradient_check(m, x, sparse_ce_probe(labels)) < 1e-4);
  CHECK(gradient_check(m, x, categorical_ce_probe(onehot4(labels))) < 1e-4);

  Tensor<double> target({3, 4});
  target.fill(0.25);
  CHECK(gradient_check(m, x, kld_probe(target)) < 1e-4);
}

TEST_CASE("softmax is row-stochastic and shift invariant") {
  Rng rng(51);
  Tensor<double> z = random_tensor({8, 4}, rng, 5.0);
  Tensor<double> p = softmax_rows(z);
  for (std::size_t r = 0; r < 8; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 4; ++c) sum += p.at(r, c);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  Tensor<double> shifted = z;
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 4; ++c) shifted.at(r, c) += 17.5;
  Tensor<double> p2 = softmax_rows(shifted);
  for (std::size_t i = 0; i < p.numel(); ++i)
    CHECK(p2[i] == doctest::Approx(p[i]).epsilon(1e-9));
}

TEST_CASE("categorical cross-entropy examples") {
  Tensor<double> perfect({1, 4});
  perfect.at(0, 2) = 1.0;
  Tensor<double> y({1, 4});
  y.at(0, 2) = 1.0;
  CHECK(categorical_crossentropy(perfect, y) == doctest::Approx(0.0));

  Tensor<double> uniform({1, 4});
  uniform.fill(0.25);
  CHECK(categorical_crossentropy(uniform, y) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));

  // Zero probability on the true class stays finite via the clamp.
  Tensor<double> wrong({1, 4});
  wrong.at(0, 0) = 1.0;
  double loss = categorical_crossentropy(wrong, y);
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(-std::log(1e-12)).epsilon(1e-6));
}

TEST_CASE("sparse cross-entropy from logits is stable and equivalent") {
  Tensor<double> equal({1, 4});
  CHECK(sparse_ce_from_logits(equal, {0}) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor<double> huge({1, 4});
  huge.at(0, 0) = 1000.0;
  double loss = sparse_ce_from_logits(huge, {0});
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-9));

  Rng rng(61);
  Tensor<double> z = random_tensor({16, 4}, rng, 6.0);
  std::vector<std::uint32_t> labels(16);
  for (auto& l : labels) l = std::uint32_t(rng.below(4));
  double sparse = sparse_ce_from_logits(z, labels);
  double dense_form = categorical_crossentropy(softmax_rows(z), onehot4(labels));
  CHECK(sparse == doctest::Approx(dense_form).epsilon(1e-9));

  CHECK_THROWS_AS(sparse_ce_from_logits(z, std::vector<std::uint32_t>(16, 7)),
                  Error);
}

TEST_CASE("kld examples and non-negativity") {
  Tensor<double> p({1, 2});
  p.at(0, 0) = 1.0;
  Tensor<double> q({1, 2});
  q.fill(0.5);
  CHECK(kld(p, p) == doctest::Approx(0.0));
  CHECK(kld(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> a = softmax_rows(random_tensor({4, 4}, rng, 4.0));
    Tensor<double> b = softmax_rows(random_tensor({4, 4}, rng, 4.0));
    CHECK(kld(a, b) >= 0.0);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto m = dense_relu_graph(81);
  auto snapshot = m.snapshot_params();
  Adam<double> adam(0.001);
  m.zero_grads();
  adam.step(m.params());
  auto ps = m.params();
  std::size_t k = 0;
  for (Param<double>* p : ps) {
    for (std::size_t i = 0; i < p->value.numel(); ++i)
      CHECK(p->value[i] == snapshot[k][i]);
    ++k;
  }
}

TEST_CASE("adam: first step moves by about lr against the gradient sign") {
  Param<double> p({2});
  p.value[0] = 1.0;
  p.value[1] = -1.0;
  p.grad[0] = 0.37;
  p.grad[1] = -12.0;
  Adam<double> adam(0.001);
  adam.step({&p});
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-3));
  CHECK(p.value[1] == doctest::Approx(-1.0 + 0.001).epsilon(1e-3));
}

TEST_CASE("adam minimizes a quadratic bowl") {
  // Exact step-by-step emulation of this update reaches |x| < 1e-3 at
  // step 2722 from x0 = 1 with lr 1e-3.
  Param<double> p({1});
  p.value[0] = 1.0;
  Adam<double> adam(0.001);
  int reached = -1;
  for (int step = 1; step <= 3000; ++step) {
    p.grad[0] = p.value[0];  // d/dx of x^2/2
    adam.step({&p});
    if (reached < 0 && std::abs(p.value[0]) < 1e-3) reached = step;
  }
  CHECK(std::abs(p.value[0]) < 1e-3);
  CHECK(reached == 2722);
}

TEST_CASE("adadelta: zero gradient leaves parameters unchanged") {
  Param<double> p({1});
  p.value[0] = 3.25;
  Adadelta<double> opt(0.9);
  opt.step({&p});
  CHECK(p.value[0] == 3.25);
}

TEST_CASE("adadelta: constant gradient gives bounded stabilizing updates") {
  Param<double> p({1});
  p.value[0] = 0.0;
  Adadelta<double> opt(1.0);
  double prev = 0.0;
  double prev_delta = 0.0;
  for (int step = 0; step < 200; ++step) {
    p.grad[0] = 1.0;
    opt.step({&p});
    double delta = p.value[0] - prev;
    CHECK(std::abs(delta) < 1.0);
    if (step > 10) {
      // Update magnitudes stabilize: consecutive deltas stay within 50%.
      CHECK(std::abs(delta) < std::abs(prev_delta) * 1.5 + 1e-12);
    }
    prev = p.value[0];
    prev_delta = delta;
  }
}

TEST_CASE("adadelta converges on a quadratic bowl") {
  Param<double> p({1});
  p.value[0] = 1.0;
  Adadelta<double> opt(0.9);
  for (int step = 0; step < 4000; ++step) {
    p.grad[0] = p.value[0];
    opt.step({&p});
  }
  CHECK(std::abs(p.value[0]) < 1e-2);
}

TEST_CASE("checkpoints round-trip and validate the graph hash") {
  auto m = build_student<double>(1, 91);
  save_checkpoint(m, "/tmp/kdpos_test.bspc");

  auto same = build_student<double>(1, 999);  // different init
  load_checkpoint(same, "/tmp/kdpos_test.bspc");
  auto pa = m.params();
  auto pb = same.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.numel(); ++j)
      CHECK(pa[i]->value[j] == pb[i]->value[j]);

  auto other = build_student<double>(2, 5);
  CHECK_THROWS_WITH_AS(load_checkpoint(other, "/tmp/kdpos_test.bspc"),
                       doctest::Contains("hash mismatch"), Error);
  CHECK_THROWS_AS(load_checkpoint(other, "/tmp/kdpos_nothere.bspc"), Error);
}

TEST_CASE("shape errors carry the failing layer position") {
  auto teacher = build_teacher<double>(3);
  Tensor<double> bad({2, 50, 6});
  CHECK_THROWS_WITH_AS(teacher.forward(bad, false, nullptr),
                       doctest::Contains("shape error"), Error);
}
