#include <doctest.h>

#include <cmath>

#include "kdpos/builders.hpp"
#include "kdpos/losses.hpp"

using namespace kdpos;
using namespace kdpos::nn;

TEST_CASE("student parameter counts hit the published targets exactly") {
  auto s1 = build_student<double>(1, 0);
  auto s2 = build_student<double>(2, 0);
  auto s3 = build_student<double>(3, 0);
  CHECK(s1.param_count() == 754);
  CHECK(s2.param_count() == 1824);
  CHECK(s3.param_count() == 4594);
  CHECK(s1.param_count() < s2.param_count());
  CHECK(s2.param_count() < s3.param_count());
}

TEST_CASE("teacher parameter count and per-branch additivity") {
  auto t = build_teacher<double>(0);
  // Full two-branch reading of the architecture tables.
  CHECK(t.param_count() == 38296);

  // param_count is additive over disjoint layer groups.
  auto branch_params = [&](std::size_t bi) {
    std::size_t n = 0;
    std::vector<Param<double>*> ps;
    for (auto& l : t.branches[bi]) l->collect(ps);
    for (auto* p : ps) n += p->value.numel();
    return n;
  };
  std::size_t head = 0;
  {
    std::vector<Param<double>*> ps;
    for (auto& l : t.head) l->collect(ps);
    for (auto* p : ps) head += p->value.numel();
  }
  std::size_t branch_a = branch_params(0);
  std::size_t branch_b = branch_params(1);
  CHECK(branch_a + branch_b + head == t.param_count());
  // Removing branch B would remove exactly its own parameters.
  CHECK(branch_b == 1472 + 16010);
  CHECK(t.param_count() - branch_b == branch_a + head);

  // Size ratios against the published student sizes, using the published
  // 20416 teacher figure: 27.07 / 11.19 / 4.44.
  CHECK(20416.0 / 754.0 == doctest::Approx(27.07).epsilon(0.001));
  CHECK(20416.0 / 1824.0 == doctest::Approx(11.19).epsilon(0.001));
  CHECK(20416.0 / 4594.0 == doctest::Approx(4.44).epsilon(0.01));
}

TEST_CASE("dense layer of 6 inputs and 10 units has 70 parameters") {
  Model<double> m;
  m.input_shape = {6};
  m.branches.emplace_back();
  m.branches[0].push_back(std::make_unique<Dense<double>>(6, 10));
  m.finalize(0);
  CHECK(m.param_count() == 70);

  Model<double> empty;
  empty.input_shape = {6};
  empty.branches.emplace_back();
  empty.finalize(0);
  CHECK(empty.param_count() == 0);
}

TEST_CASE("all heads produce 4-class distributions") {
  Rng rng(5);
  Tensor<double> x6({1, 100, 6});
  for (std::size_t i = 0; i < x6.numel(); ++i) x6[i] = rng.uniform(-2, 2);
  Tensor<double> x3({1, 100, 3, 1});
  for (std::size_t i = 0; i < x3.numel(); ++i) x3[i] = rng.uniform(-2, 2);

  auto teacher = build_teacher<double>(17);
  Tensor<double> pt = softmax_rows(teacher.forward(x6, false, nullptr));
  REQUIRE(pt.shape() == std::vector<std::size_t>{1, 4});
  double sum = 0;
  for (std::size_t c = 0; c < 4; ++c) sum += pt.at(0, c);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  for (int v = 1; v <= 3; ++v) {
    auto s = build_student<double>(v, 17);
    Tensor<double> p = softmax_rows(s.forward(x3, false, nullptr));
    REQUIRE(p.shape() == std::vector<std::size_t>{1, 4});
    double ssum = 0;
    for (std::size_t c = 0; c < 4; ++c) ssum += p.at(0, c);
    CHECK(ssum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("building twice with one seed gives identical parameters") {
  auto a = build_teacher<double>(12345);
  auto b = build_teacher<double>(12345);
  auto pa = a.params(), pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    for (std::size_t j = 0; j < pa[i]->value.numel(); ++j)
      CHECK(pa[i]->value[j] == pb[i]->value[j]);
  }
  auto c = build_teacher<double>(54321);
  bool any_diff = false;
  auto pc = c.params();
  for (std::size_t j = 0; j < pa[0]->value.numel(); ++j)
    any_diff = any_diff || pa[0]->value[j] != pc[0]->value[j];
  CHECK(any_diff);
}

TEST_CASE("invalid student variant is rejected") {
  CHECK_THROWS_WITH_AS(build_student<double>(0, 1),
                       doctest::Contains("variant"), Error);
  CHECK_THROWS_WITH_AS(build_student<double>(4, 1),
                       doctest::Contains("variant"), Error);
}

TEST_CASE("model summary reports shapes and totals") {
  auto t = build_teacher<double>(0);
  std::string s = t.summary();
  CHECK(s.find("total params: 38296") != std::string::npos);
  CHECK(s.find("lstm(units=16,return_sequences)") != std::string::npos);
  CHECK(s.find("concat") != std::string::npos);
  CHECK(s.find("softmax-output") != std::string::npos);
}
