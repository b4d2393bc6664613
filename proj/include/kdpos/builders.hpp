#pragma once

#include <memory>

#include "kdpos/model.hpp"

namespace kdpos::nn {

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::size_t kWindowLen = 100;
inline constexpr std::size_t kTeacherChannels = 6;
inline constexpr std::size_t kStudentChannels = 3;

// Teacher: two branches over the 6-channel window.
//   Branch A (cross-channel): per-step dense(10) -> conv1d(40,k10,same) ->
//     maxpool(10) -> dropout(0.5) -> conv1d(40,k10,same) -> maxpool(10) ->
//     globalavgpool -> dense(10).
//   Branch B (temporal): lstm(16, return sequences) -> flatten -> dense(10).
// Concat -> dense(10) -> dense(4) logits; softmax applied at the output.
template <class S>
Model<S> build_teacher(std::uint64_t seed) {
  Model<S> m;
  m.name = "teacher";
  m.input_shape = {kWindowLen, kTeacherChannels};

  std::vector<std::unique_ptr<Layer<S>>> a;
  a.push_back(std::make_unique<Dense<S>>(kTeacherChannels, 10));
  a.push_back(std::make_unique<Relu<S>>());
  a.push_back(std::make_unique<Conv1D<S>>(10, 40, 10));
  a.push_back(std::make_unique<Relu<S>>());
  a.push_back(std::make_unique<MaxPool1D<S>>(10));
  a.push_back(std::make_unique<Dropout<S>>(0.5));
  a.push_back(std::make_unique<Conv1D<S>>(40, 40, 10));
  a.push_back(std::make_unique<Relu<S>>());
  a.push_back(std::make_unique<MaxPool1D<S>>(10));
  a.push_back(std::make_unique<GlobalAvgPool1D<S>>());
  a.push_back(std::make_unique<Dense<S>>(40, 10));
  a.push_back(std::make_unique<Relu<S>>());

  std::vector<std::unique_ptr<Layer<S>>> b;
  b.push_back(std::make_unique<Lstm<S>>(kTeacherChannels, 16, true));
  b.push_back(std::make_unique<Flatten<S>>());
  b.push_back(std::make_unique<Dense<S>>(kWindowLen * 16, 10));
  b.push_back(std::make_unique<Relu<S>>());

  m.branches.push_back(std::move(a));
  m.branches.push_back(std::move(b));

  m.head.push_back(std::make_unique<Dense<S>>(20, 10));
  m.head.push_back(std::make_unique<Relu<S>>());
  m.head.push_back(std::make_unique<Dense<S>>(10, kNumClasses));

  m.finalize(seed);
  return m;
}

// Student: the window is laid out as a (time=100, width=3, plane=1) image.
// Kernels span the time axis only (k x 1) and pooling is 5 x 1, so the same
// filter is shared across the three receiver columns. This is the layout
// under which the three variants land exactly on 754 / 1824 / 4594
// parameters.
//   conv2d(F, kx1, same) -> maxpool(5x1) -> dropout(0.2) ->
//   conv2d(F, kx1, same) -> maxpool(5x1) -> flatten ->
//   dense(10) -> dropout(0.1) -> dense(4) logits.
template <class S>
Model<S> build_student(int variant, std::uint64_t seed) {
  std::size_t filters = 0, kernel = 0;
  switch (variant) {
    case 1: filters = 5; kernel = 3; break;
    case 2: filters = 10; kernel = 5; break;
    case 3: filters = 20; kernel = 5; break;
    default:
      throw input_error("invalid student variant " + std::to_string(variant) +
                        " (expected 1, 2 or 3)");
  }

  Model<S> m;
  m.name = "student" + std::to_string(variant);
  m.input_shape = {kWindowLen, kStudentChannels, 1};

  std::vector<std::unique_ptr<Layer<S>>> br;
  br.push_back(std::make_unique<Conv2D<S>>(1, filters, kernel, 1));
  br.push_back(std::make_unique<Relu<S>>());
  br.push_back(std::make_unique<MaxPool2D<S>>(5, 1));
  br.push_back(std::make_unique<Dropout<S>>(0.2));
  br.push_back(std::make_unique<Conv2D<S>>(filters, filters, kernel, 1));
  br.push_back(std::make_unique<Relu<S>>());
  br.push_back(std::make_unique<MaxPool2D<S>>(5, 1));
  br.push_back(std::make_unique<Flatten<S>>());
  m.branches.push_back(std::move(br));

  m.head.push_back(std::make_unique<Dense<S>>(4 * kStudentChannels * filters, 10));
  m.head.push_back(std::make_unique<Relu<S>>());
  m.head.push_back(std::make_unique<Dropout<S>>(0.1));
  m.head.push_back(std::make_unique<Dense<S>>(10, kNumClasses));

  m.finalize(seed);
  return m;
}

template <class S>
std::size_t param_count(Model<S>& m) {
  return m.param_count();
}

}  // namespace kdpos::nn
