#pragma once

#include "fedseg/model/weights.hpp"

#include <cmath>

namespace fedseg {

struct AdamOptions {
  double learning_rate = 7e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;  // L2 term added to the gradient
};

template <typename Scalar>
struct AdamState {
  WeightVector<Scalar> first_moment;
  WeightVector<Scalar> second_moment;
  long step = 0;

  AdamState() = default;
  explicit AdamState(const WeightVector<Scalar>& like)
      : first_moment(like.zeros_like()), second_moment(like.zeros_like()) {}
};

/// One bias-corrected Adam step on the trainable entries of `w`.
template <typename Scalar>
void adam_update(WeightVector<Scalar>& w, const WeightVector<Scalar>& grad, AdamState<Scalar>& state,
                 const AdamOptions& opt) {
  require_combinable(w, grad, "adam_update");
  if (state.first_moment.size() == 0) state = AdamState<Scalar>(w);
  ++state.step;
  const auto b1 = static_cast<Scalar>(opt.beta1);
  const auto b2 = static_cast<Scalar>(opt.beta2);
  const auto wd = static_cast<Scalar>(opt.weight_decay);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(opt.beta1, static_cast<double>(state.step)));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(opt.beta2, static_cast<double>(state.step)));
  const auto lr = static_cast<Scalar>(opt.learning_rate);
  const auto eps = static_cast<Scalar>(opt.eps);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!w.entry(i).trainable) continue;
    const auto g = (grad[i] + wd * w[i]).eval();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    w[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
  }
}

}  // namespace fedseg
