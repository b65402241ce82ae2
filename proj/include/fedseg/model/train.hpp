#pragma once

#include "fedseg/common.hpp"
#include "fedseg/model/adam.hpp"
#include "fedseg/model/unet.hpp"

#include <cmath>
#include <sstream>

namespace fedseg {

/// Per-voxel class probabilities (2 x positions) from an inference pass.
template <typename Scalar>
nn::Matrix<Scalar> predict_probabilities(const UNet<Scalar>& net, const WeightVector<Scalar>& w,
                                         const nn::FeatureMap<Scalar>& x) {
  return nn::softmax2<Scalar>(net.forward(w, x).data);
}

/// One Adam step on the mean two-class cross-entropy. Returns the loss
/// evaluated before the update. Throws TrainingError when the loss or the
/// gradient is not finite; `w` and `opt` are left untouched in that case
/// except for batch-norm running statistics.
template <typename Scalar>
Scalar train_step(const UNet<Scalar>& net, WeightVector<Scalar>& w, AdamState<Scalar>& opt,
                  const nn::FeatureMap<Scalar>& x, const nn::Matrix<Scalar>& targets,
                  const AdamOptions& options) {
  WeightVector<Scalar> grad;
  const Scalar loss = net.loss_and_gradient(w, x, targets, grad);
  bool finite = std::isfinite(static_cast<double>(loss));
  double max_abs = 0.0;
  std::string worst;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double m = static_cast<double>(grad[i].abs().maxCoeff());
    if (!std::isfinite(m) || m > max_abs) {
      max_abs = m;
      worst = grad.entry(i).name;
    }
    if (!std::isfinite(m)) finite = false;
  }
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite training step: loss=" << loss << " optimizer_step=" << opt.step
        << " batch=" << x.batch << "x" << x.height << "x" << x.width
        << " largest_gradient=" << max_abs << " in '" << worst << "'"
        << " target_range=[" << targets.minCoeff() << ", " << targets.maxCoeff() << "]";
    throw TrainingError(msg.str());
  }
  adam_update(w, grad, opt, options);
  return loss;
}

}  // namespace fedseg
