#pragma once

#include <cstddef>

#include "hoi/tensor.hpp"

namespace hoi {

struct LossWeights {
  double w1 = 1, w2 = 1, w3 = 1, w4 = 1, w5 = 1;
  double lambda_kl = 0.005;
  double zeta_joint = 1;

  void validate() const {
    for (double x : {w1, w2, w3, w4, w5, lambda_kl, zeta_joint})
      if (x < 0) throw ValueError("loss weights must be non-negative");
  }
};

// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2) per row, mean over batch.
template <class Real>
Tensor<Real> kl_loss(const Tensor<Real>& mu, const Tensor<Real>& log_var) {
  if (mu.shape() != log_var.shape())
    throw ShapeError("kl_loss: mu and log_var shapes differ");
  auto e = 0.5 * (mu * mu + exp(log_var) - 1.0 - log_var);
  double batch = mu.shape().size() >= 2 ? double(mu.shape()[0]) : 1.0;
  return sum(e) / batch;
}

template <class Real>
Tensor<Real> mse_recon(const Tensor<Real>& pred, const Tensor<Real>& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError("mse_recon: shape mismatch");
  auto d = pred - gt;
  return mean(d * d);
}

// Mean absolute error over the 63 keypoint coordinates.
template <class Real>
Tensor<Real> joint_loss(const Tensor<Real>& pred, const Tensor<Real>& gt) {
  if (pred.shape() != gt.shape())
    throw ShapeError("joint_loss: shape mismatch");
  return mean(abs(pred - gt));
}

template <class Real>
Tensor<Real> bce_contact(const Tensor<Real>& pred_probs,
                         const Tensor<Real>& gt_mask) {
  if (pred_probs.shape() != gt_mask.shape())
    throw ShapeError("bce_contact: shape mismatch");
  auto p = clamp(pred_probs, 1e-7, 1.0 - 1e-7);
  auto per = gt_mask * log(p) + (1.0 - gt_mask) * log(1.0 - p);
  return -1.0 * mean(per);
}

template <class Real>
struct ElementLoss {
  Tensor<Real> recon;
  Tensor<Real> kl;
};

// Weighted sum of the five element losses; each element contributes
// recon + lambda * KL, and the pose element additionally carries the
// keypoint term scaled by zeta.
template <class Real>
Tensor<Real> total_loss(const ElementLoss<Real>& trend,
                        const ElementLoss<Real>& hotspot,
                        const ElementLoss<Real>& pose,
                        const ElementLoss<Real>& contact,
                        const ElementLoss<Real>& mani,
                        const Tensor<Real>& pose_joint_term,
                        const LossWeights& w) {
  w.validate();
  auto elem = [&w](const ElementLoss<Real>& e) {
    return e.recon + w.lambda_kl * e.kl;
  };
  return w.w1 * elem(trend) + w.w2 * elem(hotspot) +
         w.w3 * (elem(pose) + w.zeta_joint * pose_joint_term) +
         w.w4 * elem(contact) + w.w5 * elem(mani);
}

}  // namespace hoi
