#pragma once

#include <string>
#include <vector>

#include "evfsam/image.hpp"
#include "evfsam/tensor.hpp"

namespace evfsam {

// Mean over pixels of the stable form max(z,0) - z*t + log(1 + exp(-|z|)).
// `target` must hold only 0/1 values and match the logits' shape.
Tensor bce_loss(const Tensor& logits, const Tensor& target);

// 1 - (2 sum(p t) + s) / (sum p + sum t + s) with p = sigmoid(logits).
Tensor dice_loss(const Tensor& logits, const Tensor& target, Scalar smooth = 1.0);

struct LossWeights {
  Scalar bce = 1.0;
  Scalar dice = 1.0;
};

struct LossBreakdown {
  Tensor total;  // scalar, differentiable
  Scalar bce = 0;
  Scalar dice = 0;
};

LossBreakdown total_loss(const Tensor& logits, const Tensor& target, const LossWeights& weights = {});

struct MetricsReport {
  double giou = 0;
  double ciou = 0;
  std::size_t n_samples = 0;
  std::vector<double> per_sample_iou;

  // "giou <v>\nciou <v>\nn_samples <n>\n"
  std::string to_text() const;
  std::string to_json() const;
};

MetricsReport compute_metrics(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truth);

}  // namespace evfsam
