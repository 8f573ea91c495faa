#pragma once

#include <span>
#include <vector>

#include "yolokit/encoding.hpp"

namespace yolokit {

enum class ConfidenceTargetMode {
  constant_one,    // responsible slots aim for confidence 1
  iou_with_truth,  // responsible slots aim for IoU(pred box, truth box)
};

struct LossWeights {
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
  ConfidenceTargetMode confidence_target_mode =
      ConfidenceTargetMode::constant_one;
};

// The five additive sum-squared terms plus their total.
struct LossBreakdown {
  double coord_xy = 0.0;        // lambda_coord * sum (x,y) residuals
  double coord_wh = 0.0;        // lambda_coord * sum sqrt-size residuals
  double obj_conf = 0.0;        // confidence residuals, responsible slots
  double noobj_conf = 0.0;      // lambda_noobj * confidence, everything else
  double classification = 0.0;  // class-probability residuals, object cells
  double total = 0.0;
};

// Multi-part sum-squared detection loss over a raw prediction tensor laid
// out like the target grid. Within an object cell the predicted slot with
// the highest IoU against the truth box is responsible (ties go to the
// lowest slot index); predicted w/h in object cells must be nonnegative for
// the square-root terms.
LossBreakdown yolo_v1_loss(std::span<const double> pred,
                           const TargetGridV1& target,
                           const LossWeights& weights = {});

// d(total)/d(pred) for every component. Components no term references get
// gradient 0. Responsible slots need w,h > 1e-12 (the square-root derivative
// is singular at zero). In iou_with_truth mode the confidence target is
// treated as a constant of the step.
std::vector<double> yolo_v1_loss_grad(std::span<const double> pred,
                                      const TargetGridV1& target,
                                      const LossWeights& weights = {});

// Per-class binary cross-entropy on logits, log-sum-exp stabilized; targets
// are 0/1 flags.
double multilabel_class_loss(std::span<const double> logits,
                             std::span<const double> targets);
std::vector<double> multilabel_class_loss_grad(std::span<const double> logits,
                                               std::span<const double> targets);

// Plain gradient descent on yolo_v1_loss starting from `pred`; returns the
// breakdown before any step and after each one (steps+1 entries). Box sizes
// are projected to >= 1e-6 after every step to stay clear of the sqrt
// singularity. A total above 1e6 aborts with an error suggesting a smaller
// rate.
std::vector<LossBreakdown> toy_fit(const TargetGridV1& target,
                                   std::vector<double> pred, int steps,
                                   double learning_rate,
                                   const LossWeights& weights = {});

}  // namespace yolokit
