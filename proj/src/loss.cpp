#include "yolokit/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace yolokit {

namespace {

void check_shape(std::span<const double> pred, const TargetGridV1& target) {
  if (target.S < 1 || target.B < 1 || target.C < 1) {
    throw std::invalid_argument("yolo_v1_loss: malformed target grid");
  }
  const std::size_t expected = static_cast<std::size_t>(target.S) * target.S *
                               target.cell_stride();
  if (pred.size() != expected || target.values.size() != expected) {
    throw std::invalid_argument(
        "yolo_v1_loss: prediction/target shape mismatch (expected " +
        std::to_string(expected) + " values)");
  }
}

BBoxCenter slot_box(std::span<const double> values, std::size_t offset) {
  return {values[offset + 0], values[offset + 1], values[offset + 2],
          values[offset + 3]};
}

// Truth slot = first responsible slot of the cell (the encoder fills slot 0).
int truth_slot(const TargetGridV1& target, int row, int col) {
  for (int slot = 0; slot < target.B; ++slot) {
    if (target.responsible[target.mask_index(row, col, slot)]) return slot;
  }
  return -1;
}

// Best-IoU predicted slot against the truth box, ties to the lowest index.
int responsible_pred_slot(std::span<const double> pred,
                          const TargetGridV1& target, int row, int col,
                          const BBoxCenter& truth) {
  const BBoxCorner truth_corner = center_to_corner(truth);
  int best_slot = 0;
  double best_iou = -1.0;
  for (int slot = 0; slot < target.B; ++slot) {
    const std::size_t off = target.slot_offset(row, col, slot);
    const double overlap = iou(center_to_corner(slot_box(pred, off)),
                               truth_corner);
    if (overlap > best_iou) {
      best_iou = overlap;
      best_slot = slot;
    }
  }
  return best_slot;
}

void check_object_cell_sizes(std::span<const double> pred,
                             const TargetGridV1& target, int row, int col) {
  for (int slot = 0; slot < target.B; ++slot) {
    const std::size_t off = target.slot_offset(row, col, slot);
    if (pred[off + 2] < 0.0 || pred[off + 3] < 0.0) {
      throw std::invalid_argument(
          "yolo_v1_loss: negative predicted w/h in object cell (" +
          std::to_string(row) + ", " + std::to_string(col) + ")");
    }
  }
}

double confidence_target(const LossWeights& weights, const BBoxCenter& pred_box,
                         const BBoxCenter& truth) {
  if (weights.confidence_target_mode == ConfidenceTargetMode::constant_one) {
    return 1.0;
  }
  return iou(pred_box, truth);
}

}  // namespace

LossBreakdown yolo_v1_loss(std::span<const double> pred,
                           const TargetGridV1& target,
                           const LossWeights& weights) {
  check_shape(pred, target);

  // Raw sums are scaled by the lambdas once at the end, so scaling a lambda
  // rescales its terms exactly.
  double raw_xy = 0.0, raw_wh = 0.0, raw_noobj = 0.0;
  LossBreakdown out;
  for (int row = 0; row < target.S; ++row) {
    for (int col = 0; col < target.S; ++col) {
      const int tslot = truth_slot(target, row, col);
      if (tslot < 0) {
        for (int slot = 0; slot < target.B; ++slot) {
          const double conf = pred[target.slot_offset(row, col, slot) + 4];
          raw_noobj += conf * conf;
        }
        continue;
      }
      check_object_cell_sizes(pred, target, row, col);
      const BBoxCenter truth =
          slot_box(target.values, target.slot_offset(row, col, tslot));
      const int resp = responsible_pred_slot(pred, target, row, col, truth);
      const std::size_t off = target.slot_offset(row, col, resp);
      const BBoxCenter pred_box = slot_box(pred, off);

      raw_xy += (truth.cx - pred_box.cx) * (truth.cx - pred_box.cx) +
                (truth.cy - pred_box.cy) * (truth.cy - pred_box.cy);
      const double dw = std::sqrt(truth.w) - std::sqrt(pred_box.w);
      const double dh = std::sqrt(truth.h) - std::sqrt(pred_box.h);
      raw_wh += dw * dw + dh * dh;

      const double ct = confidence_target(weights, pred_box, truth);
      const double dconf = ct - pred[off + 4];
      out.obj_conf += dconf * dconf;

      for (int slot = 0; slot < target.B; ++slot) {
        if (slot == resp) continue;
        const double conf = pred[target.slot_offset(row, col, slot) + 4];
        raw_noobj += conf * conf;
      }

      const std::size_t class_base = target.class_offset(row, col);
      for (int k = 0; k < target.C; ++k) {
        const double d = target.values[class_base + k] - pred[class_base + k];
        out.classification += d * d;
      }
    }
  }
  out.coord_xy = weights.lambda_coord * raw_xy;
  out.coord_wh = weights.lambda_coord * raw_wh;
  out.noobj_conf = weights.lambda_noobj * raw_noobj;
  out.total = out.coord_xy + out.coord_wh + out.obj_conf + out.noobj_conf +
              out.classification;
  return out;
}

std::vector<double> yolo_v1_loss_grad(std::span<const double> pred,
                                      const TargetGridV1& target,
                                      const LossWeights& weights) {
  check_shape(pred, target);
  std::vector<double> grad(pred.size(), 0.0);
  for (int row = 0; row < target.S; ++row) {
    for (int col = 0; col < target.S; ++col) {
      const int tslot = truth_slot(target, row, col);
      if (tslot < 0) {
        for (int slot = 0; slot < target.B; ++slot) {
          const std::size_t off = target.slot_offset(row, col, slot);
          grad[off + 4] += 2.0 * weights.lambda_noobj * pred[off + 4];
        }
        continue;
      }
      check_object_cell_sizes(pred, target, row, col);
      const BBoxCenter truth =
          slot_box(target.values, target.slot_offset(row, col, tslot));
      const int resp = responsible_pred_slot(pred, target, row, col, truth);
      const std::size_t off = target.slot_offset(row, col, resp);
      const BBoxCenter pred_box = slot_box(pred, off);

      if (pred_box.w <= 1e-12 || pred_box.h <= 1e-12) {
        throw std::domain_error(
            "yolo_v1_loss_grad: responsible slot w/h at the sqrt singularity "
            "in cell (" + std::to_string(row) + ", " + std::to_string(col) +
            ")");
      }

      grad[off + 0] = 2.0 * weights.lambda_coord * (pred_box.cx - truth.cx);
      grad[off + 1] = 2.0 * weights.lambda_coord * (pred_box.cy - truth.cy);
      grad[off + 2] = weights.lambda_coord *
                      (1.0 - std::sqrt(truth.w) / std::sqrt(pred_box.w));
      grad[off + 3] = weights.lambda_coord *
                      (1.0 - std::sqrt(truth.h) / std::sqrt(pred_box.h));

      // The IoU-mode target is held constant for the step.
      const double ct = confidence_target(weights, pred_box, truth);
      grad[off + 4] = 2.0 * (pred[off + 4] - ct);

      for (int slot = 0; slot < target.B; ++slot) {
        if (slot == resp) continue;
        const std::size_t other = target.slot_offset(row, col, slot);
        grad[other + 4] += 2.0 * weights.lambda_noobj * pred[other + 4];
      }

      const std::size_t class_base = target.class_offset(row, col);
      for (int k = 0; k < target.C; ++k) {
        grad[class_base + k] =
            2.0 * (pred[class_base + k] - target.values[class_base + k]);
      }
    }
  }
  return grad;
}

double multilabel_class_loss(std::span<const double> logits,
                             std::span<const double> targets) {
  if (logits.size() != targets.size()) {
    throw std::invalid_argument("multilabel_class_loss: size mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double t = targets[i];
    // BCE(sigmoid(z), t) = max(z,0) - z*t + log(1 + exp(-|z|))
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  return total;
}

std::vector<double> multilabel_class_loss_grad(std::span<const double> logits,
                                               std::span<const double> targets) {
  if (logits.size() != targets.size()) {
    throw std::invalid_argument("multilabel_class_loss_grad: size mismatch");
  }
  std::vector<double> grad(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    grad[i] = 1.0 / (1.0 + std::exp(-logits[i])) - targets[i];
  }
  return grad;
}

std::vector<LossBreakdown> toy_fit(const TargetGridV1& target,
                                   std::vector<double> pred, int steps,
                                   double learning_rate,
                                   const LossWeights& weights) {
  if (steps < 1) throw std::invalid_argument("toy_fit: steps must be >= 1");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("toy_fit: learning_rate must be > 0");
  }
  constexpr double kDivergenceCap = 1e6;
  constexpr double kSizeFloor = 1e-6;

  std::vector<LossBreakdown> trajectory;
  trajectory.reserve(static_cast<std::size_t>(steps) + 1);
  trajectory.push_back(yolo_v1_loss(pred, target, weights));
  if (trajectory.back().total > kDivergenceCap) {
    throw std::runtime_error("toy_fit: initial loss already above 1e6");
  }
  for (int step = 0; step < steps; ++step) {
    const auto grad = yolo_v1_loss_grad(pred, target, weights);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] -= learning_rate * grad[i];
    }
    for (int row = 0; row < target.S; ++row) {
      for (int col = 0; col < target.S; ++col) {
        for (int slot = 0; slot < target.B; ++slot) {
          const std::size_t off = target.slot_offset(row, col, slot);
          pred[off + 2] = std::max(pred[off + 2], kSizeFloor);
          pred[off + 3] = std::max(pred[off + 3], kSizeFloor);
        }
      }
    }
    trajectory.push_back(yolo_v1_loss(pred, target, weights));
    if (trajectory.back().total > kDivergenceCap) {
      throw std::runtime_error(
          "toy_fit: loss diverged past 1e6 at step " + std::to_string(step + 1) +
          "; use a smaller learning_rate");
    }
  }
  return trajectory;
}

}  // namespace yolokit
