#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "yolokit/encoding.hpp"
#include "yolokit/geometry.hpp"
#include "yolokit/loss.hpp"
#include "yolokit/postprocess.hpp"

namespace yolokit {

// Reference implementations kept deliberately naive; they verify the fast
// paths but never share code with them.

// Stratified point-membership sampling over the pair's bounding region,
// grid_side^2 samples (one jittered point per stratum).
double monte_carlo_iou(const BBoxCorner& a, const BBoxCorner& b,
                       int grid_side = 1000, std::uint64_t seed = 1);

// O(n^2) selection-based suppression: repeatedly pick the highest-score
// survivor and erase overlapping same-class records.
std::vector<DetectionRecord> brute_force_nms(
    const std::vector<DetectionRecord>& detections, double iou_threshold,
    bool class_agnostic = false);

// Exhaustive average precision: recount TP/FP from scratch at every distinct
// score threshold, then integrate the precision envelope exactly over the
// recall partition. scored = (score, is_true_positive) pairs.
double threshold_enum_ap(const std::vector<std::pair<double, bool>>& scored,
                         std::size_t num_gt);

// Same envelope integrated by a fixed-resolution recall sweep.
double numeric_integration_ap(
    const std::vector<std::pair<double, bool>>& scored, std::size_t num_gt,
    double recall_resolution = 1e-4);

// Central finite differences of an arbitrary scalar field.
std::vector<double> central_difference(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double eps = 1e-5);

// max_i |a_i - b_i| / max(1, max_i |a_i|, max_i |b_i|)
double gradient_relative_error(std::span<const double> analytic,
                               std::span<const double> numeric);

// Scans every cell for the one whose half-open interval owns the center
// (the last row/column also owns its closing edge).
Cell exhaustive_cell_of(double cx, double cy, int s);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// The embedded verification battery behind the CLI's selfcheck command.
std::vector<CheckResult> run_selfcheck();

}  // namespace yolokit
