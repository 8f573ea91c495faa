#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "yolokit/geometry.hpp"

namespace yolokit {

// Anchor shapes selected from a corpus of ground-truth box dimensions,
// sorted by area ascending.
struct AnchorSet {
  std::vector<WH> anchors;
  double mean_best_iou = 0.0;
  int iterations = 0;              // adopted Lloyd updates
  std::vector<double> iou_trace;   // mean_best_iou after each adopted update
};

// Average over boxes of the best wh_iou against any anchor.
double mean_best_iou(std::span<const WH> boxes, std::span<const WH> anchors);

// K-means under the IoU distance d = 1 - wh_iou. Seeding is k-means++ style
// (distance-squared weighting) driven by `seed`; centroids update as the
// coordinate-wise mean of their members; empty clusters re-seed from the
// globally worst-fit box. After the first update, an update that would lower
// mean_best_iou is rejected and the run stops there, so the recorded trace
// never decreases.
AnchorSet kmeans_anchors(std::span<const WH> boxes, int k, std::uint64_t seed,
                         int max_iter = 100);

}  // namespace yolokit
