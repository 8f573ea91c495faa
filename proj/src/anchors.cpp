#include "yolokit/anchors.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>

namespace yolokit {

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double nearest_distance(const WH& box, const std::vector<WH>& centroids,
                        std::size_t count) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < count; ++c) {
    best = std::min(best, 1.0 - wh_iou(box, centroids[c]));
  }
  return best;
}

std::vector<WH> kmeanspp_seed(std::span<const WH> boxes, int k,
                              std::mt19937_64& rng) {
  const std::size_t n = boxes.size();
  std::vector<WH> centroids(static_cast<std::size_t>(k));
  centroids[0] = boxes[static_cast<std::size_t>(rng() % n)];
  for (int c = 1; c < k; ++c) {
    std::vector<double> weights(n);
    double total = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double d = nearest_distance(boxes[b], centroids,
                                        static_cast<std::size_t>(c));
      weights[b] = d * d;
      total += weights[b];
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng() % n);  // all boxes already covered
    } else {
      const double u = unit_uniform(rng) * total;
      double cumulative = 0.0;
      pick = n - 1;
      for (std::size_t b = 0; b < n; ++b) {
        cumulative += weights[b];
        if (u < cumulative) {
          pick = b;
          break;
        }
      }
    }
    centroids[static_cast<std::size_t>(c)] = boxes[pick];
  }
  return centroids;
}

std::vector<std::size_t> assign(std::span<const WH> boxes,
                                const std::vector<WH>& centroids) {
  std::vector<std::size_t> assignment(boxes.size(), 0);
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    double best = -1.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double overlap = wh_iou(boxes[b], centroids[c]);
      if (overlap > best) {
        best = overlap;
        assignment[b] = c;
      }
    }
  }
  return assignment;
}

}  // namespace

double mean_best_iou(std::span<const WH> boxes, std::span<const WH> anchors) {
  if (boxes.empty() || anchors.empty()) {
    throw std::invalid_argument("mean_best_iou: empty boxes or anchors");
  }
  double sum = 0.0;
  for (const auto& box : boxes) {
    double best = 0.0;
    for (const auto& anchor : anchors) {
      best = std::max(best, wh_iou(box, anchor));
    }
    sum += best;
  }
  return sum / static_cast<double>(boxes.size());
}

AnchorSet kmeans_anchors(std::span<const WH> boxes, int k, std::uint64_t seed,
                         int max_iter) {
  if (k < 1) throw std::invalid_argument("kmeans_anchors: k must be >= 1");
  if (boxes.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("kmeans_anchors: fewer boxes than clusters");
  }
  for (const auto& box : boxes) {
    if (!(box.w > 0.0) || !(box.h > 0.0)) {
      throw std::invalid_argument("kmeans_anchors: nonpositive box dimension");
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<WH> centroids = kmeanspp_seed(boxes, k, rng);
  const std::size_t kc = centroids.size();

  AnchorSet result;
  std::vector<std::size_t> prev_assignment;
  for (int iter = 0; iter < max_iter; ++iter) {
    auto assignment = assign(boxes, centroids);
    if (assignment == prev_assignment) break;

    std::vector<std::size_t> members(kc, 0);
    for (auto c : assignment) ++members[c];

    // Re-seed empty clusters from the worst-fit box of a populated cluster.
    for (std::size_t c = 0; c < kc; ++c) {
      if (members[c] > 0) continue;
      double worst = -1.0;
      std::size_t steal = boxes.size();
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        if (members[assignment[b]] < 2) continue;
        const double d = 1.0 - wh_iou(boxes[b], centroids[assignment[b]]);
        if (d > worst) {
          worst = d;
          steal = b;
        }
      }
      if (steal == boxes.size()) break;  // every cluster is a singleton
      --members[assignment[steal]];
      assignment[steal] = c;
      members[c] = 1;
      centroids[c] = boxes[steal];
    }

    std::vector<WH> candidate(kc, WH{});
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      candidate[assignment[b]].w += boxes[b].w;
      candidate[assignment[b]].h += boxes[b].h;
    }
    for (std::size_t c = 0; c < kc; ++c) {
      if (members[c] == 0) {
        candidate[c] = centroids[c];
        continue;
      }
      candidate[c].w /= static_cast<double>(members[c]);
      candidate[c].h /= static_cast<double>(members[c]);
    }

    const double quality = mean_best_iou(boxes, candidate);
    if (!result.iou_trace.empty() && quality < result.iou_trace.back()) {
      break;  // the mean update would regress the clustering metric
    }
    centroids = std::move(candidate);
    result.iou_trace.push_back(quality);
    prev_assignment = std::move(assignment);
  }

  std::sort(centroids.begin(), centroids.end(),
            [](const WH& a, const WH& b) { return a.area() < b.area(); });
  result.anchors = std::move(centroids);
  result.mean_best_iou = mean_best_iou(boxes, result.anchors);
  result.iterations = static_cast<int>(result.iou_trace.size());
  return result;
}

}  // namespace yolokit
