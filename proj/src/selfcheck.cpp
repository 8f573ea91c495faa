#include "yolokit/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <stdexcept>

#include "yolokit/anchors.hpp"

namespace yolokit {

namespace {

struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

bool contains(const BBoxCorner& box, double x, double y) {
  return x >= box.x1 && x <= box.x2 && y >= box.y1 && y <= box.y2;
}

}  // namespace

double monte_carlo_iou(const BBoxCorner& a, const BBoxCorner& b, int grid_side,
                       std::uint64_t seed) {
  const double x0 = std::min(a.x1, b.x1);
  const double y0 = std::min(a.y1, b.y1);
  const double x1 = std::max(a.x2, b.x2);
  const double y1 = std::max(a.y2, b.y2);
  if (!(x1 > x0) || !(y1 > y0)) return 0.0;

  const double step_x = (x1 - x0) / grid_side;
  const double step_y = (y1 - y0) / grid_side;
  SplitMix64 rng(seed);
  std::int64_t in_union = 0, in_inter = 0;
  for (int gy = 0; gy < grid_side; ++gy) {
    for (int gx = 0; gx < grid_side; ++gx) {
      const double px = x0 + (gx + rng.uniform()) * step_x;
      const double py = y0 + (gy + rng.uniform()) * step_y;
      const bool in_a = contains(a, px, py);
      const bool in_b = contains(b, px, py);
      in_union += (in_a || in_b);
      in_inter += (in_a && in_b);
    }
  }
  return in_union > 0 ? static_cast<double>(in_inter) / in_union : 0.0;
}

std::vector<DetectionRecord> brute_force_nms(
    const std::vector<DetectionRecord>& detections, double iou_threshold,
    bool class_agnostic) {
  std::vector<std::size_t> remaining(detections.size());
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;

  std::vector<DetectionRecord> kept;
  while (!remaining.empty()) {
    std::size_t best_pos = 0;
    for (std::size_t p = 1; p < remaining.size(); ++p) {
      if (detections[remaining[p]].score >
          detections[remaining[best_pos]].score) {
        best_pos = p;
      }
    }
    const auto& top = detections[remaining[best_pos]];
    kept.push_back(top);
    remaining.erase(remaining.begin() + best_pos);
    const BBoxCorner top_box = center_to_corner(top.box);
    std::vector<std::size_t> survivors;
    for (std::size_t idx : remaining) {
      const auto& other = detections[idx];
      const bool same_group =
          class_agnostic || other.class_id == top.class_id;
      if (same_group &&
          iou(top_box, center_to_corner(other.box)) >= iou_threshold) {
        continue;
      }
      survivors.push_back(idx);
    }
    remaining = std::move(survivors);
  }
  return kept;
}

namespace {

struct OraclePoint {
  double recall;
  double precision;
};

std::vector<OraclePoint> threshold_points(
    const std::vector<std::pair<double, bool>>& scored, std::size_t num_gt) {
  std::vector<double> thresholds;
  for (const auto& [score, tp] : scored) thresholds.push_back(score);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  std::vector<OraclePoint> points;
  for (double t : thresholds) {
    std::size_t tp = 0, fp = 0;
    for (const auto& [score, is_tp] : scored) {
      if (score >= t) is_tp ? ++tp : ++fp;
    }
    points.push_back({static_cast<double>(tp) / num_gt,
                      static_cast<double>(tp) / (tp + fp)});
  }
  return points;
}

double envelope_at(const std::vector<OraclePoint>& points, double recall) {
  double best = 0.0;
  for (const auto& p : points) {
    if (p.recall >= recall - 1e-12) best = std::max(best, p.precision);
  }
  return best;
}

}  // namespace

double threshold_enum_ap(const std::vector<std::pair<double, bool>>& scored,
                         std::size_t num_gt) {
  if (num_gt == 0) throw std::invalid_argument("threshold_enum_ap: num_gt == 0");
  if (scored.empty()) return 0.0;
  const auto points = threshold_points(scored, num_gt);

  std::vector<double> recalls;
  for (const auto& p : points) recalls.push_back(p.recall);
  std::sort(recalls.begin(), recalls.end());
  recalls.erase(std::unique(recalls.begin(), recalls.end()), recalls.end());

  double ap = 0.0;
  double prev = 0.0;
  for (double r : recalls) {
    ap += (r - prev) * envelope_at(points, r);
    prev = r;
  }
  return ap;
}

double numeric_integration_ap(
    const std::vector<std::pair<double, bool>>& scored, std::size_t num_gt,
    double recall_resolution) {
  if (num_gt == 0) {
    throw std::invalid_argument("numeric_integration_ap: num_gt == 0");
  }
  if (scored.empty()) return 0.0;
  const auto points = threshold_points(scored, num_gt);
  double max_recall = 0.0;
  for (const auto& p : points) max_recall = std::max(max_recall, p.recall);

  double ap = 0.0;
  for (std::size_t k = 1;
       static_cast<double>(k) * recall_resolution <= max_recall + 1e-12; ++k) {
    ap += recall_resolution *
          envelope_at(points, static_cast<double>(k) * recall_resolution);
  }
  return ap;
}

std::vector<double> central_difference(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double eps) {
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double hi = f(point);
    point[i] = saved - eps;
    const double lo = f(point);
    point[i] = saved;
    grad[i] = (hi - lo) / (2.0 * eps);
  }
  return grad;
}

double gradient_relative_error(std::span<const double> analytic,
                               std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw std::invalid_argument("gradient_relative_error: size mismatch");
  }
  double max_diff = 0.0, max_mag = 1.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(analytic[i] - numeric[i]));
    max_mag = std::max({max_mag, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return max_diff / max_mag;
}

Cell exhaustive_cell_of(double cx, double cy, int s) {
  int row = -1, col = -1;
  for (int c = 0; c < s; ++c) {
    const double lo = static_cast<double>(c) / s;
    const double hi = static_cast<double>(c + 1) / s;
    if (cx >= lo && (cx < hi || (c == s - 1 && cx <= 1.0))) {
      col = c;
      break;
    }
  }
  for (int r = 0; r < s; ++r) {
    const double lo = static_cast<double>(r) / s;
    const double hi = static_cast<double>(r + 1) / s;
    if (cy >= lo && (cy < hi || (r == s - 1 && cy <= 1.0))) {
      row = r;
      break;
    }
  }
  if (row < 0 || col < 0) {
    throw std::invalid_argument("exhaustive_cell_of: center outside [0,1]");
  }
  return {row, col};
}

// ---------------------------------------------------------------------------
// The battery.

namespace {

double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

TargetGridV1 worked_example_target() {
  TargetGridV1 target;
  target.S = 1;
  target.B = 1;
  target.C = 2;
  target.values = {0.5, 0.5, 0.25, 0.25, 1.0, 1.0, 0.0};
  target.responsible = {1};
  return target;
}

const std::vector<double> kWorkedExamplePred = {0.6, 0.5,  0.25, 0.16,
                                                0.8, 0.9, 0.1};

bool check_worked_example(std::string& detail) {
  const auto breakdown = yolo_v1_loss(kWorkedExamplePred,
                                      worked_example_target(), LossWeights{});
  const double expected[6] = {0.05, 0.05, 0.04, 0.0, 0.02, 0.16};
  const double got[6] = {breakdown.coord_xy,   breakdown.coord_wh,
                         breakdown.obj_conf,   breakdown.noobj_conf,
                         breakdown.classification, breakdown.total};
  for (int i = 0; i < 6; ++i) {
    if (std::abs(got[i] - expected[i]) > 1e-12) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "term %d: expected %.17g got %.17g", i,
                    expected[i], got[i]);
      detail = buf;
      return false;
    }
  }
  return true;
}

// Annotation with centers in distinct cells so encode_v1 never collides.
ImageAnnotation random_annotation(std::mt19937_64& rng, int s, int c,
                                  int max_boxes) {
  ImageAnnotation ann;
  ann.image_id = "synthetic";
  const int n = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(
                                               std::min(max_boxes, s * s)));
  std::set<std::pair<int, int>> cells;
  while (static_cast<int>(cells.size()) < n) {
    cells.emplace(static_cast<int>(rng() % s), static_cast<int>(rng() % s));
  }
  for (const auto& [row, col] : cells) {
    LabeledBox lb;
    lb.class_id = static_cast<int>(rng() % c);
    lb.box.cx = (col + uniform_in(rng, 0.05, 0.95)) / s;
    lb.box.cy = (row + uniform_in(rng, 0.05, 0.95)) / s;
    lb.box.w = uniform_in(rng, 0.02, 0.6);
    lb.box.h = uniform_in(rng, 0.02, 0.6);
    ann.boxes.push_back(lb);
  }
  return ann;
}

// Prediction grid that stays clear of responsible-slot ties so the central
// differences see a smooth function.
std::vector<double> random_pred(std::mt19937_64& rng,
                                const TargetGridV1& target) {
  std::vector<double> pred(target.values.size());
  for (auto& v : pred) v = uniform_in(rng, 0.05, 0.95);
  for (int row = 0; row < target.S; ++row) {
    for (int col = 0; col < target.S; ++col) {
      if (!target.cell_has_object(row, col)) continue;
      const std::size_t truth_off = target.slot_offset(row, col, 0);
      const std::size_t pred_off = target.slot_offset(row, col, 0);
      pred[pred_off + 0] = target.values[truth_off + 0] + uniform_in(rng, -0.03, 0.03);
      pred[pred_off + 1] = target.values[truth_off + 1] + uniform_in(rng, -0.03, 0.03);
      pred[pred_off + 2] = target.values[truth_off + 2] * uniform_in(rng, 0.8, 1.2);
      pred[pred_off + 3] = target.values[truth_off + 3] * uniform_in(rng, 0.8, 1.2);
      for (int slot = 1; slot < target.B; ++slot) {
        const std::size_t off = target.slot_offset(row, col, slot);
        pred[off + 0] = uniform_in(rng, 0.0, 1.0);
        pred[off + 1] = uniform_in(rng, 0.0, 1.0);
        pred[off + 2] = uniform_in(rng, 0.01, 0.02);  // tiny, clearly worse
        pred[off + 3] = uniform_in(rng, 0.01, 0.02);
      }
    }
  }
  return pred;
}

bool check_gradient_fd(std::string& detail, int grids, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int g = 0; g < grids; ++g) {
    const int s = 1 + static_cast<int>(rng() % 4);
    const int b = 1 + static_cast<int>(rng() % 2);
    const int c = 4;
    const auto ann = random_annotation(rng, s, c, 3);
    const auto target = encode_v1(ann, s, b, c);
    const auto pred = random_pred(rng, target);

    const auto analytic = yolo_v1_loss_grad(pred, target, LossWeights{});
    const auto numeric = central_difference(
        [&](std::span<const double> x) {
          return yolo_v1_loss(x, target, LossWeights{}).total;
        },
        pred, 1e-5);
    worst = std::max(worst, gradient_relative_error(analytic, numeric));
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max relative error %.3g over %d grids",
                worst, grids);
  detail = buf;
  return worst < 1e-4;
}

bool check_bce_gradient(std::string& detail) {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(4), targets(4);
    for (auto& z : logits) z = uniform_in(rng, -4.0, 4.0);
    for (auto& t : targets) t = static_cast<double>(rng() % 2);
    const auto analytic = multilabel_class_loss_grad(logits, targets);
    const auto numeric = central_difference(
        [&](std::span<const double> x) {
          return multilabel_class_loss(x, targets);
        },
        logits, 1e-6);
    worst = std::max(worst, gradient_relative_error(analytic, numeric));
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max relative error %.3g", worst);
  detail = buf;
  return worst < 1e-6;
}

bool check_roundtrip(std::string& detail) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int s = 2 + static_cast<int>(rng() % 6);
    const int b = 1 + static_cast<int>(rng() % 2);
    const int c = 4;
    const auto ann = random_annotation(rng, s, c, 6);
    const auto grid = encode_v1(ann, s, b, c);
    const auto decoded = decode_v1(grid.values, s, b, c, 0.5, ann.image_id);
    if (decoded.size() != ann.boxes.size()) {
      detail = "decoded count mismatch";
      return false;
    }
    std::vector<bool> used(ann.boxes.size(), false);
    for (const auto& det : decoded) {
      bool found = false;
      for (std::size_t i = 0; i < ann.boxes.size(); ++i) {
        if (used[i] || ann.boxes[i].class_id != det.class_id) continue;
        const auto& box = ann.boxes[i].box;
        if (std::abs(box.cx - det.box.cx) <= 1e-9 &&
            std::abs(box.cy - det.box.cy) <= 1e-9 &&
            std::abs(box.w - det.box.w) <= 1e-9 &&
            std::abs(box.h - det.box.h) <= 1e-9) {
          used[i] = true;
          found = true;
          break;
        }
      }
      if (!found) {
        detail = "decoded box missing from annotation";
        return false;
      }
    }
  }
  return true;
}

bool check_offset_roundtrip(std::string& detail) {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 200; ++trial) {
    const int s = (rng() % 2) ? 7 : 13;
    const Cell cell{static_cast<int>(rng() % s), static_cast<int>(rng() % s)};
    BBoxCenter box;
    box.cx = (cell.col + uniform_in(rng, 0.01, 0.99)) / s;
    box.cy = (cell.row + uniform_in(rng, 0.01, 0.99)) / s;
    box.w = uniform_in(rng, 0.01, 1.2);
    box.h = uniform_in(rng, 0.01, 1.2);
    const WH anchor{uniform_in(rng, 0.05, 0.9), uniform_in(rng, 0.05, 0.9)};
    const auto decoded = offset_decode(offset_encode(box, cell, s, anchor),
                                       cell, s, anchor);
    if (std::abs(decoded.cx - box.cx) > 1e-9 ||
        std::abs(decoded.cy - box.cy) > 1e-9 ||
        std::abs(decoded.w - box.w) > 1e-9 ||
        std::abs(decoded.h - box.h) > 1e-9) {
      detail = "offset roundtrip off by more than 1e-9";
      return false;
    }
  }
  return true;
}

bool check_v3_objectness(std::string& detail, int configs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::array<int, 3> scales{52, 26, 13};
  for (int trial = 0; trial < configs; ++trial) {
    std::vector<WH> anchors(9);
    for (auto& a : anchors) {
      a.w = uniform_in(rng, 0.02, 0.9);
      a.h = uniform_in(rng, 0.02, 0.9);
    }
    ImageAnnotation ann = random_annotation(rng, 13, 4, 4);
    const auto target = encode_v3_targets(ann, anchors, scales, 4, 0.7);
    std::size_t positives = 0;
    for (const auto& g : target.grids) {
      positives += static_cast<std::size_t>(
          std::count(g.objectness.begin(), g.objectness.end(), kObjPositive));
    }
    if (positives != ann.boxes.size()) {
      char buf[96];
      std::snprintf(buf, sizeof(buf),
                    "%zu objects produced %zu positive slots",
                    ann.boxes.size(), positives);
      detail = buf;
      return false;
    }
  }
  return true;
}

std::vector<DetectionRecord> random_detections(std::mt19937_64& rng, int count,
                                               int num_classes) {
  std::vector<DetectionRecord> dets(static_cast<std::size_t>(count));
  for (auto& d : dets) {
    d.image_id = "img";
    d.class_id = static_cast<int>(rng() % num_classes);
    d.score = (rng() % 2) ? uniform_in(rng, 0.05, 1.0)
                          : 0.1 * (1 + static_cast<int>(rng() % 9));
    d.box.cx = uniform_in(rng, 0.3, 0.7);
    d.box.cy = uniform_in(rng, 0.3, 0.7);
    d.box.w = uniform_in(rng, 0.1, 0.6);
    d.box.h = uniform_in(rng, 0.1, 0.6);
  }
  return dets;
}

bool same_detections(const std::vector<DetectionRecord>& a,
                     const std::vector<DetectionRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].class_id != b[i].class_id || a[i].score != b[i].score ||
        a[i].box.cx != b[i].box.cx || a[i].box.cy != b[i].box.cy ||
        a[i].box.w != b[i].box.w || a[i].box.h != b[i].box.h) {
      return false;
    }
  }
  return true;
}

bool check_nms_brute_force(std::string& detail, int instances,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double thresholds[] = {0.3, 0.45, 0.5, 0.7};
  for (int trial = 0; trial < instances; ++trial) {
    const auto dets = random_detections(
        rng, static_cast<int>(rng() % 11), 4);
    const double thr = thresholds[rng() % 4];
    const bool agnostic = (rng() % 4) == 0;
    if (!same_detections(nms(dets, thr, agnostic),
                         brute_force_nms(dets, thr, agnostic))) {
      detail = "greedy and brute-force NMS disagree";
      return false;
    }
  }
  return true;
}

bool check_ap_oracle(std::string& detail, int instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < instances; ++trial) {
    const std::size_t num_gt = 1 + rng() % 4;
    const int num_det = static_cast<int>(rng() % 7);
    std::vector<std::pair<double, bool>> scored;
    std::size_t tp_left = num_gt;
    for (int i = 0; i < num_det; ++i) {
      const double score = (rng() % 2) ? uniform_in(rng, 0.05, 1.0)
                                       : 0.1 * (1 + static_cast<int>(rng() % 9));
      bool tp = tp_left > 0 && (rng() % 2);
      if (tp) --tp_left;
      scored.push_back({score, tp});
    }
    std::vector<ScoredVerdict> pooled;
    for (std::size_t i = 0; i < scored.size(); ++i) {
      pooled.push_back({scored[i].first, scored[i].second, "img", i});
    }
    const double fast =
        average_precision(pooled, num_gt, Interpolation::all_point);
    const double slow = threshold_enum_ap(scored, num_gt);
    worst = std::max(worst, std::abs(fast - slow));
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max |difference| %.3g", worst);
  detail = buf;
  return worst < 1e-9;
}

bool check_iou_monte_carlo(std::string& detail, int pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < pairs; ++trial) {
    auto random_corner = [&] {
      const double ax = uniform_in(rng, 0.0, 1.0);
      const double ay = uniform_in(rng, 0.0, 1.0);
      const double bx = uniform_in(rng, 0.0, 1.0);
      const double by = uniform_in(rng, 0.0, 1.0);
      return BBoxCorner{std::min(ax, bx), std::min(ay, by), std::max(ax, bx),
                        std::max(ay, by)};
    };
    const BBoxCorner a = random_corner();
    const BBoxCorner b = random_corner();
    worst = std::max(worst, std::abs(iou(a, b) - monte_carlo_iou(a, b, 1000,
                                                                 seed + trial)));
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max |difference| %.3g", worst);
  detail = buf;
  return worst < 1e-3;
}

bool check_anchor_trace(std::string& detail) {
  std::mt19937_64 rng(555);
  std::vector<std::vector<WH>> corpora;
  corpora.push_back(
      {{0.1, 0.1}, {0.1, 0.1}, {0.1, 0.1}, {0.1, 0.1}, {0.1, 0.1},
       {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
  for (int corpus = 0; corpus < 2; ++corpus) {
    std::vector<WH> boxes(80);
    for (auto& box : boxes) {
      box.w = uniform_in(rng, 0.02, 0.9);
      box.h = uniform_in(rng, 0.02, 0.9);
    }
    corpora.push_back(std::move(boxes));
  }
  int run = 0;
  for (const auto& boxes : corpora) {
    for (const int k : {1, 2, 5}) {
      if (boxes.size() < static_cast<std::size_t>(k)) continue;
      const auto set = kmeans_anchors(boxes, k, 900 + run++, 50);
      for (std::size_t i = 1; i < set.iou_trace.size(); ++i) {
        if (set.iou_trace[i] < set.iou_trace[i - 1]) {
          detail = "mean_best_iou decreased between iterations";
          return false;
        }
      }
    }
  }
  return true;
}

}  // namespace

std::vector<CheckResult> run_selfcheck() {
  std::vector<CheckResult> results;
  const auto run = [&](const std::string& name, auto&& fn) {
    CheckResult r;
    r.name = name;
    try {
      r.passed = fn(r.detail);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = e.what();
    }
    results.push_back(std::move(r));
  };

  run("loss-worked-example", [](std::string& d) { return check_worked_example(d); });
  run("loss-gradient-fd",
      [](std::string& d) { return check_gradient_fd(d, 20, 42); });
  run("bce-gradient-fd", [](std::string& d) { return check_bce_gradient(d); });
  run("encode-decode-roundtrip",
      [](std::string& d) { return check_roundtrip(d); });
  run("offset-roundtrip",
      [](std::string& d) { return check_offset_roundtrip(d); });
  run("v3-objectness-slots",
      [](std::string& d) { return check_v3_objectness(d, 50, 7); });
  run("nms-brute-force",
      [](std::string& d) { return check_nms_brute_force(d, 200, 11); });
  run("ap-threshold-oracle",
      [](std::string& d) { return check_ap_oracle(d, 200, 13); });
  run("iou-monte-carlo",
      [](std::string& d) { return check_iou_monte_carlo(d, 60, 17); });
  run("anchor-monotone-trace",
      [](std::string& d) { return check_anchor_trace(d); });
  return results;
}

}  // namespace yolokit
