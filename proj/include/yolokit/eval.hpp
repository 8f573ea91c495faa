#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "yolokit/dataset.hpp"
#include "yolokit/postprocess.hpp"

namespace yolokit {

enum class MatchMode {
  voc_standard,   // greedy per class; unmatched detections are false positives
  paper_literal,  // class-blind spatial match; FP counts misclassifications
                  // only, spatially unmatched detections are discarded
};

enum class Interpolation {
  all_point,     // exact area under the precision envelope
  eleven_point,  // mean of max precision at recall 0, 0.1, ..., 1.0
};

enum class Verdict { true_positive, false_positive, discarded };

struct DetectionMatch {
  std::size_t det_index = 0;             // into the input detections
  std::optional<std::size_t> gt_index;   // matched ground truth, if any
  double iou = 0.0;                      // best overlap seen
  Verdict verdict = Verdict::discarded;
  double score = 0.0;
  int class_id = 0;
};

struct MatchOutcome {
  std::vector<DetectionMatch> detections;  // sorted by score descending
  std::vector<bool> gt_matched;            // per ground-truth box

  std::size_t tp() const;
  std::size_t fp() const;
  std::size_t fn() const;  // ground truths with no match
};

// Matches one image's detections against its ground truth at the given IoU
// threshold. Detections are sorted by score internally (ties keep input
// order); each ground truth is consumed by at most one detection.
MatchOutcome match_detections(const std::vector<DetectionRecord>& detections,
                              const ImageAnnotation& ground_truth,
                              double iou_threshold, MatchMode mode);

// TP/FP/FN split by class: TP and FP attribute to the detection's class,
// FN to the ground truth's class.
struct ClassCounts {
  std::vector<long> tp, fp, fn;
};
ClassCounts tally_by_class(const MatchOutcome& outcome,
                           const std::vector<DetectionRecord>& detections,
                           const ImageAnnotation& ground_truth, int num_classes);

// A detection verdict pooled across images for one class. image_id and seq
// only break ties so merges stay deterministic.
struct ScoredVerdict {
  double score = 0.0;
  bool true_positive = false;
  std::string image_id;
  std::size_t seq = 0;
};

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score_threshold = 0.0;
};

// Precision/recall points, one per distinct score (ties collapse into one
// point), recall computed against num_gt.
std::vector<PRPoint> pr_curve(std::vector<ScoredVerdict> scored,
                              std::size_t num_gt);

// Area under the precision-vs-recall curve for one class. num_gt must be
// >= 1; zero-instance classes are excluded upstream rather than scored 0.
double average_precision(std::vector<ScoredVerdict> scored, std::size_t num_gt,
                         Interpolation interpolation);

// Unweighted mean over the included classes.
double mean_ap(const std::vector<double>& per_class_ap);

// Mean IoU over true-positive matches; empty when nothing matched.
std::optional<double> average_iou(const std::vector<MatchOutcome>& outcomes);

struct LatencyStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;  // nearest-rank percentile, like p95
  double p95_ms = 0.0;
  std::size_t samples = 0;
};

using ClockFn = std::function<std::chrono::nanoseconds()>;

// Runs `per_image` over image indices 0..image_count-1: `warmup` unrecorded
// full passes, then `repeats` recorded ones, one latency sample per (pass,
// image). The clock is injectable for testing; the default reads the
// monotonic steady clock.
LatencyStats timing_harness(const std::function<void(std::size_t)>& per_image,
                            std::size_t image_count, int warmup, int repeats,
                            ClockFn clock = {});

struct EvalConfig {
  std::vector<double> iou_thresholds{0.5, 0.6, 0.7, 0.8, 0.9};
  Interpolation interpolation = Interpolation::all_point;
  bool time_matching = false;  // latency numbers make outputs run-dependent
};

struct ClassEvalRow {
  int class_id = 0;
  std::string class_name;
  double iou_threshold = 0.0;
  std::optional<double> ap;  // absent for classes with no ground truth
  long gt_count = 0;
  long tp_voc = 0, fp_voc = 0, fn_voc = 0;
  long tp_paper = 0, fp_paper = 0, fn_paper = 0;
};

struct ThresholdSummary {
  double iou_threshold = 0.0;
  std::optional<double> map;
  std::optional<double> avg_iou;  // over VOC true positives
};

struct PRCurve {
  int class_id = 0;
  double iou_threshold = 0.0;
  std::vector<PRPoint> points;
};

struct EvalReport {
  Interpolation interpolation = Interpolation::all_point;
  std::vector<ClassEvalRow> rows;        // class-major, then threshold
  std::vector<ThresholdSummary> thresholds;
  std::vector<int> excluded_classes;     // no ground truth, skipped by mAP
  std::vector<PRCurve> pr_curves;
  std::optional<LatencyStats> latency;
};

// Full dataset evaluation: per-image matching in both modes at every
// threshold, VOC-standard matches feed AP/mAP. Detections whose image_id is
// not in the manifest raise an error listing the offenders.
EvalReport evaluate_dataset(const DatasetManifest& ground_truth,
                            const std::vector<DetectionRecord>& detections,
                            const EvalConfig& config = {});

// Serializations used by the CLI; floats are rendered with 6 significant
// digits so repeated runs are byte-identical.
std::string report_to_json(const EvalReport& report);
std::string report_to_csv(const EvalReport& report);
std::string pr_curves_to_csv(const EvalReport& report,
                             const ClassSchema& schema);

}  // namespace yolokit
