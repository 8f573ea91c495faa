#include "yolokit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace yolokit {

using nlohmann::json;

std::size_t MatchOutcome::tp() const {
  return static_cast<std::size_t>(
      std::count_if(detections.begin(), detections.end(), [](const auto& m) {
        return m.verdict == Verdict::true_positive;
      }));
}

std::size_t MatchOutcome::fp() const {
  return static_cast<std::size_t>(
      std::count_if(detections.begin(), detections.end(), [](const auto& m) {
        return m.verdict == Verdict::false_positive;
      }));
}

std::size_t MatchOutcome::fn() const {
  return static_cast<std::size_t>(
      std::count(gt_matched.begin(), gt_matched.end(), false));
}

MatchOutcome match_detections(const std::vector<DetectionRecord>& detections,
                              const ImageAnnotation& ground_truth,
                              double iou_threshold, MatchMode mode) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument(
        "match_detections: iou_threshold must be in (0,1]");
  }
  for (const auto& d : detections) {
    if (!d.image_id.empty() && !ground_truth.image_id.empty() &&
        d.image_id != ground_truth.image_id) {
      throw std::invalid_argument("match_detections: detection for image '" +
                                  d.image_id + "' evaluated against '" +
                                  ground_truth.image_id + "'");
    }
  }

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return detections[a].score > detections[b].score;
                   });

  MatchOutcome outcome;
  outcome.gt_matched.assign(ground_truth.boxes.size(), false);
  outcome.detections.reserve(detections.size());

  for (const std::size_t det_index : order) {
    const auto& det = detections[det_index];
    const BBoxCorner det_box = center_to_corner(det.box);

    double best_iou = 0.0;
    std::optional<std::size_t> best_gt;
    for (std::size_t j = 0; j < ground_truth.boxes.size(); ++j) {
      if (outcome.gt_matched[j]) continue;
      if (mode == MatchMode::voc_standard &&
          ground_truth.boxes[j].class_id != det.class_id) {
        continue;
      }
      const double overlap =
          iou(det_box, center_to_corner(ground_truth.boxes[j].box));
      if (overlap > best_iou) {
        best_iou = overlap;
        best_gt = j;
      }
    }

    DetectionMatch m;
    m.det_index = det_index;
    m.iou = best_iou;
    m.score = det.score;
    m.class_id = det.class_id;
    if (best_gt && best_iou >= iou_threshold) {
      m.gt_index = best_gt;
      outcome.gt_matched[*best_gt] = true;
      if (mode == MatchMode::voc_standard) {
        m.verdict = Verdict::true_positive;
      } else {
        m.verdict = ground_truth.boxes[*best_gt].class_id == det.class_id
                        ? Verdict::true_positive
                        : Verdict::false_positive;
      }
    } else {
      // VOC counts every unmatched detection against precision; the literal
      // reading only counts misclassifications, so the rest drop out.
      m.verdict = mode == MatchMode::voc_standard ? Verdict::false_positive
                                                  : Verdict::discarded;
    }
    outcome.detections.push_back(std::move(m));
  }
  return outcome;
}

ClassCounts tally_by_class(const MatchOutcome& outcome,
                           const std::vector<DetectionRecord>& detections,
                           const ImageAnnotation& ground_truth,
                           int num_classes) {
  ClassCounts counts;
  counts.tp.assign(static_cast<std::size_t>(num_classes), 0);
  counts.fp.assign(static_cast<std::size_t>(num_classes), 0);
  counts.fn.assign(static_cast<std::size_t>(num_classes), 0);
  for (const auto& m : outcome.detections) {
    const int cls = detections[m.det_index].class_id;
    if (cls < 0 || cls >= num_classes) {
      throw std::invalid_argument("tally_by_class: detection class id " +
                                  std::to_string(cls) + " outside schema");
    }
    if (m.verdict == Verdict::true_positive) ++counts.tp[cls];
    if (m.verdict == Verdict::false_positive) ++counts.fp[cls];
  }
  for (std::size_t j = 0; j < outcome.gt_matched.size(); ++j) {
    if (!outcome.gt_matched[j]) {
      ++counts.fn[ground_truth.boxes[j].class_id];
    }
  }
  return counts;
}

namespace {

void sort_pool(std::vector<ScoredVerdict>& scored) {
  std::sort(scored.begin(), scored.end(),
            [](const ScoredVerdict& a, const ScoredVerdict& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.image_id != b.image_id) return a.image_id < b.image_id;
              return a.seq < b.seq;
            });
}

}  // namespace

std::vector<PRPoint> pr_curve(std::vector<ScoredVerdict> scored,
                              std::size_t num_gt) {
  if (num_gt == 0) {
    throw std::invalid_argument("pr_curve: class has no ground truth");
  }
  sort_pool(scored);
  std::vector<PRPoint> points;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    scored[i].true_positive ? ++tp : ++fp;
    // Score ties cannot be separated by any threshold; emit one point per
    // distinct score.
    if (i + 1 < scored.size() && scored[i + 1].score == scored[i].score) {
      continue;
    }
    PRPoint p;
    p.recall = static_cast<double>(tp) / static_cast<double>(num_gt);
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.score_threshold = scored[i].score;
    points.push_back(p);
  }
  return points;
}

double average_precision(std::vector<ScoredVerdict> scored, std::size_t num_gt,
                         Interpolation interpolation) {
  const auto points = pr_curve(std::move(scored), num_gt);
  if (points.empty()) return 0.0;

  if (interpolation == Interpolation::all_point) {
    std::vector<double> envelope(points.size());
    double running = 0.0;
    for (std::size_t i = points.size(); i-- > 0;) {
      running = std::max(running, points[i].precision);
      envelope[i] = running;
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      ap += (points[i].recall - prev_recall) * envelope[i];
      prev_recall = points[i].recall;
    }
    return ap;
  }

  double sum = 0.0;
  for (int k = 0; k <= 10; ++k) {
    const double anchor = static_cast<double>(k) / 10.0;
    double best = 0.0;
    for (const auto& p : points) {
      if (p.recall >= anchor - 1e-9) best = std::max(best, p.precision);
    }
    sum += best;
  }
  return sum / 11.0;
}

double mean_ap(const std::vector<double>& per_class_ap) {
  if (per_class_ap.empty()) {
    throw std::invalid_argument("mean_ap: no classes included");
  }
  return std::accumulate(per_class_ap.begin(), per_class_ap.end(), 0.0) /
         static_cast<double>(per_class_ap.size());
}

std::optional<double> average_iou(const std::vector<MatchOutcome>& outcomes) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& outcome : outcomes) {
    for (const auto& m : outcome.detections) {
      if (m.verdict == Verdict::true_positive) {
        sum += m.iou;
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

namespace {

double nearest_rank(const std::vector<double>& sorted, double percentile) {
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

}  // namespace

LatencyStats timing_harness(const std::function<void(std::size_t)>& per_image,
                            std::size_t image_count, int warmup, int repeats,
                            ClockFn clock) {
  if (image_count == 0) {
    throw std::invalid_argument("timing_harness: empty image list");
  }
  if (repeats < 1) {
    throw std::invalid_argument("timing_harness: repeats must be >= 1");
  }
  if (warmup < 0) {
    throw std::invalid_argument("timing_harness: warmup must be >= 0");
  }
  if (!clock) {
    clock = [] {
      return std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::steady_clock::now().time_since_epoch());
    };
  }
  for (int pass = 0; pass < warmup; ++pass) {
    for (std::size_t i = 0; i < image_count; ++i) per_image(i);
  }
  std::vector<double> samples_ms;
  samples_ms.reserve(static_cast<std::size_t>(repeats) * image_count);
  for (int pass = 0; pass < repeats; ++pass) {
    for (std::size_t i = 0; i < image_count; ++i) {
      const auto start = clock();
      per_image(i);
      const auto stop = clock();
      samples_ms.push_back(
          std::chrono::duration<double, std::milli>(stop - start).count());
    }
  }
  std::sort(samples_ms.begin(), samples_ms.end());
  LatencyStats stats;
  stats.samples = samples_ms.size();
  stats.mean_ms =
      std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) /
      static_cast<double>(samples_ms.size());
  stats.median_ms = nearest_rank(samples_ms, 50.0);
  stats.p95_ms = nearest_rank(samples_ms, 95.0);
  return stats;
}

EvalReport evaluate_dataset(const DatasetManifest& ground_truth,
                            const std::vector<DetectionRecord>& detections,
                            const EvalConfig& config) {
  if (config.iou_thresholds.empty()) {
    throw std::invalid_argument("evaluate_dataset: no IoU thresholds");
  }
  const int num_classes = ground_truth.schema.num_classes();

  std::map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < ground_truth.annotations.size(); ++i) {
    image_index.emplace(ground_truth.annotations[i].image_id, i);
  }
  std::set<std::string> offenders;
  for (const auto& d : detections) {
    if (!image_index.count(d.image_id)) offenders.insert(d.image_id);
  }
  if (!offenders.empty()) {
    std::string msg = "evaluate_dataset: detections reference unknown image ids:";
    for (const auto& id : offenders) msg += " '" + id + "'";
    throw std::runtime_error(msg);
  }

  std::map<std::size_t, std::vector<DetectionRecord>> dets_by_image;
  for (const auto& d : detections) {
    dets_by_image[image_index.at(d.image_id)].push_back(d);
  }

  const DatasetStats stats = dataset_stats(ground_truth);

  EvalReport report;
  report.interpolation = config.interpolation;
  for (int cls = 0; cls < num_classes; ++cls) {
    if (stats.instances[cls] == 0) report.excluded_classes.push_back(cls);
  }

  // rows are assembled class-major afterwards; counts gather threshold-major
  struct PerThreshold {
    std::vector<long> tp_voc, fp_voc, fn_voc, tp_paper, fp_paper, fn_paper;
    std::vector<std::optional<double>> ap;
    std::optional<double> map;
    std::optional<double> avg_iou;
    std::vector<PRCurve> curves;
  };
  std::vector<PerThreshold> per_threshold;

  static const std::vector<DetectionRecord> kNoDetections;
  for (const double threshold : config.iou_thresholds) {
    PerThreshold acc;
    acc.tp_voc.assign(num_classes, 0);
    acc.fp_voc.assign(num_classes, 0);
    acc.fn_voc.assign(num_classes, 0);
    acc.tp_paper.assign(num_classes, 0);
    acc.fp_paper.assign(num_classes, 0);
    acc.fn_paper.assign(num_classes, 0);
    acc.ap.assign(num_classes, std::nullopt);

    std::vector<MatchOutcome> voc_outcomes;
    std::vector<std::vector<ScoredVerdict>> pooled(num_classes);

    for (std::size_t i = 0; i < ground_truth.annotations.size(); ++i) {
      const auto& ann = ground_truth.annotations[i];
      const auto it = dets_by_image.find(i);
      const auto& image_dets =
          it == dets_by_image.end() ? kNoDetections : it->second;

      MatchOutcome voc = match_detections(image_dets, ann, threshold,
                                          MatchMode::voc_standard);
      const MatchOutcome paper = match_detections(image_dets, ann, threshold,
                                                  MatchMode::paper_literal);
      const ClassCounts voc_counts =
          tally_by_class(voc, image_dets, ann, num_classes);
      const ClassCounts paper_counts =
          tally_by_class(paper, image_dets, ann, num_classes);
      for (int cls = 0; cls < num_classes; ++cls) {
        acc.tp_voc[cls] += voc_counts.tp[cls];
        acc.fp_voc[cls] += voc_counts.fp[cls];
        acc.fn_voc[cls] += voc_counts.fn[cls];
        acc.tp_paper[cls] += paper_counts.tp[cls];
        acc.fp_paper[cls] += paper_counts.fp[cls];
        acc.fn_paper[cls] += paper_counts.fn[cls];
      }
      for (const auto& m : voc.detections) {
        pooled[m.class_id].push_back({m.score,
                                      m.verdict == Verdict::true_positive,
                                      ann.image_id, m.det_index});
      }
      voc_outcomes.push_back(std::move(voc));
    }

    std::vector<double> included_aps;
    for (int cls = 0; cls < num_classes; ++cls) {
      if (stats.instances[cls] == 0) continue;
      const double ap = average_precision(pooled[cls], stats.instances[cls],
                                          config.interpolation);
      acc.ap[cls] = ap;
      included_aps.push_back(ap);
      PRCurve curve;
      curve.class_id = cls;
      curve.iou_threshold = threshold;
      curve.points = pr_curve(pooled[cls], stats.instances[cls]);
      acc.curves.push_back(std::move(curve));
    }
    if (!included_aps.empty()) acc.map = mean_ap(included_aps);
    acc.avg_iou = average_iou(voc_outcomes);
    per_threshold.push_back(std::move(acc));
  }

  for (int cls = 0; cls < num_classes; ++cls) {
    for (std::size_t t = 0; t < config.iou_thresholds.size(); ++t) {
      const auto& acc = per_threshold[t];
      ClassEvalRow row;
      row.class_id = cls;
      row.class_name = ground_truth.schema.names[cls];
      row.iou_threshold = config.iou_thresholds[t];
      row.ap = acc.ap[cls];
      row.gt_count = static_cast<long>(stats.instances[cls]);
      row.tp_voc = acc.tp_voc[cls];
      row.fp_voc = acc.fp_voc[cls];
      row.fn_voc = acc.fn_voc[cls];
      row.tp_paper = acc.tp_paper[cls];
      row.fp_paper = acc.fp_paper[cls];
      row.fn_paper = acc.fn_paper[cls];
      report.rows.push_back(std::move(row));
    }
  }
  for (std::size_t t = 0; t < config.iou_thresholds.size(); ++t) {
    report.thresholds.push_back({config.iou_thresholds[t], per_threshold[t].map,
                                 per_threshold[t].avg_iou});
    for (auto& curve : per_threshold[t].curves) {
      report.pr_curves.push_back(std::move(curve));
    }
  }

  if (config.time_matching) {
    const double t0 = config.iou_thresholds.front();
    report.latency = timing_harness(
        [&](std::size_t i) {
          const auto& ann = ground_truth.annotations[i];
          const auto it = dets_by_image.find(i);
          const auto& image_dets =
              it == dets_by_image.end() ? kNoDetections : it->second;
          match_detections(image_dets, ann, t0, MatchMode::voc_standard);
          match_detections(image_dets, ann, t0, MatchMode::paper_literal);
        },
        ground_truth.annotations.size(), /*warmup=*/1, /*repeats=*/3);
  }
  return report;
}

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char ch : s) {
    if (ch == '"') quoted += '"';
    quoted += ch;
  }
  quoted += '"';
  return quoted;
}

const char* interp_name(Interpolation interp) {
  return interp == Interpolation::all_point ? "all_point" : "eleven_point";
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json doc;
  doc["interpolation"] = interp_name(report.interpolation);
  json thresholds = json::array();
  for (const auto& t : report.thresholds) {
    json entry;
    entry["iou"] = t.iou_threshold;
    entry["map"] = t.map ? json(*t.map) : json(nullptr);
    entry["average_iou"] = t.avg_iou ? json(*t.avg_iou) : json(nullptr);
    thresholds.push_back(std::move(entry));
  }
  doc["thresholds"] = std::move(thresholds);

  json classes = json::array();
  int current = -1;
  for (const auto& row : report.rows) {
    if (row.class_id != current) {
      classes.push_back({{"id", row.class_id},
                         {"name", row.class_name},
                         {"gt_count", row.gt_count},
                         {"metrics", json::array()}});
      current = row.class_id;
    }
    json metric;
    metric["iou"] = row.iou_threshold;
    metric["ap"] = row.ap ? json(*row.ap) : json(nullptr);
    metric["voc"] = {{"tp", row.tp_voc}, {"fp", row.fp_voc}, {"fn", row.fn_voc}};
    metric["paper"] = {{"tp", row.tp_paper},
                       {"fp", row.fp_paper},
                       {"fn", row.fn_paper}};
    classes.back()["metrics"].push_back(std::move(metric));
  }
  doc["classes"] = std::move(classes);
  doc["excluded_from_map"] = report.excluded_classes;
  if (report.latency) {
    doc["latency_ms"] = {{"mean", report.latency->mean_ms},
                         {"median", report.latency->median_ms},
                         {"p95", report.latency->p95_ms},
                         {"samples", report.latency->samples}};
  } else {
    doc["latency_ms"] = nullptr;
  }
  return doc.dump(2) + "\n";
}

std::string report_to_csv(const EvalReport& report) {
  std::string out = "class,iou,ap,tp,fp,fn,mode\n";
  for (const auto& row : report.rows) {
    const std::string name = csv_field(row.class_name);
    const std::string iou_s = fmt6(row.iou_threshold);
    out += name + "," + iou_s + "," + (row.ap ? fmt6(*row.ap) : "") + "," +
           std::to_string(row.tp_voc) + "," + std::to_string(row.fp_voc) + "," +
           std::to_string(row.fn_voc) + ",voc\n";
    out += name + "," + iou_s + ",," + std::to_string(row.tp_paper) + "," +
           std::to_string(row.fp_paper) + "," + std::to_string(row.fn_paper) +
           ",paper\n";
  }
  return out;
}

std::string pr_curves_to_csv(const EvalReport& report,
                             const ClassSchema& schema) {
  std::string out = "class,iou,recall,precision,score_threshold\n";
  for (const auto& curve : report.pr_curves) {
    const std::string name = csv_field(schema.names.at(curve.class_id));
    const std::string iou_s = fmt6(curve.iou_threshold);
    for (const auto& p : curve.points) {
      out += name + "," + iou_s + "," + fmt6(p.recall) + "," +
             fmt6(p.precision) + "," + fmt6(p.score_threshold) + "\n";
    }
  }
  return out;
}

}  // namespace yolokit
