#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "yolokit/geometry.hpp"

namespace yolokit {

// One predicted box. The interchange unit between decoding, postprocessing
// and evaluation.
struct DetectionRecord {
  std::string image_id;
  int class_id = 0;
  double score = 0.0;
  BBoxCenter box;
};

// Greedy non-maximum suppression over one image's detections: sort by score
// descending (ties keep input order), keep the top, drop remaining
// detections of the same class (any class when class_agnostic) with
// IoU >= iou_threshold against it. Throws if detections mix image ids.
std::vector<DetectionRecord> nms(const std::vector<DetectionRecord>& detections,
                                 double iou_threshold,
                                 bool class_agnostic = false);

// Keeps detections with score >= min_score, order preserved.
std::vector<DetectionRecord> confidence_filter(
    const std::vector<DetectionRecord>& detections, double min_score);

// Detections travel as JSON lines, one object per line:
//   {"image_id":..., "class_id":..., "score":..., "cx":..., "cy":..., "w":..., "h":...}
std::string format_detections_jsonl(
    const std::vector<DetectionRecord>& detections);
std::vector<DetectionRecord> parse_detections_jsonl(std::string_view text);

std::vector<DetectionRecord> load_detections_jsonl(
    const std::filesystem::path& path);
void save_detections_jsonl(const std::vector<DetectionRecord>& detections,
                           const std::filesystem::path& path);

}  // namespace yolokit
