#include "yolokit/postprocess.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace yolokit {

using nlohmann::json;

std::vector<DetectionRecord> nms(const std::vector<DetectionRecord>& detections,
                                 double iou_threshold, bool class_agnostic) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw std::invalid_argument("nms: iou_threshold must be in (0,1]");
  }
  for (const auto& d : detections) {
    if (d.image_id != detections.front().image_id) {
      throw std::invalid_argument("nms: detections mix image ids ('" +
                                  detections.front().image_id + "' vs '" +
                                  d.image_id + "')");
    }
  }

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].score > detections[b].score;
  });

  std::vector<bool> suppressed(detections.size(), false);
  std::vector<DetectionRecord> kept;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t top = order[i];
    if (suppressed[top]) continue;
    kept.push_back(detections[top]);
    const BBoxCorner top_box = center_to_corner(detections[top].box);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (suppressed[other]) continue;
      if (!class_agnostic &&
          detections[other].class_id != detections[top].class_id) {
        continue;
      }
      if (iou(top_box, center_to_corner(detections[other].box)) >=
          iou_threshold) {
        suppressed[other] = true;
      }
    }
  }
  return kept;
}

std::vector<DetectionRecord> confidence_filter(
    const std::vector<DetectionRecord>& detections, double min_score) {
  if (min_score < 0.0 || min_score > 1.0) {
    throw std::invalid_argument("confidence_filter: min_score must be in [0,1]");
  }
  std::vector<DetectionRecord> kept;
  for (const auto& d : detections) {
    if (d.score >= min_score) kept.push_back(d);
  }
  return kept;
}

std::string format_detections_jsonl(
    const std::vector<DetectionRecord>& detections) {
  std::string out;
  for (const auto& d : detections) {
    json line = {{"image_id", d.image_id}, {"class_id", d.class_id},
                 {"score", d.score},       {"cx", d.box.cx},
                 {"cy", d.box.cy},         {"w", d.box.w},
                 {"h", d.box.h}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::vector<DetectionRecord> parse_detections_jsonl(std::string_view text) {
  std::vector<DetectionRecord> detections;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, eol == std::string_view::npos ? eol : eol - pos);
    ++line_no;
    pos = eol == std::string_view::npos ? text.size() : eol + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json doc;
    try {
      doc = json::parse(line);
      DetectionRecord d;
      d.image_id = doc.at("image_id").get<std::string>();
      d.class_id = doc.at("class_id").get<int>();
      d.score = doc.at("score").get<double>();
      d.box = {doc.at("cx").get<double>(), doc.at("cy").get<double>(),
               doc.at("w").get<double>(), doc.at("h").get<double>()};
      if (d.score < 0.0 || d.score > 1.0) {
        throw std::runtime_error("score outside [0,1]");
      }
      detections.push_back(std::move(d));
    } catch (const std::exception& e) {
      throw std::runtime_error("detections line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return detections;
}

std::vector<DetectionRecord> load_detections_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open detections: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_detections_jsonl(buffer.str());
}

void save_detections_jsonl(const std::vector<DetectionRecord>& detections,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write detections: " + path.string());
  }
  out << format_detections_jsonl(detections);
}

}  // namespace yolokit
