#include "yolokit/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace yolokit {

using nlohmann::json;

std::size_t DatasetStats::total_instances() const {
  return std::accumulate(instances.begin(), instances.end(), std::size_t{0});
}

ParseError::ParseError(std::size_t line_no, const std::string& message)
    : std::runtime_error("line " + std::to_string(line_no) + ": " + message),
      line(line_no) {}

namespace {

std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> tokens;
  std::istringstream stream{std::string(line)};
  std::string tok;
  while (stream >> tok) tokens.push_back(tok);
  return tokens;
}

double parse_coord(const std::string& tok, std::size_t line_no,
                   const char* what) {
  std::size_t consumed = 0;
  double value = 0;
  try {
    value = std::stod(tok, &consumed);
  } catch (const std::exception&) {
    throw ParseError(line_no, std::string("non-numeric ") + what + " '" + tok + "'");
  }
  if (consumed != tok.size() || std::isnan(value) || std::isinf(value)) {
    throw ParseError(line_no, std::string("non-numeric ") + what + " '" + tok + "'");
  }
  return value;
}

}  // namespace

std::vector<LabeledBox> parse_label_file(std::string_view text,
                                         const ClassSchema& schema) {
  std::vector<LabeledBox> boxes;
  const int num_classes = schema.num_classes();
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const std::string_view line =
        text.substr(pos, eol == std::string_view::npos ? eol : eol - pos);
    ++line_no;
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;

    const auto tokens = split_tokens(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 5) {
      throw ParseError(line_no, "expected 5 tokens (class_id cx cy w h), got " +
                                    std::to_string(tokens.size()));
    }
    std::size_t consumed = 0;
    long class_id = 0;
    try {
      class_id = std::stol(tokens[0], &consumed);
    } catch (const std::exception&) {
      throw ParseError(line_no, "non-numeric class id '" + tokens[0] + "'");
    }
    if (consumed != tokens[0].size()) {
      throw ParseError(line_no, "non-numeric class id '" + tokens[0] + "'");
    }
    if (class_id < 0 || class_id >= num_classes) {
      throw ParseError(line_no, "class id " + std::to_string(class_id) +
                                    " out of range (C=" +
                                    std::to_string(num_classes) + ")");
    }
    BBoxCenter box;
    box.cx = parse_coord(tokens[1], line_no, "cx");
    box.cy = parse_coord(tokens[2], line_no, "cy");
    box.w = parse_coord(tokens[3], line_no, "w");
    box.h = parse_coord(tokens[4], line_no, "h");
    if (box.cx < 0.0 || box.cx > 1.0 || box.cy < 0.0 || box.cy > 1.0) {
      throw ParseError(line_no, "center outside [0,1]");
    }
    if (box.w < 0.0 || box.w > 1.0 || box.h < 0.0 || box.h > 1.0) {
      throw ParseError(line_no, "size outside [0,1]");
    }
    boxes.push_back({static_cast<int>(class_id), box});
  }
  return boxes;
}

std::string format_label_file(const std::vector<LabeledBox>& boxes) {
  std::string out;
  char buf[160];
  for (const auto& lb : boxes) {
    std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f\n", lb.class_id,
                  lb.box.cx, lb.box.cy, lb.box.w, lb.box.h);
    out += buf;
  }
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(
    const DatasetManifest& manifest, double train_fraction,
    std::uint64_t seed) {
  if (manifest.annotations.empty()) {
    throw std::invalid_argument("split_dataset: empty manifest");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split_dataset: train_fraction must be in (0,1)");
  }
  const std::size_t n = manifest.annotations.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  // Fisher-Yates with an explicit mt19937_64 draw; std::shuffle's use of
  // distributions is implementation-defined, this order is not.
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }

  const auto train_size = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * train_fraction));
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + train_size);
  std::vector<std::size_t> test_idx(order.begin() + train_size, order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  DatasetManifest train{manifest.schema, {}};
  DatasetManifest test{manifest.schema, {}};
  train.annotations.reserve(train_idx.size());
  test.annotations.reserve(test_idx.size());
  for (auto i : train_idx) train.annotations.push_back(manifest.annotations[i]);
  for (auto i : test_idx) test.annotations.push_back(manifest.annotations[i]);
  return {std::move(train), std::move(test)};
}

DatasetStats dataset_stats(const DatasetManifest& manifest) {
  DatasetStats stats;
  stats.images = manifest.annotations.size();
  stats.instances.assign(manifest.schema.names.size(), 0);
  for (const auto& ann : manifest.annotations) {
    for (const auto& lb : ann.boxes) {
      if (lb.class_id < 0 ||
          lb.class_id >= static_cast<int>(stats.instances.size())) {
        throw std::invalid_argument("dataset_stats: class id " +
                                    std::to_string(lb.class_id) +
                                    " outside schema");
      }
      ++stats.instances[static_cast<std::size_t>(lb.class_id)];
    }
  }
  return stats;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json images = json::array();
  for (const auto& ann : manifest.annotations) {
    json entry;
    entry["image_id"] = ann.image_id;
    if (ann.width) entry["width"] = *ann.width;
    if (ann.height) entry["height"] = *ann.height;
    json boxes = json::array();
    for (const auto& lb : ann.boxes) {
      boxes.push_back({{"class", lb.class_id},
                       {"cx", lb.box.cx},
                       {"cy", lb.box.cy},
                       {"w", lb.box.w},
                       {"h", lb.box.h}});
    }
    entry["boxes"] = std::move(boxes);
    images.push_back(std::move(entry));
  }
  return images.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view text, ClassSchema schema) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("manifest: invalid JSON: ") + e.what());
  }
  if (!doc.is_array()) {
    throw std::runtime_error("manifest: top-level JSON value must be an array");
  }
  DatasetManifest manifest{std::move(schema), {}};
  const int num_classes = manifest.schema.num_classes();
  std::set<std::string> seen_ids;
  for (const auto& entry : doc) {
    ImageAnnotation ann;
    ann.image_id = entry.at("image_id").get<std::string>();
    if (!seen_ids.insert(ann.image_id).second) {
      throw std::runtime_error("manifest: duplicate image_id '" + ann.image_id +
                               "'");
    }
    if (entry.contains("width")) ann.width = entry.at("width").get<int>();
    if (entry.contains("height")) ann.height = entry.at("height").get<int>();
    if ((ann.width && *ann.width <= 0) || (ann.height && *ann.height <= 0)) {
      throw std::runtime_error("manifest: nonpositive image dimensions for '" +
                               ann.image_id + "'");
    }
    for (const auto& b : entry.at("boxes")) {
      LabeledBox lb;
      lb.class_id = b.at("class").get<int>();
      lb.box = {b.at("cx").get<double>(), b.at("cy").get<double>(),
                b.at("w").get<double>(), b.at("h").get<double>()};
      if (lb.class_id < 0 || lb.class_id >= num_classes) {
        throw std::runtime_error("manifest: class id out of range in '" +
                                 ann.image_id + "'");
      }
      if (lb.box.cx < 0.0 || lb.box.cx > 1.0 || lb.box.cy < 0.0 ||
          lb.box.cy > 1.0 || lb.box.w < 0.0 || lb.box.h < 0.0) {
        throw std::runtime_error("manifest: malformed box in '" + ann.image_id +
                                 "'");
      }
      ann.boxes.push_back(lb);
    }
    manifest.annotations.push_back(std::move(ann));
  }
  return manifest;
}

ClassSchema load_class_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open class file: " + path.string());
  }
  ClassSchema schema;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    schema.names.push_back(line);
  }
  while (!schema.names.empty() && schema.names.back().empty()) {
    schema.names.pop_back();
  }
  for (const auto& name : schema.names) {
    if (name.empty()) {
      throw std::runtime_error("class file has an empty line: " + path.string());
    }
  }
  if (schema.names.empty()) {
    throw std::runtime_error("class file lists no classes: " + path.string());
  }
  return schema;
}

DatasetManifest load_manifest(const std::filesystem::path& path,
                              ClassSchema schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open manifest: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return manifest_from_json(buffer.str(), std::move(schema));
}

void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write manifest: " + path.string());
  }
  out << manifest_to_json(manifest);
}

}  // namespace yolokit
