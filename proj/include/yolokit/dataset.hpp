#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "yolokit/geometry.hpp"

namespace yolokit {

// Ordered class names; index = class id.
struct ClassSchema {
  std::vector<std::string> names;

  int num_classes() const { return static_cast<int>(names.size()); }

  // The four prayer postures, in the order used throughout the reports.
  static ClassSchema salat_default() {
    return {{"Qiyam(Standing)", "Ruku(Bowing)", "Sujud(Prostrating)",
             "Julus(Sitting)"}};
  }
};

struct LabeledBox {
  int class_id = 0;
  BBoxCenter box;
};

struct ImageAnnotation {
  std::string image_id;
  std::optional<int> width;   // pixels, when known
  std::optional<int> height;
  std::vector<LabeledBox> boxes;
};

struct DatasetManifest {
  ClassSchema schema;
  std::vector<ImageAnnotation> annotations;
};

struct DatasetStats {
  std::size_t images = 0;
  std::vector<std::size_t> instances;  // per class id

  std::size_t total_instances() const;
};

// Raised on malformed label/manifest text; `line` is 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line;
};

// Parses darknet-style label text: one "class_id cx cy w h" per nonempty
// line, normalized coordinates, '.' decimal separator. Rejects out-of-range
// class ids, cx/cy outside [0,1] and w/h outside [0,1], naming the line.
std::vector<LabeledBox> parse_label_file(std::string_view text,
                                         const ClassSchema& schema);

// Inverse of parse_label_file, 6 decimal places.
std::string format_label_file(const std::vector<LabeledBox>& boxes);

// Image-level split: deterministic shuffle by seed, train takes
// floor(N * train_fraction) images, the rest goes to test. Both halves keep
// the original manifest order.
std::pair<DatasetManifest, DatasetManifest> split_dataset(
    const DatasetManifest& manifest, double train_fraction,
    std::uint64_t seed);

DatasetStats dataset_stats(const DatasetManifest& manifest);

// Manifest JSON: an array of {image_id, width?, height?,
// boxes:[{class, cx, cy, w, h}]}. The class schema travels in a sidecar
// classes.txt (one name per line, line index = class id).
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view text, ClassSchema schema);

ClassSchema load_class_schema(const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path,
                              ClassSchema schema);
void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path);

}  // namespace yolokit
