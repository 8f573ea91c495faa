#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "yolokit/dataset.hpp"
#include "yolokit/geometry.hpp"
#include "yolokit/postprocess.hpp"

namespace yolokit {

// Output tensor shapes: S x S x (B*5+C) for the single-scale grid,
// S x S x (3*(5+C)) per scale for the three-scale variant.
std::array<int, 3> output_shape_v1(int s, int b, int c);
std::array<int, 3> output_shape_v3(int s, int c);

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

// Grid cell owning a normalized center: floor(coord * S), clamped to S-1 so
// centers sitting exactly on 1.0 stay inside the grid.
Cell cell_of(double cx, double cy, int s);

// Single-scale target/prediction tensor. Cell layout: B slots of
// (x, y, w, h, confidence) followed by C class probabilities. Box
// coordinates are image-relative (not cell-relative), the same space the
// loss is evaluated in.
struct TargetGridV1 {
  int S = 0;
  int B = 0;
  int C = 0;
  std::vector<double> values;             // S*S*(B*5+C)
  std::vector<std::uint8_t> responsible;  // S*S*B, 1 where a slot owns an object

  std::size_t cell_stride() const { return static_cast<std::size_t>(B) * 5 + C; }
  std::size_t cell_offset(int row, int col) const {
    return (static_cast<std::size_t>(row) * S + col) * cell_stride();
  }
  std::size_t slot_offset(int row, int col, int slot) const {
    return cell_offset(row, col) + static_cast<std::size_t>(slot) * 5;
  }
  std::size_t class_offset(int row, int col) const {
    return cell_offset(row, col) + static_cast<std::size_t>(B) * 5;
  }
  std::size_t mask_index(int row, int col, int slot) const {
    return (static_cast<std::size_t>(row) * S + col) * B + slot;
  }
  bool cell_has_object(int row, int col) const;
};

enum class CollisionPolicy {
  strict,      // second object mapping to an occupied cell is an error
  keep_first,  // later objects are dropped and reported
};

// Builds the single-scale training target: the object's cell gets the box in
// slot 0 with confidence 1 and a one-hot class vector; everything else stays
// zero. `dropped`, when given, receives the annotation indices discarded
// under keep_first.
TargetGridV1 encode_v1(const ImageAnnotation& annotation, int s, int b, int c,
                       CollisionPolicy policy = CollisionPolicy::strict,
                       std::vector<std::size_t>* dropped = nullptr);

// Reads detections out of a prediction tensor: every slot with
// confidence >= conf_threshold yields a box with class = argmax of the cell
// class vector and score = confidence * max class probability.
std::vector<DetectionRecord> decode_v1(std::span<const double> values, int s,
                                       int b, int c, double conf_threshold,
                                       std::string image_id = {});

// Anchor-offset parameterization: logistic for the center within its cell,
// exponential for the size relative to the anchor.
struct OffsetParams {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
};

BBoxCenter offset_decode(const OffsetParams& t, Cell cell, int s, WH anchor);

// Inverse of offset_decode for centers strictly inside the cell; boundary
// centers and zero sizes are clamped to keep the logit/log finite.
OffsetParams offset_encode(const BBoxCenter& box, Cell cell, int s, WH anchor);

inline constexpr std::int8_t kObjNegative = 0;
inline constexpr std::int8_t kObjPositive = 1;
inline constexpr std::int8_t kObjIgnore = -1;  // excluded from the no-object loss

// One scale of the three-scale target. Slot layout per (cell, anchor):
// (tx, ty, tw, th, objectness) followed by C multi-hot class targets.
struct ScaleGrid {
  int S = 0;
  int C = 0;
  std::vector<double> values;            // S*S*3*(5+C)
  std::vector<std::int8_t> objectness;   // S*S*3, one of kObj*

  std::size_t slot_stride() const { return static_cast<std::size_t>(5) + C; }
  std::size_t slot_offset(int row, int col, int anchor) const {
    return ((static_cast<std::size_t>(row) * S + col) * 3 + anchor) *
           slot_stride();
  }
  std::size_t mask_index(int row, int col, int anchor) const {
    return (static_cast<std::size_t>(row) * S + col) * 3 + anchor;
  }
};

struct TargetGridV3 {
  int C = 0;
  std::array<int, 3> scales{};
  std::array<ScaleGrid, 3> grids;

  std::size_t total_values() const;
};

// Three-scale target encoding. Anchors are sorted by area and split into
// three tertiles; tertile i predicts at scales[i] (pass scales largest-first
// to give the finest grid the smallest anchors). Each ground-truth box turns
// exactly one slot positive: the globally best wh_iou anchor, falling back
// to the next-best free slot when another object already claimed it. Every
// other anchor slot whose wh_iou with the box exceeds ignore_iou is marked
// ignore.
TargetGridV3 encode_v3_targets(const ImageAnnotation& annotation,
                               std::span<const WH> anchors,
                               const std::array<int, 3>& scales, int c,
                               double ignore_iou);

// Grid tensors serialize as a one-line JSON header followed by the values as
// little-endian float32:
//   {"version":1,"S":...,"B":...,"C":...}\n<payload>
//   {"version":3,"scales":[s1,s2,s3],"C":...}\n<payload, scales concatenated>
std::string serialize_grid(const TargetGridV1& grid);
std::string serialize_grid(const TargetGridV3& grid);

struct DeserializedGrid {
  int version = 0;
  int S = 0;
  int B = 0;
  int C = 0;
  std::array<int, 3> scales{};
  std::vector<double> values;  // flat; v3 scales concatenated in order
};

DeserializedGrid deserialize_grid(std::string_view bytes);

}  // namespace yolokit
