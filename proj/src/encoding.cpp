#include "yolokit/encoding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace yolokit {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "grid serialization assumes a little-endian host");

std::array<int, 3> output_shape_v1(int s, int b, int c) {
  if (s < 1 || b < 1 || c < 1) {
    throw std::invalid_argument("output_shape_v1: dimensions must be >= 1");
  }
  return {s, s, b * 5 + c};
}

std::array<int, 3> output_shape_v3(int s, int c) {
  if (s < 1 || c < 1) {
    throw std::invalid_argument("output_shape_v3: dimensions must be >= 1");
  }
  return {s, s, 3 * (5 + c)};
}

Cell cell_of(double cx, double cy, int s) {
  const int col = std::min(static_cast<int>(std::floor(cx * s)), s - 1);
  const int row = std::min(static_cast<int>(std::floor(cy * s)), s - 1);
  return {std::max(row, 0), std::max(col, 0)};
}

bool TargetGridV1::cell_has_object(int row, int col) const {
  for (int slot = 0; slot < B; ++slot) {
    if (responsible[mask_index(row, col, slot)]) return true;
  }
  return false;
}

TargetGridV1 encode_v1(const ImageAnnotation& annotation, int s, int b, int c,
                       CollisionPolicy policy,
                       std::vector<std::size_t>* dropped) {
  const auto shape = output_shape_v1(s, b, c);
  TargetGridV1 grid;
  grid.S = s;
  grid.B = b;
  grid.C = c;
  grid.values.assign(static_cast<std::size_t>(s) * s * shape[2], 0.0);
  grid.responsible.assign(static_cast<std::size_t>(s) * s * b, 0);
  if (dropped) dropped->clear();

  for (std::size_t i = 0; i < annotation.boxes.size(); ++i) {
    const auto& lb = annotation.boxes[i];
    if (lb.class_id < 0 || lb.class_id >= c) {
      throw std::invalid_argument("encode_v1: class id " +
                                  std::to_string(lb.class_id) +
                                  " out of range (C=" + std::to_string(c) + ")");
    }
    const Cell cell = cell_of(lb.box.cx, lb.box.cy, s);
    if (grid.cell_has_object(cell.row, cell.col)) {
      if (policy == CollisionPolicy::strict) {
        throw std::runtime_error(
            "encode_v1: cell (" + std::to_string(cell.row) + ", " +
            std::to_string(cell.col) + ") already holds an object");
      }
      if (dropped) dropped->push_back(i);
      continue;
    }
    const std::size_t slot = grid.slot_offset(cell.row, cell.col, 0);
    grid.values[slot + 0] = lb.box.cx;
    grid.values[slot + 1] = lb.box.cy;
    grid.values[slot + 2] = lb.box.w;
    grid.values[slot + 3] = lb.box.h;
    grid.values[slot + 4] = 1.0;
    grid.values[grid.class_offset(cell.row, cell.col) + lb.class_id] = 1.0;
    grid.responsible[grid.mask_index(cell.row, cell.col, 0)] = 1;
  }
  return grid;
}

std::vector<DetectionRecord> decode_v1(std::span<const double> values, int s,
                                       int b, int c, double conf_threshold,
                                       std::string image_id) {
  const auto shape = output_shape_v1(s, b, c);
  const std::size_t expected =
      static_cast<std::size_t>(s) * s * static_cast<std::size_t>(shape[2]);
  if (values.size() != expected) {
    throw std::invalid_argument("decode_v1: expected " +
                                std::to_string(expected) + " values, got " +
                                std::to_string(values.size()));
  }
  const std::size_t cell_stride = static_cast<std::size_t>(b) * 5 + c;
  std::vector<DetectionRecord> detections;
  for (int row = 0; row < s; ++row) {
    for (int col = 0; col < s; ++col) {
      const std::size_t base =
          (static_cast<std::size_t>(row) * s + col) * cell_stride;
      const std::size_t class_base = base + static_cast<std::size_t>(b) * 5;
      int best_class = 0;
      for (int k = 1; k < c; ++k) {
        if (values[class_base + k] > values[class_base + best_class]) {
          best_class = k;
        }
      }
      const double best_prob = values[class_base + best_class];
      for (int slot = 0; slot < b; ++slot) {
        const std::size_t off = base + static_cast<std::size_t>(slot) * 5;
        const double confidence = values[off + 4];
        if (confidence < conf_threshold) continue;
        DetectionRecord d;
        d.image_id = image_id;
        d.class_id = best_class;
        d.score = confidence * best_prob;
        d.box = {values[off + 0], values[off + 1], values[off + 2],
                 values[off + 3]};
        detections.push_back(std::move(d));
      }
    }
  }
  return detections;
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr double kFracClamp = 1e-12;  // keeps boundary centers finite

}  // namespace

BBoxCenter offset_decode(const OffsetParams& t, Cell cell, int s, WH anchor) {
  BBoxCenter box;
  box.cx = (cell.col + logistic(t.tx)) / s;
  box.cy = (cell.row + logistic(t.ty)) / s;
  box.w = anchor.w * std::exp(t.tw);
  box.h = anchor.h * std::exp(t.th);
  return box;
}

OffsetParams offset_encode(const BBoxCenter& box, Cell cell, int s, WH anchor) {
  if (!(anchor.w > 0.0) || !(anchor.h > 0.0)) {
    throw std::invalid_argument("offset_encode: anchor dimensions must be > 0");
  }
  const double fx =
      std::clamp(box.cx * s - cell.col, kFracClamp, 1.0 - kFracClamp);
  const double fy =
      std::clamp(box.cy * s - cell.row, kFracClamp, 1.0 - kFracClamp);
  OffsetParams t;
  t.tx = logit(fx);
  t.ty = logit(fy);
  t.tw = std::log(std::max(box.w, kFracClamp) / anchor.w);
  t.th = std::log(std::max(box.h, kFracClamp) / anchor.h);
  return t;
}

std::size_t TargetGridV3::total_values() const {
  std::size_t total = 0;
  for (const auto& g : grids) total += g.values.size();
  return total;
}

TargetGridV3 encode_v3_targets(const ImageAnnotation& annotation,
                               std::span<const WH> anchors,
                               const std::array<int, 3>& scales, int c,
                               double ignore_iou) {
  if (anchors.size() != 9) {
    throw std::invalid_argument(
        "encode_v3_targets: need 9 anchors (3 per scale), got " +
        std::to_string(anchors.size()));
  }
  if (!(ignore_iou > 0.0 && ignore_iou <= 1.0)) {
    throw std::invalid_argument("encode_v3_targets: ignore_iou must be in (0,1]");
  }
  for (int sk : scales) {
    if (sk < 1) {
      throw std::invalid_argument("encode_v3_targets: scales must be >= 1");
    }
  }
  if (c < 1) throw std::invalid_argument("encode_v3_targets: C must be >= 1");

  std::vector<WH> sorted(anchors.begin(), anchors.end());
  for (const auto& a : sorted) {
    if (!(a.w > 0.0) || !(a.h > 0.0)) {
      throw std::invalid_argument("encode_v3_targets: anchor dimension <= 0");
    }
  }
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const WH& a, const WH& b) { return a.area() < b.area(); });
  const int per_scale = static_cast<int>(sorted.size()) / 3;

  TargetGridV3 target;
  target.C = c;
  target.scales = scales;
  for (int k = 0; k < 3; ++k) {
    auto& g = target.grids[static_cast<std::size_t>(k)];
    g.S = scales[static_cast<std::size_t>(k)];
    g.C = c;
    g.values.assign(static_cast<std::size_t>(g.S) * g.S * 3 * (5 + c), 0.0);
    g.objectness.assign(static_cast<std::size_t>(g.S) * g.S * 3, kObjNegative);
  }

  // Anchor slots live in tertile-local indices 0..2; candidate lists span
  // all 9 global anchors ordered by overlap.
  struct Candidate {
    double overlap;
    int scale;
    int anchor;  // index within the scale's tertile
  };

  // Positives first so a later object's ignore mark can never displace one.
  for (const auto& lb : annotation.boxes) {
    if (lb.class_id < 0 || lb.class_id >= c) {
      throw std::invalid_argument("encode_v3_targets: class id out of range");
    }
    const WH box_wh{lb.box.w, lb.box.h};
    std::vector<Candidate> candidates;
    candidates.reserve(sorted.size());
    for (int k = 0; k < 3; ++k) {
      for (int a = 0; a < 3; ++a) {
        const WH& anchor = sorted[static_cast<std::size_t>(k * per_scale + a)];
        candidates.push_back({wh_iou(box_wh, anchor), k, a});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) {
                       return a.overlap > b.overlap;
                     });

    bool placed = false;
    for (const auto& cand : candidates) {
      auto& g = target.grids[static_cast<std::size_t>(cand.scale)];
      const Cell cell = cell_of(lb.box.cx, lb.box.cy, g.S);
      const std::size_t mask = g.mask_index(cell.row, cell.col, cand.anchor);
      if (g.objectness[mask] == kObjPositive) continue;  // taken, fall back
      const WH& anchor =
          sorted[static_cast<std::size_t>(cand.scale * per_scale + cand.anchor)];
      const OffsetParams t = offset_encode(lb.box, cell, g.S, anchor);
      const std::size_t off = g.slot_offset(cell.row, cell.col, cand.anchor);
      g.values[off + 0] = t.tx;
      g.values[off + 1] = t.ty;
      g.values[off + 2] = t.tw;
      g.values[off + 3] = t.th;
      g.values[off + 4] = 1.0;
      g.values[off + 5 + lb.class_id] = 1.0;
      g.objectness[mask] = kObjPositive;
      placed = true;
      break;
    }
    if (!placed) {
      throw std::runtime_error(
          "encode_v3_targets: no free anchor slot left for an object at (" +
          std::to_string(lb.box.cx) + ", " + std::to_string(lb.box.cy) + ")");
    }
  }

  for (const auto& lb : annotation.boxes) {
    const WH box_wh{lb.box.w, lb.box.h};
    for (int k = 0; k < 3; ++k) {
      auto& g = target.grids[static_cast<std::size_t>(k)];
      const Cell cell = cell_of(lb.box.cx, lb.box.cy, g.S);
      for (int a = 0; a < 3; ++a) {
        const WH& anchor = sorted[static_cast<std::size_t>(k * per_scale + a)];
        if (wh_iou(box_wh, anchor) <= ignore_iou) continue;
        auto& flag = g.objectness[g.mask_index(cell.row, cell.col, a)];
        if (flag == kObjNegative) flag = kObjIgnore;
      }
    }
  }
  return target;
}

namespace {

void append_f32(std::string& out, std::span<const double> values) {
  for (double v : values) {
    const float f = static_cast<float>(v);
    char raw[sizeof(float)];
    std::memcpy(raw, &f, sizeof(float));
    out.append(raw, sizeof(float));
  }
}

std::vector<double> read_f32(std::string_view payload, std::size_t count) {
  if (payload.size() != count * sizeof(float)) {
    throw std::runtime_error("grid payload: expected " +
                             std::to_string(count * sizeof(float)) +
                             " bytes, got " + std::to_string(payload.size()));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f = 0;
    std::memcpy(&f, payload.data() + i * sizeof(float), sizeof(float));
    values[i] = static_cast<double>(f);
  }
  return values;
}

}  // namespace

std::string serialize_grid(const TargetGridV1& grid) {
  json header = {{"version", 1}, {"S", grid.S}, {"B", grid.B}, {"C", grid.C}};
  std::string out = header.dump();
  out += '\n';
  append_f32(out, grid.values);
  return out;
}

std::string serialize_grid(const TargetGridV3& grid) {
  json header = {{"version", 3},
                 {"scales", {grid.scales[0], grid.scales[1], grid.scales[2]}},
                 {"C", grid.C}};
  std::string out = header.dump();
  out += '\n';
  for (const auto& g : grid.grids) append_f32(out, g.values);
  return out;
}

DeserializedGrid deserialize_grid(std::string_view bytes) {
  const std::size_t eol = bytes.find('\n');
  if (eol == std::string_view::npos) {
    throw std::runtime_error("grid blob: missing header line");
  }
  json header;
  try {
    header = json::parse(bytes.substr(0, eol));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("grid blob: bad header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(eol + 1);

  DeserializedGrid grid;
  grid.version = header.at("version").get<int>();
  if (grid.version == 1) {
    grid.S = header.at("S").get<int>();
    grid.B = header.at("B").get<int>();
    grid.C = header.at("C").get<int>();
    const auto shape = output_shape_v1(grid.S, grid.B, grid.C);
    grid.values = read_f32(
        payload, static_cast<std::size_t>(grid.S) * grid.S *
                     static_cast<std::size_t>(shape[2]));
  } else if (grid.version == 3) {
    const auto scales = header.at("scales").get<std::vector<int>>();
    if (scales.size() != 3) {
      throw std::runtime_error("grid blob: expected 3 scales");
    }
    std::copy(scales.begin(), scales.end(), grid.scales.begin());
    grid.C = header.at("C").get<int>();
    std::size_t total = 0;
    for (int sk : grid.scales) {
      output_shape_v3(sk, grid.C);
      total += static_cast<std::size_t>(sk) * sk * 3 *
               (5 + static_cast<std::size_t>(grid.C));
    }
    grid.values = read_f32(payload, total);
  } else {
    throw std::runtime_error("grid blob: unsupported version " +
                             std::to_string(grid.version));
  }
  return grid;
}

}  // namespace yolokit
