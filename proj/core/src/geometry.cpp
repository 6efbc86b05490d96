#include "cq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cq/error.hpp"

namespace cq {
namespace {

constexpr double kRayStep = 0.1;  // px
constexpr int kRayCount = 60;

struct Centroid {
  double y = 0.0;
  double x = 0.0;
};

Centroid label_centroid(const Grid2D& labels, std::uint8_t label) {
  double sy = 0.0, sx = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < labels.height; ++y) {
    for (std::size_t x = 0; x < labels.width; ++x) {
      if (labels.at(y, x) == label) {
        sy += static_cast<double>(y);
        sx += static_cast<double>(x);
        ++count;
      }
    }
  }
  if (count == 0) {
    fail(ErrorCode::kDegenerate,
         std::string("empty region for label ") + std::to_string(int(label)));
  }
  return {sy / static_cast<double>(count), sx / static_cast<double>(count)};
}

// Angles are measured counterclockwise from the image x-axis with y pointing
// up, so the row direction carries a sign flip.
struct Ray {
  double dy;
  double dx;
};

Ray ray_from_degrees(double degrees) {
  const double rad = degrees * std::numbers::pi / 180.0;
  return {-std::sin(rad), std::cos(rad)};
}

std::uint8_t sample_label(const Grid2D& labels, double y, double x) {
  const auto yi = static_cast<std::ptrdiff_t>(std::lround(y));
  const auto xi = static_cast<std::ptrdiff_t>(std::lround(x));
  if (yi < 0 || xi < 0 || yi >= static_cast<std::ptrdiff_t>(labels.height) ||
      xi >= static_cast<std::ptrdiff_t>(labels.width)) {
    return kBackground;
  }
  return labels.at(static_cast<std::size_t>(yi), static_cast<std::size_t>(xi));
}

}  // namespace

Grid2D MaskSequence::frame(std::size_t t) const {
  if (t >= frames) fail(ErrorCode::kValue, "frame index out of range");
  Grid2D g(height, width);
  std::copy_n(labels.begin() + static_cast<std::ptrdiff_t>(t * height * width), height * width,
              g.data.begin());
  return g;
}

void MaskSequence::validate() const {
  if (frames == 0 || height == 0 || width == 0) {
    fail(ErrorCode::kShape, "mask sequence must have positive extents");
  }
  if (labels.size() != frames * height * width) {
    fail(ErrorCode::kShape, "mask sequence label buffer does not match its extents");
  }
  if (!(pixel_spacing > 0.0)) {
    fail(ErrorCode::kValue, "pixel spacing must be positive");
  }
  for (std::uint8_t v : labels) {
    if (v > kMyocardium) {
      fail(ErrorCode::kValue, "mask labels must be 0 (background), 1 (cavity) or 2 (myocardium)");
    }
  }
}

std::array<double, IndexVector::kCount> IndexVector::values() const {
  return {cavity_area,   myo_area, dimensions[0], dimensions[1], dimensions[2], rwt[0],
          rwt[1],        rwt[2],   rwt[3],        rwt[4],        rwt[5]};
}

void IndexVector::set_values(const std::array<double, kCount>& v) {
  cavity_area = v[0];
  myo_area = v[1];
  for (std::size_t i = 0; i < 3; ++i) dimensions[i] = v[2 + i];
  for (std::size_t i = 0; i < 6; ++i) rwt[i] = v[5 + i];
}

const char* IndexVector::value_name(std::size_t i) {
  static constexpr const char* kNames[kCount] = {"A1",   "A2",   "D1",   "D2",   "D3",  "RWT1",
                                                 "RWT2", "RWT3", "RWT4", "RWT5", "RWT6"};
  if (i >= kCount) fail(ErrorCode::kValue, "index name out of range");
  return kNames[i];
}

Grid2D keep_largest_component(const Grid2D& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) {
    fail(ErrorCode::kValue, "connectivity must be 4 or 8");
  }
  const std::size_t h = mask.height, w = mask.width;
  Grid2D out(h, w);
  std::vector<std::int32_t> component(h * w, -1);
  std::vector<std::size_t> stack;
  std::int32_t best_component = -1;
  std::size_t best_size = 0;
  std::int32_t next_id = 0;

  const std::ptrdiff_t dy4[] = {-1, 1, 0, 0};
  const std::ptrdiff_t dx4[] = {0, 0, -1, 1};
  const std::ptrdiff_t dy8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
  const std::ptrdiff_t dx8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
  const std::ptrdiff_t* dy = connectivity == 4 ? dy4 : dy8;
  const std::ptrdiff_t* dx = connectivity == 4 ? dx4 : dx8;
  const int neighbors = connectivity;

  for (std::size_t seed = 0; seed < h * w; ++seed) {
    if (mask.data[seed] == 0 || component[seed] >= 0) continue;
    const std::int32_t id = next_id++;
    std::size_t size = 0;
    stack.assign(1, seed);
    component[seed] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const auto y = static_cast<std::ptrdiff_t>(p / w);
      const auto x = static_cast<std::ptrdiff_t>(p % w);
      for (int k = 0; k < neighbors; ++k) {
        const std::ptrdiff_t ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(h) ||
            nx >= static_cast<std::ptrdiff_t>(w)) {
          continue;
        }
        const std::size_t q = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
        if (mask.data[q] != 0 && component[q] < 0) {
          component[q] = id;
          stack.push_back(q);
        }
      }
    }
    // Strict > keeps the earliest (smallest top-left index) component on ties.
    if (size > best_size) {
      best_size = size;
      best_component = id;
    }
  }
  if (best_component >= 0) {
    for (std::size_t p = 0; p < h * w; ++p) {
      out.data[p] = component[p] == best_component ? 1 : 0;
    }
  }
  return out;
}

double region_area(const Grid2D& labels, std::uint8_t label, double pixel_spacing) {
  std::size_t count = 0;
  for (std::uint8_t v : labels.data) count += v == label ? 1 : 0;
  return static_cast<double>(count) * pixel_spacing * pixel_spacing;
}

std::array<double, 3> cavity_dimensions(const Grid2D& labels, double pixel_spacing) {
  const Centroid c = label_centroid(labels, kCavity);  // kDegenerate when empty
  const double reach =
      std::hypot(static_cast<double>(labels.height), static_cast<double>(labels.width));
  std::array<double, 3> dims{};
  for (int d = 0; d < 3; ++d) {
    const Ray ray = ray_from_degrees(60.0 * d);
    double s_min = 0.0, s_max = 0.0;
    bool found = false;
    for (double s = -reach; s <= reach; s += kRayStep) {
      if (sample_label(labels, c.y + s * ray.dy, c.x + s * ray.dx) == kCavity) {
        if (!found) {
          s_min = s;
          found = true;
        }
        s_max = s;
      }
    }
    dims[d] = found ? (s_max - s_min) * pixel_spacing : 0.0;
  }
  return dims;
}

std::array<double, 6> regional_wall_thickness(const Grid2D& labels, double pixel_spacing) {
  const Centroid c = label_centroid(labels, kCavity);
  const double reach =
      std::hypot(static_cast<double>(labels.height), static_cast<double>(labels.width));
  std::array<double, 6> sums{};
  std::array<int, 6> counts{};
  for (int j = 0; j < kRayCount; ++j) {
    const double degrees = 360.0 * j / kRayCount;
    const Ray ray = ray_from_degrees(degrees);
    double last_cavity = 0.0;
    double last_myo = -1.0;
    for (double s = 0.0; s <= reach; s += kRayStep) {
      const std::uint8_t label = sample_label(labels, c.y + s * ray.dy, c.x + s * ray.dx);
      if (label == kCavity) last_cavity = s;
      if (label == kMyocardium) last_myo = s;
    }
    if (last_myo < 0.0) {
      fail(ErrorCode::kDegenerate, "myocardium ring broken at " +
                                       std::to_string(static_cast<int>(degrees)) + " degrees");
    }
    // Sector 1 (IS) is anchored at 90 degrees; the rest follow counterclockwise.
    const int sector = static_cast<int>(std::fmod(degrees - 90.0 + 360.0, 360.0) / 60.0);
    sums[sector] += std::max(0.0, last_myo - last_cavity) * pixel_spacing;
    counts[sector] += 1;
  }
  std::array<double, 6> rwt{};
  for (int k = 0; k < 6; ++k) rwt[k] = sums[k] / counts[k];
  return rwt;
}

std::vector<int> derive_phase_labels(const std::vector<double>& cavity_areas) {
  const std::size_t t = cavity_areas.size();
  if (t < 2) fail(ErrorCode::kValue, "phase derivation needs at least two frames");
  for (double a : cavity_areas) {
    if (!(a >= 0.0)) fail(ErrorCode::kValue, "cavity areas must be nonnegative");
  }
  std::size_t ed = 0, es = 0;
  for (std::size_t i = 1; i < t; ++i) {
    if (cavity_areas[i] > cavity_areas[ed]) ed = i;
    if (cavity_areas[i] < cavity_areas[es]) es = i;
  }
  if (cavity_areas[ed] == cavity_areas[es]) {
    fail(ErrorCode::kDegenerate, "constant cavity-area series has no cardiac phase");
  }
  // ED -> ES cyclic path (ES inclusive) is systole (0); the rest diastole (1).
  std::vector<int> labels(t, 1);
  for (std::size_t k = (ed + 1) % t;; k = (k + 1) % t) {
    labels[k] = 0;
    if (k == es) break;
  }
  labels[ed] = 1;
  return labels;
}

std::vector<IndexVector> quantify_sequence(const MaskSequence& masks) {
  masks.validate();
  std::vector<IndexVector> result(masks.frames);
  std::vector<double> areas(masks.frames);
  for (std::size_t t = 0; t < masks.frames; ++t) {
    try {
      const Grid2D raw = masks.frame(t);
      Grid2D cavity_bin(masks.height, masks.width);
      Grid2D myo_bin(masks.height, masks.width);
      for (std::size_t p = 0; p < raw.data.size(); ++p) {
        cavity_bin.data[p] = raw.data[p] == kCavity ? 1 : 0;
        myo_bin.data[p] = raw.data[p] == kMyocardium ? 1 : 0;
      }
      const Grid2D cavity_cc = keep_largest_component(cavity_bin, 8);
      const Grid2D myo_cc = keep_largest_component(myo_bin, 8);
      Grid2D clean(masks.height, masks.width);
      for (std::size_t p = 0; p < clean.data.size(); ++p) {
        clean.data[p] = cavity_cc.data[p] != 0 ? kCavity
                        : myo_cc.data[p] != 0  ? kMyocardium
                                               : kBackground;
      }
      IndexVector& iv = result[t];
      iv.cavity_area = region_area(clean, kCavity, masks.pixel_spacing);
      iv.myo_area = region_area(clean, kMyocardium, masks.pixel_spacing);
      iv.dimensions = cavity_dimensions(clean, masks.pixel_spacing);
      iv.rwt = regional_wall_thickness(clean, masks.pixel_spacing);
      areas[t] = iv.cavity_area;
    } catch (const Error& e) {
      fail(e.code(), "frame " + std::to_string(t) + ": " + e.what());
    }
  }
  const std::vector<int> phases = derive_phase_labels(areas);
  for (std::size_t t = 0; t < masks.frames; ++t) result[t].phase = phases[t];
  return result;
}

NormalizationStats compute_normalization_stats(const std::vector<IndexVector>& train) {
  if (train.empty()) fail(ErrorCode::kValue, "normalization needs at least one sample");
  NormalizationStats stats;
  const double n = static_cast<double>(train.size());
  for (const IndexVector& iv : train) {
    const auto v = iv.values();
    for (std::size_t i = 0; i < IndexVector::kCount; ++i) stats.mean[i] += v[i];
  }
  for (std::size_t i = 0; i < IndexVector::kCount; ++i) stats.mean[i] /= n;
  for (const IndexVector& iv : train) {
    const auto v = iv.values();
    for (std::size_t i = 0; i < IndexVector::kCount; ++i) {
      const double d = v[i] - stats.mean[i];
      stats.stddev[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < IndexVector::kCount; ++i) {
    stats.stddev[i] = std::sqrt(stats.stddev[i] / n);
  }
  return stats;
}

std::array<double, IndexVector::kCount> normalize_targets(
    const std::array<double, IndexVector::kCount>& values, const NormalizationStats& stats) {
  std::array<double, IndexVector::kCount> out{};
  for (std::size_t i = 0; i < IndexVector::kCount; ++i) {
    if (!(stats.stddev[i] > 0.0)) {
      fail(ErrorCode::kDegenerate, std::string("constant index column ") +
                                       IndexVector::value_name(i) + " cannot be z-scored");
    }
    out[i] = (values[i] - stats.mean[i]) / stats.stddev[i];
  }
  return out;
}

std::array<double, IndexVector::kCount> denormalize_targets(
    const std::array<double, IndexVector::kCount>& normalized, const NormalizationStats& stats) {
  std::array<double, IndexVector::kCount> out{};
  for (std::size_t i = 0; i < IndexVector::kCount; ++i) {
    if (!(stats.stddev[i] > 0.0)) {
      fail(ErrorCode::kDegenerate, std::string("constant index column ") +
                                       IndexVector::value_name(i) + " cannot be z-scored");
    }
    out[i] = normalized[i] * stats.stddev[i] + stats.mean[i];
  }
  return out;
}

}  // namespace cq
