#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cq {

// Label conventions shared by the whole pipeline.
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kCavity = 1;
inline constexpr std::uint8_t kMyocardium = 2;

// Row-major h×w byte grid; used both for binary masks (values {0,1}) and
// label maps (values {0,1,2}).
struct Grid2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  Grid2D() = default;
  Grid2D(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), data(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

// One cardiac cycle of label maps over {background, cavity, myocardium}.
struct MaskSequence {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;  // frames * height * width, row-major
  double pixel_spacing = 1.0;        // mm per pixel, isotropic

  Grid2D frame(std::size_t t) const;
  // Enforces label values in {0,1,2} and positive spacing.
  void validate() const;
};

// The 11 morphological indices of one frame plus its cardiac phase.
struct IndexVector {
  double cavity_area = 0.0;             // A1, mm^2
  double myo_area = 0.0;                // A2, mm^2
  std::array<double, 3> dimensions{};   // D1..D3, mm
  std::array<double, 6> rwt{};          // RWT1..RWT6 (IS, I, IL, AL, A, AS), mm
  int phase = 0;                        // 1 = ED, 0 = ES

  static constexpr std::size_t kCount = 11;
  std::array<double, kCount> values() const;
  void set_values(const std::array<double, kCount>& v);
  static const char* value_name(std::size_t i);  // "A1", "A2", "D1", ..., "RWT6"
};

// Retains only the largest connected component of a binary mask;
// ties break toward the component containing the smallest row-major index.
Grid2D keep_largest_component(const Grid2D& mask, int connectivity = 8);

// Pixel count of `label` times spacing squared.
double region_area(const Grid2D& labels, std::uint8_t label, double pixel_spacing);

// Chord lengths of the cavity through its centroid along 0/60/120 degrees
// from the image x-axis (counterclockwise, y pointing up), sampled at 0.1 px.
std::array<double, 3> cavity_dimensions(const Grid2D& labels, double pixel_spacing);

// Mean wall thickness over six 60-degree sectors from 60 centroid rays;
// sector 1 (inferoseptal) spans [90, 150) degrees, the rest follow
// counterclockwise as I, IL, AL, A, AS.
std::array<double, 6> regional_wall_thickness(const Grid2D& labels, double pixel_spacing);

// 1 = diastole (ES->ED cyclic path, ED frame included),
// 0 = systole (ED->ES cyclic path, ES frame included).
std::vector<int> derive_phase_labels(const std::vector<double>& cavity_areas);

// Per-frame connected-component cleanup followed by all 11 indices and the
// phase labels derived from the cavity-area series.
std::vector<IndexVector> quantify_sequence(const MaskSequence& masks);

// Per-index z-score statistics over a training split (population std).
struct NormalizationStats {
  std::array<double, IndexVector::kCount> mean{};
  std::array<double, IndexVector::kCount> stddev{};
};

NormalizationStats compute_normalization_stats(const std::vector<IndexVector>& train);
std::array<double, IndexVector::kCount> normalize_targets(
    const std::array<double, IndexVector::kCount>& values, const NormalizationStats& stats);
std::array<double, IndexVector::kCount> denormalize_targets(
    const std::array<double, IndexVector::kCount>& normalized, const NormalizationStats& stats);

}  // namespace cq
