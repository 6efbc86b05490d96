#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cq/geometry.hpp"
#include "cq/rng.hpp"
#include "cq/tensor.hpp"

namespace cq {

// One cine acquisition: a stack of real-valued frames [t, h, w].
struct CineSequence {
  Tensor frames;
  double pixel_spacing = 1.0;
  std::string subject_id;

  std::size_t frame_count() const { return frames.rank() == 3 ? frames.extent(0) : 0; }
  std::size_t height() const { return frames.rank() == 3 ? frames.extent(1) : 0; }
  std::size_t width() const { return frames.rank() == 3 ? frames.extent(2) : 0; }
};

// Contrast-limited adaptive histogram equalization over a rank-2 image.
// The image is quantized to 256 bins over its own range; per-tile histograms
// are clipped at clip_limit x the mean bin height with the excess spread
// uniformly, and the per-tile equalization maps are blended bilinearly.
// Output values lie in [0, 1]; a constant image maps to a constant 0.5.
Tensor clahe(const Tensor& image, std::size_t tile_rows = 8, std::size_t tile_cols = 8,
             double clip_limit = 2.0);

// Whole-sequence z-score: subtract the sequence mean, divide by the
// population standard deviation. A constant sequence is an error.
CineSequence zscore_image(const CineSequence& seq);

struct AugmentOps {
  bool rotate = true;
  bool flip_h = true;
  bool flip_v = true;
  bool elastic = true;
};

struct AugmentedSample {
  CineSequence images;
  MaskSequence masks;
};

// Deterministic geometric transforms applied identically to every frame:
// images are resampled bilinearly, masks with nearest neighbour.
AugmentedSample rotate_sample(const CineSequence& seq, const MaskSequence& masks,
                              double angle_degrees);
AugmentedSample flip_sample(const CineSequence& seq, const MaskSequence& masks, bool horizontal);
AugmentedSample elastic_sample(const CineSequence& seq, const MaskSequence& masks, Rng& rng,
                               double alpha = 8.0, double sigma = 4.0);

// One random augmentation: rotation uniform in +-30 degrees, coin-flip
// mirror along each enabled axis, then elastic deformation.
AugmentedSample augment(const CineSequence& seq, const MaskSequence& masks, Rng& rng,
                        const AugmentOps& ops = {});

// Expands one sample into `factor` samples: the original followed by
// factor - 1 random augmentations.
std::vector<AugmentedSample> augment_many(const CineSequence& seq, const MaskSequence& masks,
                                          Rng& rng, std::size_t factor = 8,
                                          const AugmentOps& ops = {});

// Synthetic cine phantom: a breathing annulus whose endocardial radius
// follows a cosine cycle between end-diastole and end-systole.
struct PhantomParams {
  std::size_t frames = 20;
  std::size_t height = 80;
  std::size_t width = 80;
  double center_y = 40.0;
  double center_x = 40.0;
  double endo_radius_ed = 14.0;  // pixels, end-diastole
  double endo_radius_es = 8.0;   // pixels, end-systole
  double wall_base = 5.0;        // pixels
  std::array<double, 6> wall_sector_offset{};
  std::size_t ed_frame = 0;  // frame at which the cosine peaks
  double noise_std = 0.05;
  double intensity_background = 0.2;
  double intensity_cavity = 0.9;
  double intensity_myocardium = 0.55;
  double pixel_spacing = 1.0;  // mm per pixel
  std::uint64_t seed = 0;
  std::string subject_id = "phantom";
};

struct PhantomResult {
  CineSequence images;
  MaskSequence masks;
  std::vector<IndexVector> indices;           // measured on the noiseless masks
  std::vector<IndexVector> analytic_indices;  // closed-form values for audits
};

// Endocardial radius at frame t for the given cycle parameters.
double phantom_radius(const PhantomParams& params, std::size_t t);

PhantomResult generate_phantom(const PhantomParams& params);

}  // namespace cq
