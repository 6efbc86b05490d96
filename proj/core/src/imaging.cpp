#include "cq/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "cq/error.hpp"

namespace cq {
namespace {

constexpr std::size_t kClaheBins = 256;

double degrees_to_radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

// Balanced 1-D tile partition: tile t covers [t*n/tiles, (t+1)*n/tiles).
std::size_t tile_of(std::size_t index, std::size_t n, std::size_t tiles) {
  return std::min(tiles - 1, index * tiles / n);
}

double tile_center(std::size_t tile, std::size_t n, std::size_t tiles) {
  const std::size_t first = (tile * n + tiles - 1) / tiles;
  const std::size_t last = ((tile + 1) * n + tiles - 1) / tiles - 1;
  return (static_cast<double>(first) + static_cast<double>(last)) / 2.0;
}

// Interpolation bracket along one axis: tiles t0 <= t1 and the blend weight
// toward t1, clamped outside the span of tile centers.
struct Bracket {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double weight = 0.0;
};

Bracket bracket_for(double coord, std::size_t n, std::size_t tiles) {
  Bracket b;
  if (coord <= tile_center(0, n, tiles)) {
    return b;
  }
  if (coord >= tile_center(tiles - 1, n, tiles)) {
    b.lo = b.hi = tiles - 1;
    return b;
  }
  std::size_t t = 0;
  while (t + 1 < tiles && tile_center(t + 1, n, tiles) < coord) ++t;
  const double c0 = tile_center(t, n, tiles);
  const double c1 = tile_center(t + 1, n, tiles);
  b.lo = t;
  b.hi = t + 1;
  b.weight = (coord - c0) / (c1 - c0);
  return b;
}

// Target -> source coordinate map shared by rotation and elastic warps.
using SourceMap = std::function<void(std::size_t y, std::size_t x, double& sy, double& sx)>;

float bilinear_at(const Tensor& frames, std::size_t t, double sy, double sx) {
  const std::size_t h = frames.extent(1), w = frames.extent(2);
  const auto y0 = static_cast<std::ptrdiff_t>(std::floor(sy));
  const auto x0 = static_cast<std::ptrdiff_t>(std::floor(sx));
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const std::ptrdiff_t y = y0 + dy, x = x0 + dx;
      if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) ||
          x >= static_cast<std::ptrdiff_t>(w)) {
        continue;  // outside pixels contribute zero
      }
      const double wgt = (dy == 0 ? 1.0 - fy : fy) * (dx == 0 ? 1.0 - fx : fx);
      acc += wgt * frames.data[(t * h + y) * w + static_cast<std::size_t>(x)];
    }
  }
  return static_cast<float>(acc);
}

AugmentedSample resample(const CineSequence& seq, const MaskSequence& masks,
                         const SourceMap& map) {
  const std::size_t t_count = seq.frame_count(), h = seq.height(), w = seq.width();
  AugmentedSample out;
  out.images.frames = Tensor({t_count, h, w});
  out.images.pixel_spacing = seq.pixel_spacing;
  out.images.subject_id = seq.subject_id;
  out.masks = masks;
  std::fill(out.masks.labels.begin(), out.masks.labels.end(), std::uint8_t{0});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double sy = 0.0, sx = 0.0;
      map(y, x, sy, sx);
      for (std::size_t t = 0; t < t_count; ++t) {
        out.images.frames.data[(t * h + y) * w + x] = bilinear_at(seq.frames, t, sy, sx);
      }
      const auto ny = static_cast<std::ptrdiff_t>(std::lround(sy));
      const auto nx = static_cast<std::ptrdiff_t>(std::lround(sx));
      if (ny >= 0 && nx >= 0 && ny < static_cast<std::ptrdiff_t>(h) &&
          nx < static_cast<std::ptrdiff_t>(w)) {
        for (std::size_t t = 0; t < t_count; ++t) {
          out.masks.labels[(t * h + y) * w + x] =
              masks.labels[(t * h + static_cast<std::size_t>(ny)) * w +
                           static_cast<std::size_t>(nx)];
        }
      }
    }
  }
  return out;
}

void check_aligned(const CineSequence& seq, const MaskSequence& masks) {
  if (seq.frames.rank() != 3) {
    fail(ErrorCode::kShape, "cine sequence must be [frames, height, width], got " +
                                shape_to_string(seq.frames.shape));
  }
  masks.validate();
  if (seq.frame_count() != masks.frames || seq.height() != masks.height ||
      seq.width() != masks.width) {
    fail(ErrorCode::kShape, "cine sequence and mask sequence are not spatially aligned");
  }
}

// Separable Gaussian smoothing of a [h, w] field, with the kernel
// renormalized near borders so the field keeps its amplitude there.
void gaussian_smooth(std::vector<double>& field, std::size_t h, std::size_t w, double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * static_cast<std::size_t>(radius) + 1);
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] =
        std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  std::vector<double> tmp(field.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0, norm = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + k;
        if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
        const double wk = kernel[static_cast<std::size_t>(k + radius)];
        acc += wk * field[y * w + static_cast<std::size_t>(xx)];
        norm += wk;
      }
      tmp[y * w + x] = acc / norm;
    }
  }
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) {
      double acc = 0.0, norm = 0.0;
      for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + k;
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
        const double wk = kernel[static_cast<std::size_t>(k + radius)];
        acc += wk * tmp[static_cast<std::size_t>(yy) * w + x];
        norm += wk;
      }
      field[y * w + x] = acc / norm;
    }
  }
}

int phantom_sector(double cy, double cx, std::size_t y, std::size_t x) {
  const double u = static_cast<double>(x) - cx;
  const double v = cy - static_cast<double>(y);
  double deg = std::atan2(v, u) * 180.0 / std::numbers::pi;
  deg = std::fmod(deg - 90.0 + 360.0, 360.0);
  if (deg < 0) deg += 360.0;
  return std::min(5, static_cast<int>(deg / 60.0));
}

}  // namespace

Tensor clahe(const Tensor& image, std::size_t tile_rows, std::size_t tile_cols,
             double clip_limit) {
  if (image.rank() != 2) {
    fail(ErrorCode::kShape, "clahe expects a [height, width] image, got " +
                                shape_to_string(image.shape));
  }
  if (!image.all_finite()) {
    fail(ErrorCode::kValue, "clahe requires finite intensities");
  }
  if (tile_rows == 0 || tile_cols == 0 || clip_limit <= 0.0) {
    fail(ErrorCode::kValue, "clahe tile grid and clip limit must be positive");
  }
  const std::size_t h = image.extent(0), w = image.extent(1);
  if (h < tile_rows || w < tile_cols) {
    fail(ErrorCode::kValue, "image " + shape_to_string(image.shape) +
                                " is smaller than the tile grid " +
                                std::to_string(tile_rows) + "x" + std::to_string(tile_cols));
  }

  const auto [min_it, max_it] = std::minmax_element(image.data.begin(), image.data.end());
  const double lo = *min_it, hi = *max_it;
  Tensor out({h, w});
  if (hi <= lo) {
    std::fill(out.data.begin(), out.data.end(), 0.5f);
    return out;
  }

  std::vector<std::size_t> bin(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double norm = (image.data[i] - lo) / (hi - lo);
    bin[i] = std::min<std::size_t>(kClaheBins - 1,
                                   static_cast<std::size_t>(norm * kClaheBins));
  }

  // Per-tile clipped histograms, then cumulative maps into (0, 1].
  const std::size_t tiles = tile_rows * tile_cols;
  std::vector<double> hist(tiles * kClaheBins, 0.0);
  std::vector<double> tile_pixels(tiles, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t ty = tile_of(y, h, tile_rows);
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t tile = ty * tile_cols + tile_of(x, w, tile_cols);
      hist[tile * kClaheBins + bin[y * w + x]] += 1.0;
      tile_pixels[tile] += 1.0;
    }
  }
  std::vector<double> map(tiles * kClaheBins, 0.0);
  for (std::size_t tile = 0; tile < tiles; ++tile) {
    double* th = hist.data() + tile * kClaheBins;
    const double limit = clip_limit * tile_pixels[tile] / static_cast<double>(kClaheBins);
    double excess = 0.0;
    for (std::size_t b = 0; b < kClaheBins; ++b) {
      if (th[b] > limit) {
        excess += th[b] - limit;
        th[b] = limit;
      }
    }
    const double share = excess / static_cast<double>(kClaheBins);
    double cum = 0.0;
    for (std::size_t b = 0; b < kClaheBins; ++b) {
      cum += th[b] + share;
      map[tile * kClaheBins + b] = cum / tile_pixels[tile];
    }
  }

  for (std::size_t y = 0; y < h; ++y) {
    const Bracket by = bracket_for(static_cast<double>(y), h, tile_rows);
    for (std::size_t x = 0; x < w; ++x) {
      const Bracket bx = bracket_for(static_cast<double>(x), w, tile_cols);
      const std::size_t b = bin[y * w + x];
      auto lookup = [&](std::size_t ty, std::size_t tx) {
        return map[(ty * tile_cols + tx) * kClaheBins + b];
      };
      const double top = (1.0 - bx.weight) * lookup(by.lo, bx.lo) +
                         bx.weight * lookup(by.lo, bx.hi);
      const double bottom = (1.0 - bx.weight) * lookup(by.hi, bx.lo) +
                            bx.weight * lookup(by.hi, bx.hi);
      out.data[y * w + x] = static_cast<float>((1.0 - by.weight) * top + by.weight * bottom);
    }
  }
  return out;
}

CineSequence zscore_image(const CineSequence& seq) {
  if (seq.frames.rank() != 3) {
    fail(ErrorCode::kShape, "cine sequence must be [frames, height, width], got " +
                                shape_to_string(seq.frames.shape));
  }
  if (!seq.frames.all_finite()) {
    fail(ErrorCode::kValue, "z-score requires finite intensities");
  }
  const std::size_t n = seq.frames.numel();
  double mean = 0.0;
  for (float v : seq.frames.data) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : seq.frames.data) {
    const double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double std_dev = std::sqrt(var);
  if (std_dev <= 0.0) {
    fail(ErrorCode::kDegenerate, "cannot z-score a constant sequence");
  }
  CineSequence out = seq;
  for (float& v : out.frames.data) {
    v = static_cast<float>((v - mean) / std_dev);
  }
  return out;
}

AugmentedSample rotate_sample(const CineSequence& seq, const MaskSequence& masks,
                              double angle_degrees) {
  check_aligned(seq, masks);
  const double theta = degrees_to_radians(angle_degrees);
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (static_cast<double>(seq.height()) - 1.0) / 2.0;
  const double cx = (static_cast<double>(seq.width()) - 1.0) / 2.0;
  return resample(seq, masks, [=](std::size_t y, std::size_t x, double& sy, double& sx) {
    const double u = static_cast<double>(x) - cx;
    const double v = cy - static_cast<double>(y);
    sx = cx + (u * c + v * s);
    sy = cy - (-u * s + v * c);
  });
}

AugmentedSample flip_sample(const CineSequence& seq, const MaskSequence& masks, bool horizontal) {
  check_aligned(seq, masks);
  const std::size_t t_count = seq.frame_count(), h = seq.height(), w = seq.width();
  AugmentedSample out;
  out.images = seq;
  out.masks = masks;
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = horizontal ? y : h - 1 - y;
        const std::size_t sx = horizontal ? w - 1 - x : x;
        out.images.frames.data[(t * h + y) * w + x] = seq.frames.data[(t * h + sy) * w + sx];
        out.masks.labels[(t * h + y) * w + x] = masks.labels[(t * h + sy) * w + sx];
      }
    }
  }
  return out;
}

AugmentedSample elastic_sample(const CineSequence& seq, const MaskSequence& masks, Rng& rng,
                               double alpha, double sigma) {
  check_aligned(seq, masks);
  if (alpha < 0.0 || sigma <= 0.0) {
    fail(ErrorCode::kValue, "elastic deformation needs alpha >= 0 and sigma > 0");
  }
  const std::size_t h = seq.height(), w = seq.width();
  std::vector<double> dy(h * w), dx(h * w);
  for (double& v : dy) v = rng.uniform(-1.0, 1.0);
  for (double& v : dx) v = rng.uniform(-1.0, 1.0);
  gaussian_smooth(dy, h, w, sigma);
  gaussian_smooth(dx, h, w, sigma);
  return resample(seq, masks, [&, alpha](std::size_t y, std::size_t x, double& sy, double& sx) {
    sy = static_cast<double>(y) + alpha * dy[y * w + x];
    sx = static_cast<double>(x) + alpha * dx[y * w + x];
  });
}

AugmentedSample augment(const CineSequence& seq, const MaskSequence& masks, Rng& rng,
                        const AugmentOps& ops) {
  check_aligned(seq, masks);
  AugmentedSample sample{seq, masks};
  if (ops.rotate) {
    sample = rotate_sample(sample.images, sample.masks, rng.uniform(-30.0, 30.0));
  }
  if (ops.flip_h && rng.uniform() < 0.5) {
    sample = flip_sample(sample.images, sample.masks, true);
  }
  if (ops.flip_v && rng.uniform() < 0.5) {
    sample = flip_sample(sample.images, sample.masks, false);
  }
  if (ops.elastic) {
    sample = elastic_sample(sample.images, sample.masks, rng);
  }
  return sample;
}

std::vector<AugmentedSample> augment_many(const CineSequence& seq, const MaskSequence& masks,
                                          Rng& rng, std::size_t factor, const AugmentOps& ops) {
  if (factor == 0) {
    fail(ErrorCode::kValue, "augmentation factor must be at least 1");
  }
  std::vector<AugmentedSample> out;
  out.reserve(factor);
  out.push_back({seq, masks});
  for (std::size_t i = 1; i < factor; ++i) {
    out.push_back(augment(seq, masks, rng, ops));
  }
  return out;
}

double phantom_radius(const PhantomParams& params, std::size_t t) {
  const double phase = 2.0 * std::numbers::pi *
                       (static_cast<double>(t) - static_cast<double>(params.ed_frame)) /
                       static_cast<double>(params.frames);
  return params.endo_radius_es +
         (params.endo_radius_ed - params.endo_radius_es) * (1.0 + std::cos(phase)) / 2.0;
}

PhantomResult generate_phantom(const PhantomParams& params) {
  if (params.frames < 2 || params.height == 0 || params.width == 0) {
    fail(ErrorCode::kValue, "phantom needs at least two frames and a nonempty grid");
  }
  if (!(params.endo_radius_es < params.endo_radius_ed) || params.endo_radius_es <= 0.0) {
    fail(ErrorCode::kValue,
         "phantom radii must satisfy 0 < endo_radius_es < endo_radius_ed, got endo_radius_es=" +
             std::to_string(params.endo_radius_es) + ", endo_radius_ed=" +
             std::to_string(params.endo_radius_ed));
  }
  if (params.ed_frame >= params.frames) {
    fail(ErrorCode::kValue, "ED frame index out of range");
  }
  if (params.pixel_spacing <= 0.0 || params.noise_std < 0.0) {
    fail(ErrorCode::kValue, "phantom spacing must be positive and noise std nonnegative");
  }
  double max_wall = 0.0;
  for (double off : params.wall_sector_offset) {
    if (params.wall_base + off <= 0.0) {
      fail(ErrorCode::kValue, "phantom wall thickness must stay positive in every sector");
    }
    max_wall = std::max(max_wall, params.wall_base + off);
  }
  const double max_outer = params.endo_radius_ed + max_wall;
  if (params.center_y - max_outer < 0.0 || params.center_x - max_outer < 0.0 ||
      params.center_y + max_outer > static_cast<double>(params.height) - 1.0 ||
      params.center_x + max_outer > static_cast<double>(params.width) - 1.0) {
    fail(ErrorCode::kValue, "phantom annulus does not fit inside the frame");
  }

  const std::size_t t_count = params.frames, h = params.height, w = params.width;
  PhantomResult result;
  result.images.frames = Tensor({t_count, h, w});
  result.images.pixel_spacing = params.pixel_spacing;
  result.images.subject_id = params.subject_id;
  result.masks.frames = t_count;
  result.masks.height = h;
  result.masks.width = w;
  result.masks.pixel_spacing = params.pixel_spacing;
  result.masks.labels.assign(t_count * h * w, 0);

  Rng rng(params.seed);
  std::vector<double> analytic_cavity(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    const double r = phantom_radius(params, t);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = static_cast<double>(y) - params.center_y;
        const double dx = static_cast<double>(x) - params.center_x;
        const double d = std::sqrt(dy * dy + dx * dx);
        std::uint8_t label = kBackground;
        if (d <= r) {
          label = kCavity;
        } else {
          const int sector = phantom_sector(params.center_y, params.center_x, y, x);
          if (d <= r + params.wall_base +
                       params.wall_sector_offset[static_cast<std::size_t>(sector)]) {
            label = kMyocardium;
          }
        }
        result.masks.labels[(t * h + y) * w + x] = label;
        double intensity = params.intensity_background;
        if (label == kCavity) intensity = params.intensity_cavity;
        if (label == kMyocardium) intensity = params.intensity_myocardium;
        result.images.frames.data[(t * h + y) * w + x] =
            static_cast<float>(intensity + params.noise_std * rng.normal());
      }
    }

    // Closed-form companions to the rasterized ground truth.
    const double s = params.pixel_spacing;
    IndexVector analytic;
    analytic.cavity_area = std::numbers::pi * r * r * s * s;
    double myo = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double wall = params.wall_base + params.wall_sector_offset[static_cast<std::size_t>(k)];
      myo += (std::numbers::pi / 6.0) * ((r + wall) * (r + wall) - r * r) * s * s;
      analytic.rwt[k] = wall * s;
    }
    analytic.myo_area = myo;
    for (int k = 0; k < 3; ++k) analytic.dimensions[k] = 2.0 * r * s;
    result.analytic_indices.push_back(analytic);
    analytic_cavity[t] = analytic.cavity_area;
  }

  result.indices = quantify_sequence(result.masks);
  const std::vector<int> analytic_phase = derive_phase_labels(analytic_cavity);
  for (std::size_t t = 0; t < t_count; ++t) {
    result.analytic_indices[t].phase = analytic_phase[t];
  }
  return result;
}

}  // namespace cq
