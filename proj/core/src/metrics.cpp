#include "cq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "cq/error.hpp"
#include "cq/rng.hpp"

namespace cq {
namespace {

void check_equal_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorCode::kShape, std::string(what) + " needs equal-length series, got " +
                                std::to_string(a) + " and " + std::to_string(b));
  }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// One pass of the Felzenszwalb-Huttenlocher lower-envelope transform:
// d[i] = min_j (f[j] + (i-j)^2).
void squared_dt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n, 0);
  std::vector<double> z(n + 1, 0.0);
  std::size_t k = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s;
    while (true) {
      const std::size_t p = v[k];
      if (f[p] == kInf) {
        // No parabola yet: adopt q as the first one.
        v[k] = q;
        z[k] = -kInf;
        z[k + 1] = kInf;
        break;
      }
      s = (f[q] + static_cast<double>(q * q) - f[p] - static_cast<double>(p * p)) /
          (2.0 * static_cast<double>(q) - 2.0 * static_cast<double>(p));
      if (s <= z[k]) {
        --k;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kInf;
      break;
    }
  }
  k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (z[k + 1] < static_cast<double>(i)) ++k;
    const std::size_t p = v[k];
    const double di = static_cast<double>(i) - static_cast<double>(p);
    d[i] = f[p] == kInf ? kInf : f[p] + di * di;
  }
}

// Squared Euclidean distance to the nearest pixel of `label`.
std::vector<double> squared_distance_field(const Grid2D& mask, std::uint8_t label) {
  const std::size_t h = mask.height, w = mask.width;
  std::vector<double> field(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    field[i] = mask.data[i] == label ? 0.0 : kInf;
  }
  std::vector<double> line(std::max(h, w)), out(std::max(h, w));
  for (std::size_t y = 0; y < h; ++y) {
    line.assign(field.begin() + y * w, field.begin() + (y + 1) * w);
    line.resize(w);
    out.resize(w);
    squared_dt_1d(line, out);
    std::copy(out.begin(), out.begin() + w, field.begin() + y * w);
  }
  for (std::size_t x = 0; x < w; ++x) {
    line.resize(h);
    out.resize(h);
    for (std::size_t y = 0; y < h; ++y) line[y] = field[y * w + x];
    squared_dt_1d(line, out);
    for (std::size_t y = 0; y < h; ++y) field[y * w + x] = out[y];
  }
  return field;
}

double directed_hausdorff_sq(const Grid2D& from, const std::vector<double>& to_field,
                             std::uint8_t label) {
  double worst = 0.0;
  for (std::size_t i = 0; i < from.data.size(); ++i) {
    if (from.data[i] == label) worst = std::max(worst, to_field[i]);
  }
  return worst;
}

}  // namespace

double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_equal_length(pred.size(), truth.size(), "MAE");
  if (pred.empty()) {
    fail(ErrorCode::kValue, "MAE needs at least one sample");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - truth[i]);
  return total / static_cast<double>(pred.size());
}

double pcc(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_equal_length(pred.size(), truth.size(), "PCC");
  const std::size_t n = pred.size();
  if (n < 2) {
    fail(ErrorCode::kValue, "PCC needs at least two samples");
  }
  const double mean_p = std::accumulate(pred.begin(), pred.end(), 0.0) / static_cast<double>(n);
  const double mean_t = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = pred[i] - mean_p;
    const double dt = truth[i] - mean_t;
    sxy += dp * dt;
    sxx += dp * dp;
    syy += dt * dt;
  }
  if (sxx <= 0.0 || syy <= 0.0) {
    fail(ErrorCode::kDegenerate, "PCC is undefined for a zero-variance series");
  }
  return sxy / std::sqrt(sxx * syy);
}

double error_rate(const std::vector<int>& pred, const std::vector<int>& truth) {
  check_equal_length(pred.size(), truth.size(), "error rate");
  if (pred.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] != truth[i]) ++wrong;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(pred.size());
}

double dice_score(const Grid2D& pred, const Grid2D& truth, std::uint8_t label) {
  if (pred.height != truth.height || pred.width != truth.width) {
    fail(ErrorCode::kShape, "Dice needs masks of the same shape");
  }
  std::size_t overlap = 0, total = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] == label, b = truth.data[i] == label;
    overlap += a && b ? 1 : 0;
    total += (a ? 1 : 0) + (b ? 1 : 0);
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(total);
}

double hausdorff(const Grid2D& pred, const Grid2D& truth, std::uint8_t label,
                 double pixel_spacing) {
  if (pred.height != truth.height || pred.width != truth.width) {
    fail(ErrorCode::kShape, "Hausdorff needs masks of the same shape");
  }
  if (pixel_spacing <= 0.0) {
    fail(ErrorCode::kValue, "pixel spacing must be positive");
  }
  const auto count = [label](const Grid2D& m) {
    return std::count(m.data.begin(), m.data.end(), label);
  };
  const auto in_pred = count(pred), in_truth = count(truth);
  if (in_pred == 0 && in_truth == 0) return 0.0;
  if (in_pred == 0 || in_truth == 0) {
    fail(ErrorCode::kDegenerate, "Hausdorff is undefined when exactly one mask lacks label " +
                                     std::to_string(label));
  }
  const std::vector<double> to_truth = squared_distance_field(truth, label);
  const std::vector<double> to_pred = squared_distance_field(pred, label);
  const double worst = std::max(directed_hausdorff_sq(pred, to_truth, label),
                                directed_hausdorff_sq(truth, to_pred, label));
  return std::sqrt(worst) * pixel_spacing;
}

BlandAltman bland_altman(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_equal_length(pred.size(), truth.size(), "Bland-Altman");
  const std::size_t n = pred.size();
  if (n < 2) {
    fail(ErrorCode::kValue, "Bland-Altman needs at least two samples");
  }
  double bias = 0.0;
  for (std::size_t i = 0; i < n; ++i) bias += pred[i] - truth[i];
  bias /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - truth[i] - bias;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double spread = 1.96 * std::sqrt(var);
  return {bias, bias - spread, bias + spread};
}

FoldSplit kfold_split(const std::vector<std::string>& subject_ids, std::size_t k,
                      std::uint64_t seed) {
  if (k == 0) {
    fail(ErrorCode::kValue, "fold count must be positive");
  }
  if (k > subject_ids.size()) {
    fail(ErrorCode::kValue, "cannot split " + std::to_string(subject_ids.size()) +
                                " subjects into " + std::to_string(k) + " folds");
  }
  std::unordered_set<std::string> seen;
  for (const std::string& id : subject_ids) {
    if (!seen.insert(id).second) {
      fail(ErrorCode::kValue, "duplicate subject id '" + id + "'");
    }
  }

  std::vector<std::string> shuffled = subject_ids;
  Rng rng(seed);
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
  }

  FoldSplit split;
  split.folds.resize(k);
  const std::size_t base = shuffled.size() / k;
  const std::size_t remainder = shuffled.size() % k;
  std::size_t cursor = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t take = base + (f < remainder ? 1 : 0);
    for (std::size_t i = 0; i < take; ++i) split.folds[f].push_back(shuffled[cursor++]);
  }
  return split;
}

}  // namespace cq
