#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cq/geometry.hpp"

namespace cq {

// Mean absolute error between two equal-length series.
double mae(const std::vector<double>& pred, const std::vector<double>& truth);

// Pearson correlation coefficient; requires length >= 2 and nonzero
// variance in both series.
double pcc(const std::vector<double>& pred, const std::vector<double>& truth);

// Fraction of mismatched phase labels, in percent.
double error_rate(const std::vector<int>& pred, const std::vector<int>& truth);

// Dice overlap of one label: 2|A n B| / (|A| + |B|). Both empty -> 1.
double dice_score(const Grid2D& pred, const Grid2D& truth, std::uint8_t label);

// Exact symmetric Hausdorff distance between the pixel centers of one
// label, in millimetres. Both empty -> 0; exactly one empty -> error.
double hausdorff(const Grid2D& pred, const Grid2D& truth, std::uint8_t label,
                 double pixel_spacing);

struct BlandAltman {
  double bias = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
};

// Bias and 95% limits of agreement (bias +- 1.96 population std of the
// differences pred - truth).
BlandAltman bland_altman(const std::vector<double>& pred, const std::vector<double>& truth);

struct FoldSplit {
  std::vector<std::vector<std::string>> folds;
};

// Shuffled near-equal partition of the subject ids; the remainder is dealt
// one-per-fold starting from fold 0. Deterministic in the seed.
FoldSplit kfold_split(const std::vector<std::string>& subject_ids, std::size_t k,
                      std::uint64_t seed);

}  // namespace cq
