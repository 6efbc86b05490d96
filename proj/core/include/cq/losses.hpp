#pragma once

#include <array>

#include "cq/graph.hpp"

namespace cq {

// Weighted soft Dice comes in two spellings: `kVerbatim` evaluates
// 1 - (1/K) * sum_k w_k * inter_k / union_k, `kCanonical` the conventional
// 1 - sum_k w_k * 2 * inter_k / union_k (zero at perfect overlap when the
// class weights sum to 1).
enum class DiceVariant { kVerbatim, kCanonical };

template <class T>
struct LossWeightsT {
  std::array<T, 3> class_weights{T(0.2), T(0.3), T(0.5)};  // background, cavity, myocardium
  // Multi-stage objective: lambda1 * MSE + lambda2 * BCE.
  T multistage_mse = T(1);
  T multistage_bce = T(4);
  // End-to-end objective: lambda1 * Dice + lambda2 * MSE + lambda3 * BCE.
  T end_to_end_dice = T(10);
  T end_to_end_mse = T(1);
  T end_to_end_bce = T(1);
};

using LossWeights = LossWeightsT<float>;
using LossWeightsD = LossWeightsT<double>;

inline constexpr double kDiceSmoothing = 1e-6;
inline constexpr double kBceClampMargin = 1e-7;

// probs/onehot: [frames, 3, h, w]; probs must lie in [0,1] and onehot must be
// an exact one-hot encoding. Smoothing 1e-6 is added to numerator and
// denominator of every per-class ratio.
template <class T>
typename Graph<T>::NodeId soft_dice_loss(Graph<T>& g, typename Graph<T>::NodeId probs,
                                         typename Graph<T>::NodeId onehot,
                                         const LossWeightsT<T>& weights,
                                         DiceVariant variant = DiceVariant::kVerbatim);

// probs: per-sample P(ED); labels must be exactly 0 or 1. Probabilities are
// clamped to [1e-7, 1 - 1e-7] before the logarithms; mean over samples.
template <class T>
typename Graph<T>::NodeId bce_loss(Graph<T>& g, typename Graph<T>::NodeId probs,
                                   typename Graph<T>::NodeId labels);

// Mean over every element (frames x indices) of the squared difference.
template <class T>
typename Graph<T>::NodeId mse_loss(Graph<T>& g, typename Graph<T>::NodeId pred,
                                   typename Graph<T>::NodeId target);

// Multi-stage objective over the regression/classification heads.
template <class T>
typename Graph<T>::NodeId multitask_loss(Graph<T>& g, typename Graph<T>::NodeId pred_indices,
                                         typename Graph<T>::NodeId target_indices,
                                         typename Graph<T>::NodeId phase_probs,
                                         typename Graph<T>::NodeId phase_labels,
                                         const LossWeightsT<T>& weights);

// Joint objective combining already-built sub-loss nodes on one graph.
template <class T>
typename Graph<T>::NodeId end_to_end_loss(Graph<T>& g, typename Graph<T>::NodeId seg_loss,
                                          typename Graph<T>::NodeId mse,
                                          typename Graph<T>::NodeId bce,
                                          const LossWeightsT<T>& weights);

}  // namespace cq
