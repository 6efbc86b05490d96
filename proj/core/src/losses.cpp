#include "cq/losses.hpp"

#include <cstddef>

#include "cq/error.hpp"

namespace cq {
namespace {

template <class T>
void validate_dice_inputs(const TensorT<T>& probs, const TensorT<T>& onehot,
                          std::size_t class_count) {
  if (probs.shape != onehot.shape) {
    fail(ErrorCode::kShape, "dice probs " + shape_to_string(probs.shape) +
                                " and one-hot " + shape_to_string(onehot.shape) + " differ");
  }
  if (probs.rank() < 2 || probs.shape[1] != class_count) {
    fail(ErrorCode::kShape, "dice expects [frames, " + std::to_string(class_count) +
                                ", ...], got " + shape_to_string(probs.shape));
  }
  for (const T& v : probs.data) {
    if (!(v >= T(0) && v <= T(1))) {
      fail(ErrorCode::kValue, "dice probabilities must lie in [0, 1]");
    }
  }
  const std::size_t frames = onehot.shape[0];
  std::size_t spatial = 1;
  for (std::size_t a = 2; a < onehot.rank(); ++a) spatial *= onehot.shape[a];
  for (std::size_t n = 0; n < frames; ++n) {
    for (std::size_t s = 0; s < spatial; ++s) {
      T total = T(0);
      for (std::size_t k = 0; k < class_count; ++k) {
        const T v = onehot.data[(n * class_count + k) * spatial + s];
        if (v != T(0) && v != T(1)) {
          fail(ErrorCode::kValue, "dice ground truth must be exactly one-hot");
        }
        total += v;
      }
      if (total != T(1)) {
        fail(ErrorCode::kValue, "dice ground truth must have exactly one active class per pixel");
      }
    }
  }
}

}  // namespace

template <class T>
typename Graph<T>::NodeId soft_dice_loss(Graph<T>& g, typename Graph<T>::NodeId probs,
                                         typename Graph<T>::NodeId onehot,
                                         const LossWeightsT<T>& weights, DiceVariant variant) {
  const std::size_t class_count = weights.class_weights.size();
  validate_dice_inputs(g.value(probs), g.value(onehot), class_count);
  const T smooth = static_cast<T>(kDiceSmoothing);

  typename Graph<T>::NodeId acc{};
  bool first = true;
  for (std::size_t k = 0; k < class_count; ++k) {
    auto p_k = g.select_channels(probs, {k});
    auto y_k = g.select_channels(onehot, {k});
    auto inter = g.sum(g.mul(y_k, p_k));
    auto denom = g.add(g.sum(y_k), g.sum(p_k));
    if (variant == DiceVariant::kCanonical) inter = g.scale(inter, T(2));
    auto ratio = g.div(g.add_scalar(inter, smooth), g.add_scalar(denom, smooth));
    auto term = g.scale(ratio, weights.class_weights[k]);
    acc = first ? term : g.add(acc, term);
    first = false;
  }
  if (variant == DiceVariant::kVerbatim) {
    acc = g.scale(acc, T(1) / static_cast<T>(class_count));
  }
  return g.add_scalar(g.scale(acc, T(-1)), T(1));
}

template <class T>
typename Graph<T>::NodeId bce_loss(Graph<T>& g, typename Graph<T>::NodeId probs,
                                   typename Graph<T>::NodeId labels) {
  const TensorT<T>& p = g.value(probs);
  const TensorT<T>& y = g.value(labels);
  if (p.shape != y.shape) {
    fail(ErrorCode::kShape, "bce probs " + shape_to_string(p.shape) + " and labels " +
                                shape_to_string(y.shape) + " differ");
  }
  for (const T& v : y.data) {
    if (v != T(0) && v != T(1)) fail(ErrorCode::kValue, "bce labels must be exactly 0 or 1");
  }
  const T lo = static_cast<T>(kBceClampMargin);
  auto clamped = g.clamp(probs, lo, T(1) - lo);
  auto pos = g.mul(labels, g.log(clamped));
  auto flipped_labels = g.add_scalar(g.scale(labels, T(-1)), T(1));
  auto flipped_probs = g.add_scalar(g.scale(clamped, T(-1)), T(1));
  auto neg = g.mul(flipped_labels, g.log(flipped_probs));
  return g.scale(g.mean(g.add(pos, neg)), T(-1));
}

template <class T>
typename Graph<T>::NodeId mse_loss(Graph<T>& g, typename Graph<T>::NodeId pred,
                                   typename Graph<T>::NodeId target) {
  auto diff = g.sub(pred, target);
  return g.mean(g.mul(diff, diff));
}

template <class T>
typename Graph<T>::NodeId multitask_loss(Graph<T>& g, typename Graph<T>::NodeId pred_indices,
                                         typename Graph<T>::NodeId target_indices,
                                         typename Graph<T>::NodeId phase_probs,
                                         typename Graph<T>::NodeId phase_labels,
                                         const LossWeightsT<T>& weights) {
  auto mse = mse_loss(g, pred_indices, target_indices);
  auto bce = bce_loss(g, phase_probs, phase_labels);
  return g.add(g.scale(mse, weights.multistage_mse), g.scale(bce, weights.multistage_bce));
}

template <class T>
typename Graph<T>::NodeId end_to_end_loss(Graph<T>& g, typename Graph<T>::NodeId seg_loss,
                                          typename Graph<T>::NodeId mse,
                                          typename Graph<T>::NodeId bce,
                                          const LossWeightsT<T>& weights) {
  auto weighted = g.add(g.scale(seg_loss, weights.end_to_end_dice),
                        g.scale(mse, weights.end_to_end_mse));
  return g.add(weighted, g.scale(bce, weights.end_to_end_bce));
}

#define CQ_INSTANTIATE_LOSSES(T)                                                              \
  template Graph<T>::NodeId soft_dice_loss<T>(Graph<T>&, Graph<T>::NodeId, Graph<T>::NodeId, \
                                              const LossWeightsT<T>&, DiceVariant);          \
  template Graph<T>::NodeId bce_loss<T>(Graph<T>&, Graph<T>::NodeId, Graph<T>::NodeId);      \
  template Graph<T>::NodeId mse_loss<T>(Graph<T>&, Graph<T>::NodeId, Graph<T>::NodeId);      \
  template Graph<T>::NodeId multitask_loss<T>(Graph<T>&, Graph<T>::NodeId, Graph<T>::NodeId, \
                                              Graph<T>::NodeId, Graph<T>::NodeId,            \
                                              const LossWeightsT<T>&);                       \
  template Graph<T>::NodeId end_to_end_loss<T>(Graph<T>&, Graph<T>::NodeId, Graph<T>::NodeId,\
                                               Graph<T>::NodeId, const LossWeightsT<T>&);

CQ_INSTANTIATE_LOSSES(float)
CQ_INSTANTIATE_LOSSES(double)
#undef CQ_INSTANTIATE_LOSSES

}  // namespace cq
