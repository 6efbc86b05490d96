#pragma once

#include <cstddef>
#include <unordered_map>
#include <vector>

#include "cq/graph.hpp"
#include "cq/tensor.hpp"

namespace cq {

template <class T>
struct AdamConfigT {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  // L2 decay added to the gradient before the moment updates. Applied to
  // kernels (rank >= 2) only; biases and normalization scales are exempt.
  T weight_decay = T(0);
};

using AdamConfig = AdamConfigT<float>;

// Bias-corrected Adam. Moment slots are keyed by parameter identity and
// created on first use; the step counter is shared across parameters.
template <class T>
class AdamT {
 public:
  explicit AdamT(AdamConfigT<T> config) : config_(config) {}

  // Fetches each parameter's gradient from `g` and applies one update in
  // place. A non-finite gradient aborts with the parameter's name.
  void step(const Graph<T>& g, const std::vector<ParameterT<T>*>& params);

  std::size_t step_count() const { return step_; }
  const AdamConfigT<T>& config() const { return config_; }

 private:
  struct Slot {
    TensorT<T> m;
    TensorT<T> v;
  };

  AdamConfigT<T> config_;
  std::unordered_map<const ParameterT<T>*, Slot> slots_;
  std::size_t step_ = 0;
};

using Adam = AdamT<float>;

extern template class AdamT<float>;
extern template class AdamT<double>;

}  // namespace cq
