#include "cq/optimizer.hpp"

#include <cmath>

#include "cq/error.hpp"

namespace cq {

template <class T>
void AdamT<T>::step(const Graph<T>& g, const std::vector<ParameterT<T>*>& params) {
  ++step_;
  const T bias1 = T(1) - std::pow(config_.beta1, static_cast<T>(step_));
  const T bias2 = T(1) - std::pow(config_.beta2, static_cast<T>(step_));
  for (ParameterT<T>* param : params) {
    const TensorT<T> grad = g.grad_of(*param);
    Slot& slot = slots_[param];
    if (slot.m.numel() == 0) {
      slot.m = TensorT<T>(param->value.shape);
      slot.v = TensorT<T>(param->value.shape);
    }
    const bool decay = config_.weight_decay > T(0) && param->value.rank() >= 2;
    for (std::size_t i = 0; i < grad.numel(); ++i) {
      T gi = grad.data[i];
      if (!std::isfinite(gi)) {
        fail(ErrorCode::kDiverged, "non-finite gradient for parameter '" + param->name + "'");
      }
      if (decay) gi += config_.weight_decay * param->value.data[i];
      slot.m.data[i] = config_.beta1 * slot.m.data[i] + (T(1) - config_.beta1) * gi;
      slot.v.data[i] = config_.beta2 * slot.v.data[i] + (T(1) - config_.beta2) * gi * gi;
      const T m_hat = slot.m.data[i] / bias1;
      const T v_hat = slot.v.data[i] / bias2;
      param->value.data[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

template class AdamT<float>;
template class AdamT<double>;

}  // namespace cq
