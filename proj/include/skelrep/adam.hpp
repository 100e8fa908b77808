#pragma once

// Adam with bias correction. Moments live per parameter name so that a
// checkpointed optimizer can resume against reloaded parameters.

#include <cmath>
#include <map>
#include <string>

#include "skelrep/autodiff.hpp"

namespace skelrep {

// Named learnable leaves, ordered by name for deterministic traversal.
template <typename S>
using ParamMap = std::map<std::string, NodePtr<S>>;

template <typename S>
inline void zero_grads(ParamMap<S>& params) {
  for (auto& [name, p] : params) p->zero_grad();
}

template <typename S>
struct AdamState {
  struct Slot {
    TensorT<S> m;
    TensorT<S> v;
  };
  std::map<std::string, Slot> slots;
  std::uint64_t step = 0;  // strictly increasing, one tick per adam_step call
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

// One update over every parameter in `params` that carries a gradient.
// Parameters without a gradient are left untouched (values and moments), so
// an update restricted to a sub-network never moves the rest of the model.
template <typename S>
inline void adam_step(ParamMap<S>& params, AdamState<S>& state) {
  state.step += 1;
  const S bc1 = S(1) - std::pow(state.beta1, static_cast<S>(state.step));
  const S bc2 = S(1) - std::pow(state.beta2, static_cast<S>(state.step));
  for (auto& [name, p] : params) {
    if (!p->has_grad) continue;
    if (!p->grad.same_shape(p->value))
      fail("adam_step: gradient shape mismatch for parameter '" + name + "'");
    auto it = state.slots.find(name);
    if (it == state.slots.end()) {
      it = state.slots.emplace(name, typename AdamState<S>::Slot{TensorT<S>::zeros(p->value.shape),
                                                                 TensorT<S>::zeros(p->value.shape)})
               .first;
    }
    auto& slot = it->second;
    if (!slot.m.same_shape(p->value))
      fail("adam_step: state shape " + shape_str(slot.m.shape) + " does not match parameter '" +
           name + "' " + shape_str(p->value.shape));
    slot.m.data = state.beta1 * slot.m.data + (S(1) - state.beta1) * p->grad.data;
    slot.v.data = state.beta2 * slot.v.data + (S(1) - state.beta2) * p->grad.data.square();
    const S step_scale = state.lr / bc1;
    const S inv_bc2 = S(1) / bc2;
    p->value.data -= step_scale * slot.m.data / ((slot.v.data * inv_bc2).sqrt() + state.eps);
  }
}

}  // namespace skelrep
