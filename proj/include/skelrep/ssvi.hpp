#pragma once

// Self-supervised viewpoint invariance head: an angle regressor (one
// ReLU-hidden-layer MLP with a sigmoid readout over the three normalized
// Euler angles) sitting behind a gradient reversal layer. The head learns to
// predict the rotation applied to the batch; the reversed gradient pushes
// the encoder to strip that information from the latent code.

#include <numbers>
#include <string>

#include "skelrep/adam.hpp"
#include "skelrep/nn.hpp"
#include "skelrep/rotation.hpp"

namespace skelrep {

template <typename S>
struct SsviHead {
  NodePtr<S> w1, b1;  // latent -> hidden
  NodePtr<S> w2, b2;  // hidden -> 3 angle readouts
  S lambda = S(1);    // GRL strength

  static SsviHead init(Eigen::Index latent_dim, Eigen::Index hidden, S lambda,
                       std::uint64_t seed) {
    if (hidden < 1) fail("ssvi: hidden width must be >= 1");
    SsviHead h;
    h.lambda = lambda;
    auto uniform_fan_in = [&](Shape sh, Eigen::Index fan_in, const char* tag) {
      auto rng = Rng::stream(seed, std::string("init/ssvi.") + tag);
      const S bound = S(1) / std::sqrt(static_cast<S>(fan_in));
      return leaf(TensorT<S>::uniform(std::move(sh), rng, -bound, bound));
    };
    h.w1 = uniform_fan_in({latent_dim, hidden}, latent_dim, "fc1.weight");
    h.b1 = uniform_fan_in({hidden}, latent_dim, "fc1.bias");
    h.w2 = uniform_fan_in({hidden, 3}, hidden, "fc2.weight");
    h.b2 = uniform_fan_in({3}, hidden, "fc2.bias");
    return h;
  }

  void collect(ParamMap<S>& out, const std::string& prefix = "ssvi.") const {
    out[prefix + "fc1.weight"] = w1;
    out[prefix + "fc1.bias"] = b1;
    out[prefix + "fc2.weight"] = w2;
    out[prefix + "fc2.bias"] = b2;
  }
};

// Normalized regression targets: one row per batch element, each angle
// divided by 2*pi to land in the sigmoid's range.
template <typename S>
inline TensorT<S> ssvi_targets(const EulerAngles& angles, Eigen::Index batch) {
  const S two_pi = S(2) * static_cast<S>(std::numbers::pi);
  TensorT<S> t({batch, 3});
  for (Eigen::Index n = 0; n < batch; ++n) {
    t.at(n, 0) = static_cast<S>(angles.pitch) / two_pi;
    t.at(n, 1) = static_cast<S>(angles.yaw) / two_pi;
    t.at(n, 2) = static_cast<S>(angles.roll) / two_pi;
  }
  return t;
}

// Regressor forward pass on the (gradient-reversed) latent code.
template <typename S>
inline NodePtr<S> ssvi_predict(const NodePtr<S>& latent, const SsviHead<S>& head) {
  auto reversed = grl(latent, head.lambda);
  auto hidden = relu(dense(reversed, head.w1, head.b1));
  return sigmoid(dense(hidden, head.w2, head.b2));
}

// L1 loss between the sigmoid readout and the normalized angle triplet,
// summed over the three angles and averaged over the batch. Gradients
// reaching `latent` pass through the GRL (negated, scaled by lambda); head
// parameters receive unreversed gradients.
template <typename S>
inline NodePtr<S> ssvi_loss(const NodePtr<S>& latent, const EulerAngles& target,
                            const SsviHead<S>& head) {
  if (latent->value.rank() != 2)
    fail("ssvi_loss: latent must be rank 2 [batch, latent_dim]");
  const Eigen::Index batch = latent->value.shape[0];
  if (batch < 1) fail("ssvi_loss: empty batch");
  auto pred = ssvi_predict(latent, head);
  auto tgt = constant(ssvi_targets<S>(target, batch));
  return l1_loss(pred, tgt);
}

}  // namespace skelrep
