#pragma once

// Labeled synthetic motion generator. Each class is a distinct family of
// oscillating joint-chain trajectories: classes differ in temporal
// frequency, in the phase gradient travelling along the chain and in which
// joints carry the motion. Those signatures survive rigid rotation, so a
// viewpoint-invariant representation has something to latch onto, while raw
// coordinates remain easily separable for the unrotated case.

#include <vector>

#include "skelrep/rng.hpp"
#include "skelrep/skeleton.hpp"

namespace skelrep {

struct SynthConfig {
  int classes = 4;
  int per_class = 50;
  Eigen::Index joints = 9;
  Eigen::Index frames = 32;
  double sigma = 0.05;      // additive Gaussian noise
  std::uint64_t seed = 0;
  double train_fraction = 0.7;  // stratified split, truncated per class
};

namespace detail {

inline SkeletonSequence synth_sequence(const SynthConfig& cfg, int cls, std::uint64_t index) {
  auto rng = Rng::stream(cfg.seed, "synth", index);
  const Eigen::Index m = cfg.joints, t = cfg.frames;
  const double pi = 3.14159265358979323846;

  // class signature
  const double freq = 1.0 + 0.75 * cls;                  // cycles per sequence
  const double phase_step = 0.35 * (cls + 1);            // phase wave along the chain
  // per-sequence trajectory parameters (the only intra-class variation at
  // sigma = 0)
  const double amp = 0.35 * rng.uniform(0.85, 1.15);
  const double freq_jitter = rng.uniform(0.97, 1.03);
  const double psi = rng.uniform(0.0, 0.25);             // small global phase

  SkeletonSequence s = make_sequence(m, t);
  s.label = cls;
  for (Eigen::Index j = 0; j < m; ++j) {
    // helical static pose: genuinely three-dimensional, so every rotation
    // changes the raw coordinates in a recoverable way
    const double bx = 0.45 * std::sin(1.9 * static_cast<double>(j));
    const double by = 0.30 * static_cast<double>(j);
    const double bz = 0.45 * std::cos(1.9 * static_cast<double>(j));
    // class-dependent amplitude profile: which joints move most
    const double prof =
        0.5 + 0.5 * std::cos(pi * static_cast<double>(j) * (cls + 1) / static_cast<double>(m));
    const double phase = phase_step * static_cast<double>(j) + psi;
    for (Eigen::Index f = 0; f < t; ++f) {
      const double u = 2.0 * pi * freq * freq_jitter * static_cast<double>(f) /
                       static_cast<double>(t);
      s.at(0, j, f) = bx + amp * prof * std::sin(u + phase);
      s.at(1, j, f) = by;
      s.at(2, j, f) = bz + amp * prof * std::cos(2.0 * u + phase) * 0.5;
    }
  }
  if (cfg.sigma > 0.0) {
    for (Eigen::Index i = 0; i < s.coords.numel(); ++i)
      s.coords.data[i] += cfg.sigma * rng.gaussian();
  }
  return s;
}

}  // namespace detail

inline DatasetSplit synth_dataset(const SynthConfig& cfg) {
  if (cfg.classes < 2) fail("synth_dataset: need at least 2 classes");
  if (cfg.per_class < 1) fail("synth_dataset: per_class must be >= 1");
  if (cfg.joints < 2 || cfg.frames < 2) fail("synth_dataset: need m >= 2 and t >= 2");

  DatasetSplit split;
  split.kind = SplitKind::Synthetic;
  split.num_classes = cfg.classes;
  const int n_train =
      static_cast<int>(static_cast<double>(cfg.per_class) * cfg.train_fraction);
  for (int c = 0; c < cfg.classes; ++c)
    for (int i = 0; i < cfg.per_class; ++i) {
      const std::uint64_t index =
          static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(cfg.per_class) +
          static_cast<std::uint64_t>(i);
      auto seq = detail::synth_sequence(cfg, c, index);
      (i < n_train ? split.train : split.test).push_back(std::move(seq));
    }
  return split;
}

}  // namespace skelrep
