#pragma once

// Skeleton sequences: a d x m x t coordinate tensor (d = 3 spatial axes,
// m joints, t timestamps) with optional label and capture metadata, plus the
// temporal resampling and pose normalization applied before training.

#include <optional>
#include <string>
#include <vector>

#include "skelrep/tensor.hpp"

namespace skelrep {

struct SkeletonSequence {
  Tensor coords;  // shape {3, m, t}
  std::optional<int> label;
  std::optional<int> subject;
  std::optional<int> camera;
  std::optional<int> setup;
  bool has_missing_joints = false;  // all-zero joints seen in the source file

  Eigen::Index joints() const { return coords.shape[1]; }
  Eigen::Index frames() const { return coords.shape[2]; }

  double& at(Eigen::Index d, Eigen::Index j, Eigen::Index t) { return coords.at(d, j, t); }
  double at(Eigen::Index d, Eigen::Index j, Eigen::Index t) const { return coords.at(d, j, t); }
};

inline SkeletonSequence make_sequence(Eigen::Index m, Eigen::Index t) {
  SkeletonSequence s;
  s.coords = Tensor::zeros({3, m, t});
  return s;
}

enum class SplitKind { CrossSubject, CrossView, CrossSetup, Synthetic };

inline const char* split_kind_name(SplitKind k) {
  switch (k) {
    case SplitKind::CrossSubject: return "cross-subject";
    case SplitKind::CrossView: return "cross-view";
    case SplitKind::CrossSetup: return "cross-setup";
    case SplitKind::Synthetic: return "synthetic";
  }
  return "?";
}

struct DatasetSplit {
  std::vector<SkeletonSequence> train;
  std::vector<SkeletonSequence> test;
  SplitKind kind = SplitKind::Synthetic;
  int num_classes = 0;
};

// Linear interpolation onto t_fixed uniformly spaced samples. Endpoint
// frames are copied bit-for-bit; a sequence already at t_fixed is returned
// unchanged.
inline SkeletonSequence resample_temporal(const SkeletonSequence& seq, Eigen::Index t_fixed) {
  if (t_fixed < 2) fail("resample_temporal: t_fixed must be >= 2");
  const Eigen::Index m = seq.joints(), t = seq.frames();
  if (t < 1) fail("resample_temporal: empty sequence");
  if (t == t_fixed) return seq;

  SkeletonSequence out = seq;
  out.coords = Tensor::zeros({3, m, t_fixed});
  for (Eigen::Index i = 0; i < t_fixed; ++i) {
    double src;
    if (i == 0) {
      src = 0.0;
    } else if (i == t_fixed - 1) {
      src = static_cast<double>(t - 1);
    } else {
      src = static_cast<double>(i) * static_cast<double>(t - 1) / static_cast<double>(t_fixed - 1);
    }
    Eigen::Index k = std::min<Eigen::Index>(static_cast<Eigen::Index>(src), t - 1);
    const double f = src - static_cast<double>(k);
    const Eigen::Index k1 = std::min<Eigen::Index>(k + 1, t - 1);
    for (Eigen::Index d = 0; d < 3; ++d)
      for (Eigen::Index j = 0; j < m; ++j) {
        const double a = seq.at(d, j, k), b = seq.at(d, j, k1);
        out.coords.at(d, j, i) = (f == 0.0) ? a : (1.0 - f) * a + f * b;
      }
  }
  return out;
}

struct NormalizeOptions {
  int root_joint = 0;   // translated to the origin, per frame
  int torso_a = 0;      // torso segment endpoints; its mean length over the
  int torso_b = 20;     // sequence becomes the length unit
};

// Per-frame root centering plus sequence-level torso-length scaling.
// Idempotent, and invariant to input translation and uniform scaling.
inline SkeletonSequence normalize(const SkeletonSequence& seq, NormalizeOptions opt = {}) {
  const Eigen::Index m = seq.joints(), t = seq.frames();
  if (opt.root_joint < 0 || opt.root_joint >= m)
    fail("normalize: root joint " + std::to_string(opt.root_joint) + " out of range");
  if (opt.torso_a < 0 || opt.torso_a >= m || opt.torso_b < 0 || opt.torso_b >= m)
    fail("normalize: torso joints (" + std::to_string(opt.torso_a) + "," +
         std::to_string(opt.torso_b) + ") out of range for m = " + std::to_string(m));

  SkeletonSequence out = seq;
  for (Eigen::Index f = 0; f < t; ++f)
    for (Eigen::Index d = 0; d < 3; ++d) {
      const double root = out.coords.at(d, opt.root_joint, f);
      for (Eigen::Index j = 0; j < m; ++j) out.coords.at(d, j, f) -= root;
    }

  double torso = 0.0;
  for (Eigen::Index f = 0; f < t; ++f) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < 3; ++d) {
      const double diff = out.coords.at(d, opt.torso_a, f) - out.coords.at(d, opt.torso_b, f);
      s += diff * diff;
    }
    torso += std::sqrt(s);
  }
  torso /= static_cast<double>(t);
  if (torso <= 0.0)
    fail("normalize: zero torso length between joints " + std::to_string(opt.torso_a) + " and " +
         std::to_string(opt.torso_b));
  out.coords.data /= torso;
  return out;
}

// Batch assembly: sequences stacked as a [N, 3, m, t] tensor in batch order.
template <typename S>
inline TensorT<S> stack_batch(const std::vector<SkeletonSequence>& seqs,
                              const std::vector<std::size_t>& which) {
  if (which.empty()) fail("stack_batch: empty batch");
  const auto& first = seqs[which[0]].coords.shape;
  TensorT<S> out({static_cast<Eigen::Index>(which.size()), first[0], first[1], first[2]});
  const Eigen::Index per = shape_numel(first);
  for (std::size_t b = 0; b < which.size(); ++b) {
    const auto& c = seqs[which[b]].coords;
    if (c.shape != first)
      fail("stack_batch: inconsistent sequence shape " + shape_str(c.shape) + " vs " +
           shape_str(first));
    out.data.segment(static_cast<Eigen::Index>(b) * per, per) = c.data.template cast<S>();
  }
  return out;
}

}  // namespace skelrep
