#pragma once

// Mini-batch training loop. Per batch: one forward pass through encoder and
// decoder, an MSE update, an optional skeletal-Laplacian update and an
// optional viewpoint-invariance branch (sample one Euler triplet, rotate the
// whole batch, forward through the encoder only, update encoder + regressor
// head through the gradient reversal layer). The decoder is never touched by
// the invariance branch. All updates share one Adam state. Everything is
// deterministic given the seed, and checkpoints carry enough progress state
// to make resume bit-identical to an uninterrupted run.

#include <chrono>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "skelrep/checkpoint.hpp"
#include "skelrep/graph.hpp"
#include "skelrep/model.hpp"
#include "skelrep/ssvi.hpp"
#include "skelrep/synth.hpp"

namespace skelrep {

enum class Variant { AE, AE_L, GRAE, GRAE_L };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::AE: return "ae";
    case Variant::AE_L: return "ae-l";
    case Variant::GRAE: return "grae";
    case Variant::GRAE_L: return "grae-l";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "ae") return Variant::AE;
  if (s == "ae-l") return Variant::AE_L;
  if (s == "grae") return Variant::GRAE;
  if (s == "grae-l") return Variant::GRAE_L;
  fail("unknown variant '" + s + "' (expected ae|ae-l|grae|grae-l)");
}

inline bool variant_laplacian(Variant v) { return v == Variant::AE_L || v == Variant::GRAE_L; }
inline bool variant_ssvi(Variant v) { return v == Variant::GRAE || v == Variant::GRAE_L; }

enum class LossMode { Sequential, WeightedSum };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool laplacian = false;
  bool ssvi = false;
  LossMode loss_mode = LossMode::Sequential;
  double mu = 1.0;  // R_skel weight in weighted-sum mode
  double grl_lambda = 1.0;
  Eigen::Index ssvi_hidden = 128;
  bool per_sequence_angles = false;  // default: one triplet per mini-batch
  int checkpoint_interval = 0;       // in mini-batches; 0 = final only
  std::string checkpoint_path;       // empty = no checkpointing

  void validate() const {
    if (epochs < 1) fail("train config: epochs must be >= 1");
    if (batch_size < 1) fail("train config: batch size must be >= 1");
    if (!(lr > 0)) fail("train config: learning rate must be > 0");
    if (ssvi && !(grl_lambda > 0)) fail("train config: grl lambda must be > 0");
  }
};

// The four published variants map one-to-one onto the two optional branches.
inline TrainConfig config_for_variant(Variant v, TrainConfig base = {}) {
  base.laplacian = variant_laplacian(v);
  base.ssvi = variant_ssvi(v);
  return base;
}

struct TrainStepRecord {
  std::uint64_t step = 0;  // global mini-batch index, strictly increasing
  int epoch = 0;
  double mse = 0.0;
  std::optional<double> r_skel;
  std::optional<double> ssvi;
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<TrainStepRecord> records;

  double epoch_mean_mse(int epoch) const {
    double acc = 0;
    int n = 0;
    for (const auto& r : records)
      if (r.epoch == epoch) {
        acc += r.mse;
        ++n;
      }
    return n ? acc / n : 0.0;
  }
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Rotates every sequence of a stacked [N,3,m,t] batch in place: each frame's
// m x 3 joint matrix is right-multiplied by omega.
template <typename S>
inline void rotate_batch(TensorT<S>& batch, const Eigen::Matrix3d& omega) {
  const Eigen::Index N = batch.shape[0], M = batch.shape[2], T = batch.shape[3];
  const Eigen::Matrix3<S> om = omega.cast<S>();
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index j = 0; j < M; ++j)
      for (Eigen::Index t = 0; t < T; ++t) {
        Eigen::RowVector3<S> x(batch.at(n, 0, j, t), batch.at(n, 1, j, t), batch.at(n, 2, j, t));
        Eigen::RowVector3<S> z = x * om;
        batch.at(n, 0, j, t) = z[0];
        batch.at(n, 1, j, t) = z[1];
        batch.at(n, 2, j, t) = z[2];
      }
}

template <typename S>
using GradSnapshot = std::map<std::string, TensorT<S>>;

template <typename S>
inline GradSnapshot<S> take_grads(const ParamMap<S>& params) {
  GradSnapshot<S> snap;
  for (const auto& [name, p] : params)
    if (p->has_grad) snap.emplace(name, p->grad);
  return snap;
}

template <typename S>
inline void put_grads(ParamMap<S>& params, const GradSnapshot<S>& snap) {
  for (auto& [name, p] : params) {
    auto it = snap.find(name);
    if (it != snap.end()) {
      p->grad = it->second;
      p->has_grad = true;
    } else {
      p->zero_grad();
    }
  }
}

}  // namespace detail

// Runs the loop from `start` (zero-initialized for a fresh run) through the
// epoch budget. Appends one record per mini-batch to `log`. Throws
// DivergenceError when a loss goes non-finite; the checkpoint file written
// at the previous interval is left in place.
template <typename S>
inline TrainProgress train(Autoencoder<S>& model, SsviHead<S>* head,
                           const std::vector<SkeletonSequence>& data, const SkeletonGraph* graph,
                           const TrainConfig& cfg, AdamState<S>& adam, TrainLog& log,
                           TrainProgress start = {}) {
  cfg.validate();
  if (data.empty()) fail("train: empty dataset");
  if (cfg.laplacian) {
    if (!graph) fail("train: laplacian mode requires a skeleton graph");
    if (graph->m != data.front().joints())
      fail("train: graph joint count " + std::to_string(graph->m) +
           " does not match data m = " + std::to_string(data.front().joints()));
  }
  if (cfg.ssvi && !head) fail("train: ssvi mode requires a regressor head");
  adam.lr = static_cast<S>(cfg.lr);

  ParamMap<S> ae_params = model.params;
  ParamMap<S> all_params = model.params;
  ParamMap<S> ssvi_params = model.encoder_params();
  if (head) {
    head->collect(all_params);
    head->collect(ssvi_params);
  }

  const std::size_t n = data.size();
  const std::uint64_t batches_per_epoch =
      (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);

  auto save = [&](const TrainProgress& progress) {
    if (cfg.checkpoint_path.empty()) return;
    save_checkpoint_file(cfg.checkpoint_path,
                         snapshot(all_params, model.bn_stats, &adam, progress));
  };

  TrainProgress progress = start;
  progress.seed = cfg.seed;
  for (std::uint64_t epoch = start.epoch; epoch < static_cast<std::uint64_t>(cfg.epochs);
       ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto shuffle_rng = Rng::stream(cfg.seed, "shuffle", epoch);
    shuffle_rng.shuffle(order);

    const std::uint64_t first_batch = (epoch == start.epoch) ? start.batch_in_epoch : 0;
    for (std::uint64_t b = first_batch; b < batches_per_epoch; ++b) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t lo = static_cast<std::size_t>(b) * static_cast<std::size_t>(cfg.batch_size);
      const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::size_t> batch_idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                         order.begin() + static_cast<std::ptrdiff_t>(hi));

      TrainStepRecord rec;
      rec.step = progress.global_step;
      rec.epoch = static_cast<int>(epoch);

      // reconstruction branch: one forward pass, then one or two updates
      auto x = constant(stack_batch<S>(data, batch_idx));
      auto enc = model.encode(x);
      auto xhat = model.decode(enc.z, enc.pool_indices, BnMode::Train);
      auto mse = mse_loss(x, xhat);
      rec.mse = static_cast<double>(mse->value.data[0]);

      NodePtr<S> rs;
      if (cfg.laplacian) {
        rs = r_skel(xhat, *graph);
        rec.r_skel = static_cast<double>(rs->value.data[0]);
      }
      if (!std::isfinite(rec.mse) || (rec.r_skel && !std::isfinite(*rec.r_skel)))
        throw DivergenceError("training diverged at step " + std::to_string(rec.step) +
                              " (non-finite loss)");

      if (cfg.laplacian && cfg.loss_mode == LossMode::WeightedSum) {
        auto total = add(mse, scale(rs, static_cast<S>(cfg.mu)));
        zero_grads(all_params);
        backward(total);
        adam_step(ae_params, adam);
      } else if (cfg.laplacian) {
        // both gradients are taken at the parameters of this forward pass,
        // then applied as two sequential Adam updates
        zero_grads(all_params);
        backward(mse);
        auto g_mse = detail::take_grads(ae_params);
        zero_grads(all_params);
        backward(rs);
        auto g_rs = detail::take_grads(ae_params);
        detail::put_grads(ae_params, g_mse);
        adam_step(ae_params, adam);
        detail::put_grads(ae_params, g_rs);
        adam_step(ae_params, adam);
      } else {
        zero_grads(all_params);
        backward(mse);
        adam_step(ae_params, adam);
      }

      // viewpoint-invariance branch: rotated batch, encoder-only forward
      if (cfg.ssvi) {
        auto angle_rng = Rng::stream(cfg.seed, "ssvi-angles", progress.global_step);
        auto rotated = stack_batch<S>(data, batch_idx);
        const Eigen::Index nb = rotated.shape[0];
        TensorT<S> targets({nb, 3});
        if (cfg.per_sequence_angles) {
          // extension: one triplet per sequence, drawn from the same stream
          for (Eigen::Index i = 0; i < nb; ++i) {
            const EulerAngles a = sample_angles(angle_rng);
            TensorT<S> one({1, rotated.shape[1], rotated.shape[2], rotated.shape[3]});
            const Eigen::Index per = one.numel();
            one.data = rotated.data.segment(i * per, per);
            detail::rotate_batch(one, rotation_matrix(a));
            rotated.data.segment(i * per, per) = one.data;
            targets.data.segment(i * 3, 3) = ssvi_targets<S>(a, 1).data;
          }
        } else {
          const EulerAngles angles = sample_angles(angle_rng);
          detail::rotate_batch(rotated, rotation_matrix(angles));
          targets = ssvi_targets<S>(angles, nb);
        }
        auto z = model.encode(constant(std::move(rotated))).z;
        auto sloss = l1_loss(ssvi_predict(z, *head), constant(std::move(targets)));
        rec.ssvi = static_cast<double>(sloss->value.data[0]);
        if (!std::isfinite(*rec.ssvi))
          throw DivergenceError("ssvi loss diverged at step " + std::to_string(rec.step));
        zero_grads(all_params);
        backward(sloss);
        adam_step(ssvi_params, adam);
      }

      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              t0)
                        .count();
      log.records.push_back(rec);
      progress.global_step += 1;
      progress.epoch = epoch;
      progress.batch_in_epoch = b + 1;
      if (cfg.checkpoint_interval > 0 &&
          progress.global_step % static_cast<std::uint64_t>(cfg.checkpoint_interval) == 0)
        save(progress);
    }
    progress.epoch = epoch + 1;
    progress.batch_in_epoch = 0;
  }
  save(progress);
  return progress;
}

}  // namespace skelrep
