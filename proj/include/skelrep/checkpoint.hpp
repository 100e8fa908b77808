#pragma once

// Parameter checkpoint container: format version, training progress
// counters, every named parameter and buffer as shape + little-endian
// payload, and the Adam state. The write order is the (sorted) parameter
// name order, so saving a reloaded checkpoint reproduces identical bytes.

#include <fstream>
#include <map>
#include <string>

#include "skelrep/adam.hpp"
#include "skelrep/binio.hpp"
#include "skelrep/nn.hpp"

namespace skelrep {

namespace detail {
constexpr char kCkptMagic[9] = "SKELCKPT";
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace detail

struct TrainProgress {
  std::uint64_t global_step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch_in_epoch = 0;  // next batch to run within `epoch`
  std::uint64_t seed = 0;
};

template <typename S>
struct Checkpoint {
  TrainProgress progress;
  std::map<std::string, TensorT<S>> params;
  std::map<std::string, TensorT<S>> buffers;  // batchnorm running stats
  AdamState<S> adam;
  bool has_adam = false;
};

template <typename S>
inline void save_checkpoint(std::ostream& out, const Checkpoint<S>& ck) {
  using namespace binio;
  write_magic(out, detail::kCkptMagic);
  write_raw<std::uint32_t>(out, detail::kCkptVersion);
  write_raw<std::uint8_t>(out, sizeof(S) == 8 ? kF64 : kF32);
  write_raw<std::uint64_t>(out, ck.progress.global_step);
  write_raw<std::uint64_t>(out, ck.progress.epoch);
  write_raw<std::uint64_t>(out, ck.progress.batch_in_epoch);
  write_raw<std::uint64_t>(out, ck.progress.seed);

  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(ck.params.size()));
  for (const auto& [name, t] : ck.params) {
    write_string(out, name);
    write_tensor(out, t);
  }
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(ck.buffers.size()));
  for (const auto& [name, t] : ck.buffers) {
    write_string(out, name);
    write_tensor(out, t);
  }
  write_raw<std::uint8_t>(out, ck.has_adam ? 1 : 0);
  if (ck.has_adam) {
    write_raw<std::uint64_t>(out, ck.adam.step);
    write_raw<double>(out, static_cast<double>(ck.adam.lr));
    write_raw<double>(out, static_cast<double>(ck.adam.beta1));
    write_raw<double>(out, static_cast<double>(ck.adam.beta2));
    write_raw<double>(out, static_cast<double>(ck.adam.eps));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(ck.adam.slots.size()));
    for (const auto& [name, slot] : ck.adam.slots) {
      write_string(out, name);
      write_tensor(out, slot.m);
      write_tensor(out, slot.v);
    }
  }
}

template <typename S>
inline Checkpoint<S> load_checkpoint(std::istream& in) {
  using namespace binio;
  expect_magic(in, detail::kCkptMagic, "checkpoint");
  const auto version = read_raw<std::uint32_t>(in);
  if (version != detail::kCkptVersion)
    fail("checkpoint: unsupported format version " + std::to_string(version));
  const auto dtype = read_raw<std::uint8_t>(in);
  if (dtype != (sizeof(S) == 8 ? kF64 : kF32))
    fail("checkpoint: dtype tag " + std::to_string(dtype) +
         " does not match the configured scalar type");
  Checkpoint<S> ck;
  ck.progress.global_step = read_raw<std::uint64_t>(in);
  ck.progress.epoch = read_raw<std::uint64_t>(in);
  ck.progress.batch_in_epoch = read_raw<std::uint64_t>(in);
  ck.progress.seed = read_raw<std::uint64_t>(in);

  const auto n_params = read_raw<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = read_string(in);
    ck.params.emplace(std::move(name), read_tensor<S>(in, "checkpoint parameter"));
  }
  const auto n_buffers = read_raw<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_buffers; ++i) {
    std::string name = read_string(in);
    ck.buffers.emplace(std::move(name), read_tensor<S>(in, "checkpoint buffer"));
  }
  ck.has_adam = read_raw<std::uint8_t>(in) != 0;
  if (ck.has_adam) {
    ck.adam.step = read_raw<std::uint64_t>(in);
    ck.adam.lr = static_cast<S>(read_raw<double>(in));
    ck.adam.beta1 = static_cast<S>(read_raw<double>(in));
    ck.adam.beta2 = static_cast<S>(read_raw<double>(in));
    ck.adam.eps = static_cast<S>(read_raw<double>(in));
    const auto n_slots = read_raw<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_slots; ++i) {
      std::string name = read_string(in);
      auto m = read_tensor<S>(in, "adam first moment");
      auto v = read_tensor<S>(in, "adam second moment");
      ck.adam.slots.emplace(std::move(name),
                            typename AdamState<S>::Slot{std::move(m), std::move(v)});
    }
  }
  if (!in) fail("checkpoint: truncated file");
  return ck;
}

template <typename S>
inline void save_checkpoint_file(const std::string& path, const Checkpoint<S>& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open checkpoint for writing: " + path);
  save_checkpoint(out, ck);
  if (!out) fail("failed writing checkpoint: " + path);
}

template <typename S>
inline Checkpoint<S> load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint: " + path);
  return load_checkpoint<S>(in);
}

// Bridging helpers between live models and checkpoints.

template <typename S>
inline Checkpoint<S> snapshot(const ParamMap<S>& params,
                              const std::map<std::string, BnStats<S>>& bn_stats,
                              const AdamState<S>* adam, TrainProgress progress) {
  Checkpoint<S> ck;
  ck.progress = progress;
  for (const auto& [name, p] : params) ck.params.emplace(name, p->value);
  for (const auto& [name, st] : bn_stats) {
    ck.buffers.emplace(name + ".running_mean", st.running_mean);
    ck.buffers.emplace(name + ".running_var", st.running_var);
  }
  if (adam) {
    ck.adam = *adam;
    ck.has_adam = true;
  }
  return ck;
}

// Overwrites parameter values and batchnorm stats in place; every checkpoint
// entry must match an existing name and shape.
template <typename S>
inline void restore(const Checkpoint<S>& ck, ParamMap<S>& params,
                    std::map<std::string, BnStats<S>>& bn_stats) {
  for (const auto& [name, t] : ck.params) {
    auto it = params.find(name);
    if (it == params.end()) fail("checkpoint: unknown parameter '" + name + "'");
    if (!it->second->value.same_shape(t))
      fail("checkpoint: parameter '" + name + "' has shape " + shape_str(t.shape) +
           ", model expects " + shape_str(it->second->value.shape));
    it->second->value = t;
  }
  for (auto& [name, st] : bn_stats) {
    auto mi = ck.buffers.find(name + ".running_mean");
    auto vi = ck.buffers.find(name + ".running_var");
    if (mi == ck.buffers.end() || vi == ck.buffers.end())
      fail("checkpoint: missing running stats for '" + name + "'");
    st.running_mean = mi->second;
    st.running_var = vi->second;
  }
}

}  // namespace skelrep
