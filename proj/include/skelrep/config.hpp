#pragma once

// Run configuration: one JSON document (or defaults) merged with CLI flag
// overrides. Unknown keys are rejected before any work begins.

#include <string>

#include "skelrep/eval.hpp"
#include "skelrep/model.hpp"
#include "skelrep/synth.hpp"
#include "skelrep/train.hpp"

namespace skelrep {

enum class BodyMode { First, All, Concat2 };

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | ntu
  std::string path;                // ntu: directory or single .skeleton file
  SynthConfig synth;
  Eigen::Index t_fixed = 64;       // temporal resampling target for ntu data
  bool normalize = true;           // ntu only; synthetic data is generated normalized
  BodyMode body_mode = BodyMode::First;
  bool cache_f32 = false;
};

struct EvalConfig {
  std::string protocol = "1nn";  // 1nn | lep | finetune | supervised
  int lep_epochs = 300;
  double lep_lr = 1e-3;
  int ft_epochs = 100;   // fine-tuning / supervised regime
  double ft_lr = 1e-3;
  Distance distance = Distance::Euclidean;
  bool rotate_test = false;  // randomly rotate each test sequence before eval
  std::uint64_t rotate_seed = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string dtype = "f64";  // f64 | f32
  std::string out;            // output directory; SKELREP_OUT or "." when empty
  DatasetConfig dataset;
  std::string graph;  // "ntu25", "chain<N>", a bone-list file path, or "" for auto
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
};

// Parses and validates a JSON document; throws std::invalid_argument naming
// the first unknown or ill-typed key.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Serialized form of the active config, written next to run outputs.
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace skelrep
