// skelrep command-line tool: dataset preparation, training of the four
// model variants, evaluation protocols and artifact inspection.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
// divergence.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"

#include "skelrep/cache.hpp"
#include "skelrep/config.hpp"
#include "skelrep/eval.hpp"
#include "skelrep/ntu.hpp"
#include "skelrep/report.hpp"
#include "skelrep/runtime.hpp"
#include "skelrep/train.hpp"

namespace fs = std::filesystem;
using namespace skelrep;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDiverged = 3;

std::string default_out() {
  if (const char* env = std::getenv("SKELREP_OUT"); env && *env) return env;
  return ".";
}

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir = cfg.out.empty() ? default_out() : cfg.out;
  fs::create_directories(dir);
  return dir;
}

// `key=value` positional overrides for prepare --synthetic
void apply_kv_params(const std::vector<std::string>& params, RunConfig& cfg) {
  for (const auto& kv : params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      fail("expected key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    try {
      if (key == "classes") cfg.dataset.synth.classes = std::stoi(value);
      else if (key == "per-class" || key == "per_class") cfg.dataset.synth.per_class = std::stoi(value);
      else if (key == "m") cfg.dataset.synth.joints = std::stol(value);
      else if (key == "t") cfg.dataset.synth.frames = std::stol(value);
      else if (key == "sigma") cfg.dataset.synth.sigma = std::stod(value);
      else if (key == "seed") cfg.dataset.synth.seed = std::stoull(value);
      else fail("unknown synthetic parameter '" + key + "'");
    } catch (const std::invalid_argument& e) {
      throw;
    } catch (const std::exception&) {
      fail("bad value for synthetic parameter '" + key + "': " + value);
    }
  }
}

// The canonical NTU protocol splits, applied when metadata is present.
bool ntu_in_train(const SkeletonSequence& s, const std::string& split) {
  static const std::set<int> xsub_train = {1,  2,  4,  5,  8,  9,  13, 14, 15, 16,
                                           17, 18, 19, 25, 27, 28, 31, 34, 35, 38};
  if (split == "xsub") return s.subject && xsub_train.count(*s.subject) > 0;
  if (split == "xview") return s.camera && *s.camera != 1;
  if (split == "xsetup") return s.setup && *s.setup % 2 == 0;
  return true;  // "all": everything goes to train
}

DatasetSplit prepare_ntu(const RunConfig& cfg, const std::string& split_rule) {
  const fs::path src = cfg.dataset.path;
  std::vector<fs::path> files;
  if (fs::is_directory(src)) {
    for (const auto& entry : fs::directory_iterator(src))
      if (entry.path().extension() == ".skeleton") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
  } else if (fs::exists(src)) {
    files.push_back(src);
  } else {
    fail("ntu source not found: " + src.string());
  }
  if (files.empty()) fail("no .skeleton files under " + src.string());

  DatasetSplit split;
  split.kind = split_rule == "xview" ? SplitKind::CrossView
               : split_rule == "xsetup" ? SplitKind::CrossSetup
                                        : SplitKind::CrossSubject;
  for (const auto& file : files) {
    auto bodies = parse_ntu_skeleton_file(file.string());
    std::vector<SkeletonSequence> picked;
    switch (cfg.dataset.body_mode) {
      case BodyMode::First:
        picked.push_back(std::move(bodies.front()));
        break;
      case BodyMode::All:
        picked = std::move(bodies);
        break;
      case BodyMode::Concat2: {
        // two bodies side by side along the joint axis (m -> 2m); a missing
        // second body stays zero
        const auto& a = bodies[0];
        SkeletonSequence merged = make_sequence(2 * a.joints(), a.frames());
        merged.label = a.label;
        merged.subject = a.subject;
        merged.camera = a.camera;
        merged.setup = a.setup;
        for (Eigen::Index d = 0; d < 3; ++d)
          for (Eigen::Index j = 0; j < a.joints(); ++j)
            for (Eigen::Index t = 0; t < a.frames(); ++t) {
              merged.at(d, j, t) = a.at(d, j, t);
              if (bodies.size() > 1 && t < bodies[1].frames())
                merged.at(d, j + a.joints(), t) = bodies[1].at(d, j, t);
            }
        merged.has_missing_joints = bodies.size() < 2;
        picked.push_back(std::move(merged));
        break;
      }
    }
    for (auto& seq : picked) {
      seq = resample_temporal(seq, cfg.dataset.t_fixed);
      if (cfg.dataset.normalize) seq = normalize(seq);
      (ntu_in_train(seq, split_rule) ? split.train : split.test).push_back(std::move(seq));
    }
  }
  int max_label = -1;
  for (const auto* v : {&split.train, &split.test})
    for (const auto& s : *v) max_label = std::max(max_label, s.label.value_or(-1));
  split.num_classes = max_label + 1;
  return split;
}

int cmd_prepare(const RunConfig& cfg, const std::vector<std::string>& kv_params,
                bool synthetic, const std::string& split_rule, std::string cache_path) {
  RunConfig run = cfg;
  if (synthetic) run.dataset.kind = "synthetic";
  apply_kv_params(kv_params, run);

  DatasetSplit split;
  std::string source;
  if (run.dataset.kind == "synthetic") {
    split = synth_dataset(run.dataset.synth);
    source = "synthetic";
  } else {
    split = prepare_ntu(run, split_rule);
    source = run.dataset.path;
  }
  const fs::path dir = out_dir(run);
  if (cache_path.empty()) cache_path = (dir / "dataset.cache").string();
  write_cache_file(cache_path, split, run.dataset.cache_f32);
  const CacheStats stats = cache_stats(split);
  write_manifest_file((dir / "manifest.json").string(), stats, split, source);
  std::cout << manifest_to_json(stats, split, source) << "\n";
  std::cout << "cache written to " << cache_path << "\n";
  return kExitOk;
}

SkeletonGraph resolve_graph(const RunConfig& cfg, Eigen::Index m) {
  if (cfg.graph.empty()) {
    if (m == 25) return ntu25_graph();
    return chain_graph(static_cast<int>(m));
  }
  if (fs::exists(cfg.graph) && fs::is_regular_file(cfg.graph)) {
    std::ifstream in(cfg.graph);
    return build_graph(static_cast<int>(m), parse_bone_list(in));
  }
  return graph_by_name(cfg.graph);
}

template <typename S>
int run_train(const RunConfig& cfg, const std::string& cache_path, const std::string& resume) {
  auto split = read_cache_file(cache_path);
  if (split.train.empty()) fail("training split is empty");
  const Eigen::Index m = split.train.front().joints();
  const Eigen::Index t = split.train.front().frames();

  ModelConfig mc = cfg.model;
  mc.joints = m;
  mc.frames = t;
  auto model = Autoencoder<S>::init(mc, cfg.seed);
  auto head = SsviHead<S>::init(mc.latent_dim, cfg.train.ssvi_hidden,
                                static_cast<S>(cfg.train.grl_lambda), cfg.seed);

  SkeletonGraph graph;
  if (cfg.train.laplacian) graph = resolve_graph(cfg, m);

  const fs::path dir = out_dir(cfg);
  TrainConfig tc = cfg.train;
  tc.checkpoint_path = (dir / "checkpoint.bin").string();

  AdamState<S> adam;
  TrainProgress start;
  if (!resume.empty()) {
    auto ck = load_checkpoint_file<S>(resume);
    ParamMap<S> all = model.params;
    head.collect(all);
    // restore wants every checkpoint entry known; head params are present
    // only when the checkpoint was written by an ssvi run
    for (const auto& [name, tckpt] : ck.params) {
      auto it = all.find(name);
      if (it == all.end()) fail("checkpoint: unknown parameter '" + name + "'");
      if (!it->second->value.same_shape(tckpt))
        fail("checkpoint: shape mismatch for '" + name + "'");
      it->second->value = tckpt;
    }
    restore(Checkpoint<S>{ck.progress, {}, ck.buffers, {}, false}, model.params,
            model.bn_stats);
    if (ck.has_adam) adam = ck.adam;
    start = ck.progress;
  }

  TrainLog log;
  int exit_code = kExitOk;
  try {
    train(model, &head, split.train, cfg.train.laplacian ? &graph : nullptr, tc, adam, log,
          start);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    exit_code = kExitDiverged;
  }
  write_train_log_file((dir / "train_log.csv").string(), log);
  {
    std::ofstream echo(dir / "run_config.json");
    echo << run_config_to_json(cfg) << "\n";
  }
  if (exit_code == kExitOk) {
    std::cout << "trained " << log.records.size() << " steps; checkpoint at "
              << tc.checkpoint_path << "\n";
    if (!log.records.empty()) {
      const int last_epoch = log.records.back().epoch;
      std::cout << "final epoch mean mse " << std::setprecision(6)
                << log.epoch_mean_mse(last_epoch) << "\n";
    }
  }
  return exit_code;
}

template <typename S>
int run_eval(const RunConfig& cfg, const std::string& cache_path,
             const std::string& checkpoint_path) {
  auto split = read_cache_file(cache_path);
  if (split.train.empty()) fail("evaluation needs a training split");

  const Eigen::Index m = split.train.front().joints();
  const Eigen::Index t = split.train.front().frames();
  ModelConfig mc = cfg.model;
  mc.joints = m;
  mc.frames = t;

  auto test_seqs = split.test;
  if (cfg.eval.rotate_test) {
    auto rng = Rng::stream(cfg.eval.rotate_seed, "rotate-test");
    for (auto& s : test_seqs) s = rotate_sequence(s, rotation_matrix(sample_angles(rng)));
  }

  EvalReport report;
  if (cfg.eval.protocol == "supervised") {
    report = supervised_e2e<S>(mc, split.train, test_seqs, cfg.eval.ft_epochs, cfg.eval.ft_lr,
                               cfg.seed);
  } else {
    if (checkpoint_path.empty()) fail("this protocol needs --checkpoint");
    auto model = Autoencoder<S>::init(mc, cfg.seed);
    auto head = SsviHead<S>::init(mc.latent_dim, cfg.train.ssvi_hidden,
                                  static_cast<S>(cfg.train.grl_lambda), cfg.seed);
    auto ck = load_checkpoint_file<S>(checkpoint_path);
    ParamMap<S> all = model.params;
    head.collect(all);
    for (const auto& [name, tckpt] : ck.params) {
      auto it = all.find(name);
      if (it == all.end()) fail("checkpoint: unknown parameter '" + name + "'");
      it->second->value = tckpt;
    }
    restore(Checkpoint<S>{ck.progress, {}, ck.buffers, {}, false}, model.params,
            model.bn_stats);

    if (cfg.eval.protocol == "finetune") {
      report = fine_tune(model, split.train, test_seqs, cfg.eval.ft_epochs, cfg.eval.ft_lr,
                         cfg.seed);
    } else {
      auto train_bank = extract_features(model, split.train, "train");
      auto test_bank = extract_features(model, test_seqs, "test");
      if (cfg.eval.protocol == "1nn")
        report = knn1_eval(train_bank, test_bank, cfg.eval.distance);
      else
        report = linear_eval(train_bank, test_bank, cfg.eval.lep_epochs, cfg.eval.lep_lr,
                             cfg.seed);
    }
  }

  const fs::path dir = out_dir(cfg);
  const std::string stem = "report-" + cfg.eval.protocol;
  write_eval_report_file((dir / (stem + ".json")).string(), report);
  {
    std::ofstream grid(dir / (stem + "-confusion.txt"));
    write_confusion_grid(grid, report);
  }
  std::cout << eval_report_to_json(report) << "\n";
  return kExitOk;
}

void print_graph(std::ostream& os, const SkeletonGraph& g) {
  auto print_matrix = [&](const char* name, const Eigen::MatrixXd& mat) {
    os << name << " =\n";
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      for (Eigen::Index j = 0; j < mat.cols(); ++j) os << std::setw(4) << mat(i, j);
      os << "\n";
    }
  };
  os << "joints m = " << g.m << ", bones = " << g.edges.size() << "\n";
  print_matrix("W", g.W);
  print_matrix("D", g.D);
  print_matrix("L", g.L);
  os << "row sums of L:";
  for (Eigen::Index i = 0; i < g.L.rows(); ++i) os << " " << g.L.row(i).sum();
  os << "\ntrace(L) = " << g.L.trace() << "\n";
}

int cmd_inspect(const std::string& graph_name, const std::string& checkpoint_path,
                const std::string& cache_path) {
  if (!graph_name.empty()) {
    print_graph(std::cout, graph_by_name(graph_name));
    return kExitOk;
  }
  if (!checkpoint_path.empty()) {
    auto ck = load_checkpoint_file<double>(checkpoint_path);
    std::cout << "checkpoint: step " << ck.progress.global_step << ", epoch "
              << ck.progress.epoch << ", seed " << ck.progress.seed << "\n";
    Eigen::Index total = 0;
    for (const auto& [name, tensor] : ck.params) {
      std::cout << "  " << std::left << std::setw(28) << name << " " << shape_str(tensor.shape)
                << "\n";
      total += tensor.numel();
    }
    for (const auto& [name, tensor] : ck.buffers)
      std::cout << "  " << std::left << std::setw(28) << name << " " << shape_str(tensor.shape)
                << " (buffer)\n";
    std::cout << "total parameters: " << total << "\n";
    if (ck.has_adam) std::cout << "adam state: step " << ck.adam.step << "\n";
    return kExitOk;
  }
  if (!cache_path.empty()) {
    auto split = read_cache_file(cache_path);
    const CacheStats stats = cache_stats(split);
    std::cout << manifest_to_json(stats, split, cache_path) << "\n";
    return kExitOk;
  }
  fail("inspect: pass one of --graph, --checkpoint, --cache");
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"skeleton-sequence representation learning"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "JSON run-config file; flags override it");

  // global overrides, applied over the config file when given
  std::uint64_t seed = 0;
  std::string out, dtype;
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  auto* out_opt = app.add_option("--out", out, "output directory (default $SKELREP_OUT or .)");
  auto* dtype_opt = app.add_option("--dtype", dtype, "f64 (default) or f32")
                        ->check(CLI::IsMember({"f64", "f32"}));

  // prepare
  auto* prepare = app.add_subcommand("prepare", "build a dataset cache");
  bool synthetic = false;
  std::string ntu_path, split_rule = "all", cache_out;
  std::vector<std::string> kv_params;
  prepare->add_flag("--synthetic", synthetic, "generate the labeled synthetic dataset");
  prepare->add_option("--ntu", ntu_path, "NTU .skeleton file or directory");
  prepare->add_option("--split", split_rule, "ntu split rule: xsub|xview|xsetup|all")
      ->check(CLI::IsMember({"xsub", "xview", "xsetup", "all"}));
  prepare->add_option("--cache", cache_out, "cache output path (default <out>/dataset.cache)");
  prepare->add_option("params", kv_params, "synthetic key=value overrides, e.g. classes=4");
  Eigen::Index t_fixed = 0;
  prepare->add_option("--t-fixed", t_fixed, "temporal resampling target for ntu data");
  bool no_normalize = false;
  prepare->add_flag("--no-normalize", no_normalize, "skip pose normalization for ntu data");
  std::string body_mode;
  prepare->add_option("--body-mode", body_mode, "first|all|concat2")
      ->check(CLI::IsMember({"first", "all", "concat2"}));
  bool f32_payload = false;
  prepare->add_flag("--f32-payload", f32_payload, "store cache coordinates as f32");

  // train
  auto* train_cmd = app.add_subcommand("train", "train one of the four variants");
  std::string cache_path, variant = "ae", resume, ssvi_flag, loss_mode;
  train_cmd->add_option("--cache", cache_path, "dataset cache")->required();
  train_cmd->add_option("--variant", variant, "ae|ae-l|grae|grae-l")
      ->check(CLI::IsMember({"ae", "ae-l", "grae", "grae-l"}));
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  int epochs = 0, batch_size = 0, ckpt_interval = -1;
  double lr = 0, grl_lambda = 0, mu = -1;
  Eigen::Index ssvi_hidden = 0, latent_dim = 0;
  std::string graph_name;
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs);
  auto* batch_opt = train_cmd->add_option("--batch-size", batch_size);
  auto* lr_opt = train_cmd->add_option("--lr", lr);
  auto* graph_opt = train_cmd->add_option("--graph", graph_name, "ntu25, chain<N>, or bone file");
  auto* ssvi_opt = train_cmd->add_option("--ssvi", ssvi_flag, "on|off (overrides the variant)")
                       ->check(CLI::IsMember({"on", "off"}));
  auto* lambda_opt = train_cmd->add_option("--grl-lambda", grl_lambda, "gradient reversal strength");
  auto* hidden_opt = train_cmd->add_option("--ssvi-hidden", ssvi_hidden, "regressor hidden width");
  auto* latent_opt = train_cmd->add_option("--latent-dim", latent_dim);
  auto* mode_opt = train_cmd->add_option("--loss-mode", loss_mode, "sequential|weighted")
                       ->check(CLI::IsMember({"sequential", "weighted"}));
  auto* mu_opt = train_cmd->add_option("--mu", mu, "R_skel weight in weighted mode");
  auto* interval_opt = train_cmd->add_option("--checkpoint-interval", ckpt_interval,
                                             "steps between checkpoints (0: final only)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "run an evaluation protocol");
  std::string eval_cache, eval_ckpt, protocol = "1nn", distance;
  eval_cmd->add_option("--cache", eval_cache, "dataset cache")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "trained model checkpoint");
  eval_cmd->add_option("--protocol", protocol, "1nn|lep|finetune|supervised")
      ->check(CLI::IsMember({"1nn", "lep", "finetune", "supervised"}));
  bool rotate_test = false;
  eval_cmd->add_flag("--rotate-test", rotate_test, "randomly rotate each test sequence");
  auto* dist_opt = eval_cmd->add_option("--distance", distance, "euclidean|cosine")
                       ->check(CLI::IsMember({"euclidean", "cosine"}));
  int lep_epochs = 0, ft_epochs = 0;
  double lep_lr = 0, ft_lr = 0;
  auto* lep_epochs_opt = eval_cmd->add_option("--lep-epochs", lep_epochs);
  auto* lep_lr_opt = eval_cmd->add_option("--lep-lr", lep_lr);
  auto* ft_epochs_opt = eval_cmd->add_option("--ft-epochs", ft_epochs);
  auto* ft_lr_opt = eval_cmd->add_option("--ft-lr", ft_lr);
  auto* eval_latent_opt = eval_cmd->add_option("--latent-dim", latent_dim);
  std::uint64_t rotate_seed = 0;
  auto* rotate_seed_opt = eval_cmd->add_option("--rotate-seed", rotate_seed);

  // inspect
  auto* inspect = app.add_subcommand("inspect", "dump artifacts in readable form");
  std::string ins_graph, ins_ckpt, ins_cache;
  inspect->add_option("--graph", ins_graph, "built-in topology name");
  inspect->add_option("--checkpoint", ins_ckpt, "checkpoint path");
  inspect->add_option("--cache", ins_cache, "dataset cache path");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (seed_opt->count()) {
      cfg.seed = seed;
      cfg.train.seed = seed;
      cfg.dataset.synth.seed = seed;
    }
    if (out_opt->count()) cfg.out = out;
    if (dtype_opt->count()) cfg.dtype = dtype;

    if (*prepare) {
      if (!ntu_path.empty()) {
        cfg.dataset.kind = "ntu";
        cfg.dataset.path = ntu_path;
      }
      if (t_fixed > 0) cfg.dataset.t_fixed = t_fixed;
      if (no_normalize) cfg.dataset.normalize = false;
      if (body_mode == "first") cfg.dataset.body_mode = BodyMode::First;
      else if (body_mode == "all") cfg.dataset.body_mode = BodyMode::All;
      else if (body_mode == "concat2") cfg.dataset.body_mode = BodyMode::Concat2;
      if (f32_payload) cfg.dataset.cache_f32 = true;
      if (!synthetic && ntu_path.empty() && cfg.dataset.kind != "ntu") synthetic = true;
      return cmd_prepare(cfg, kv_params, synthetic, split_rule, cache_out);
    }

    if (*train_cmd) {
      cfg.train = config_for_variant(variant_from_name(variant), cfg.train);
      if (epochs_opt->count()) cfg.train.epochs = epochs;
      if (batch_opt->count()) cfg.train.batch_size = batch_size;
      if (lr_opt->count()) cfg.train.lr = lr;
      if (graph_opt->count()) cfg.graph = graph_name;
      if (ssvi_opt->count()) cfg.train.ssvi = (ssvi_flag == "on");
      if (lambda_opt->count()) cfg.train.grl_lambda = grl_lambda;
      if (hidden_opt->count()) cfg.train.ssvi_hidden = ssvi_hidden;
      if (latent_opt->count()) cfg.model.latent_dim = latent_dim;
      if (mode_opt->count())
        cfg.train.loss_mode =
            loss_mode == "weighted" ? LossMode::WeightedSum : LossMode::Sequential;
      if (mu_opt->count()) cfg.train.mu = mu;
      if (interval_opt->count()) cfg.train.checkpoint_interval = ckpt_interval;
      return cfg.dtype == "f32" ? run_train<float>(cfg, cache_path, resume)
                                : run_train<double>(cfg, cache_path, resume);
    }

    if (*eval_cmd) {
      cfg.eval.protocol = protocol;
      cfg.eval.rotate_test = rotate_test;
      if (dist_opt->count())
        cfg.eval.distance = distance == "cosine" ? Distance::Cosine : Distance::Euclidean;
      if (lep_epochs_opt->count()) cfg.eval.lep_epochs = lep_epochs;
      if (lep_lr_opt->count()) cfg.eval.lep_lr = lep_lr;
      if (ft_epochs_opt->count()) cfg.eval.ft_epochs = ft_epochs;
      if (ft_lr_opt->count()) cfg.eval.ft_lr = ft_lr;
      if (eval_latent_opt->count()) cfg.model.latent_dim = latent_dim;
      if (rotate_seed_opt->count()) cfg.eval.rotate_seed = rotate_seed;
      if (protocol != "supervised" && eval_ckpt.empty())
        fail("this protocol needs --checkpoint");
      return cfg.dtype == "f32" ? run_eval<float>(cfg, eval_cache, eval_ckpt)
                                : run_eval<double>(cfg, eval_cache, eval_ckpt);
    }

    if (*inspect) return cmd_inspect(ins_graph, ins_ckpt, ins_cache);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
