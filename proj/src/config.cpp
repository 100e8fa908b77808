#include "skelrep/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace skelrep {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : obj.items())
    if (!known.count(key)) fail("config: unknown key '" + where + key + "'");
}

template <typename T>
void get_to(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception& e) {
    fail("config: bad value for '" + where + key + "': " + e.what());
  }
}

void parse_dataset(const json& obj, DatasetConfig& d) {
  reject_unknown(obj,
                 {"kind", "path", "classes", "per_class", "m", "t", "sigma", "t_fixed",
                  "normalize", "body_mode", "cache_f32"},
                 "dataset.");
  get_to(obj, "kind", d.kind, "dataset.");
  if (d.kind != "synthetic" && d.kind != "ntu")
    fail("config: dataset.kind must be 'synthetic' or 'ntu'");
  get_to(obj, "path", d.path, "dataset.");
  get_to(obj, "classes", d.synth.classes, "dataset.");
  get_to(obj, "per_class", d.synth.per_class, "dataset.");
  long m = d.synth.joints, t = d.synth.frames, t_fixed = d.t_fixed;
  get_to(obj, "m", m, "dataset.");
  get_to(obj, "t", t, "dataset.");
  get_to(obj, "t_fixed", t_fixed, "dataset.");
  d.synth.joints = m;
  d.synth.frames = t;
  d.t_fixed = t_fixed;
  get_to(obj, "sigma", d.synth.sigma, "dataset.");
  get_to(obj, "normalize", d.normalize, "dataset.");
  get_to(obj, "cache_f32", d.cache_f32, "dataset.");
  if (obj.contains("body_mode")) {
    const std::string mode = obj.at("body_mode").get<std::string>();
    if (mode == "first") d.body_mode = BodyMode::First;
    else if (mode == "all") d.body_mode = BodyMode::All;
    else if (mode == "concat2") d.body_mode = BodyMode::Concat2;
    else fail("config: dataset.body_mode must be first|all|concat2");
  }
}

void parse_model(const json& obj, ModelConfig& m) {
  reject_unknown(obj, {"channels", "kernel_w", "pools", "latent_dim", "latent_relu",
                       "linear_output"},
                 "model.");
  if (obj.contains("channels")) {
    std::vector<long> ch = obj.at("channels").get<std::vector<long>>();
    m.channels.assign(ch.begin(), ch.end());
  }
  long kw = m.kernel_w, latent = m.latent_dim;
  get_to(obj, "kernel_w", kw, "model.");
  get_to(obj, "latent_dim", latent, "model.");
  m.kernel_w = kw;
  m.latent_dim = latent;
  get_to(obj, "latent_relu", m.latent_relu, "model.");
  get_to(obj, "linear_output", m.linear_output, "model.");
  if (obj.contains("pools")) {
    m.pools.clear();
    for (const auto& p : obj.at("pools")) {
      if (!p.is_array() || p.size() != 2) fail("config: model.pools entries must be [h,w] pairs");
      m.pools.emplace_back(p[0].get<long>(), p[1].get<long>());
    }
  }
}

void parse_train(const json& obj, TrainConfig& t) {
  reject_unknown(obj,
                 {"epochs", "batch_size", "lr", "laplacian", "ssvi", "loss_mode", "mu",
                  "grl_lambda", "ssvi_hidden", "per_sequence_angles", "checkpoint_interval"},
                 "train.");
  get_to(obj, "epochs", t.epochs, "train.");
  get_to(obj, "batch_size", t.batch_size, "train.");
  get_to(obj, "lr", t.lr, "train.");
  get_to(obj, "laplacian", t.laplacian, "train.");
  get_to(obj, "ssvi", t.ssvi, "train.");
  get_to(obj, "mu", t.mu, "train.");
  get_to(obj, "grl_lambda", t.grl_lambda, "train.");
  long hidden = t.ssvi_hidden;
  get_to(obj, "ssvi_hidden", hidden, "train.");
  t.ssvi_hidden = hidden;
  get_to(obj, "per_sequence_angles", t.per_sequence_angles, "train.");
  get_to(obj, "checkpoint_interval", t.checkpoint_interval, "train.");
  if (obj.contains("loss_mode")) {
    const std::string mode = obj.at("loss_mode").get<std::string>();
    if (mode == "sequential") t.loss_mode = LossMode::Sequential;
    else if (mode == "weighted") t.loss_mode = LossMode::WeightedSum;
    else fail("config: train.loss_mode must be sequential|weighted");
  }
}

void parse_eval(const json& obj, EvalConfig& e) {
  reject_unknown(obj,
                 {"protocol", "lep_epochs", "lep_lr", "ft_epochs", "ft_lr", "distance",
                  "rotate_test", "rotate_seed"},
                 "eval.");
  get_to(obj, "protocol", e.protocol, "eval.");
  if (e.protocol != "1nn" && e.protocol != "lep" && e.protocol != "finetune" &&
      e.protocol != "supervised")
    fail("config: eval.protocol must be 1nn|lep|finetune|supervised");
  get_to(obj, "lep_epochs", e.lep_epochs, "eval.");
  get_to(obj, "lep_lr", e.lep_lr, "eval.");
  get_to(obj, "ft_epochs", e.ft_epochs, "eval.");
  get_to(obj, "ft_lr", e.ft_lr, "eval.");
  get_to(obj, "rotate_test", e.rotate_test, "eval.");
  get_to(obj, "rotate_seed", e.rotate_seed, "eval.");
  if (obj.contains("distance")) {
    const std::string d = obj.at("distance").get<std::string>();
    if (d == "euclidean") e.distance = Distance::Euclidean;
    else if (d == "cosine") e.distance = Distance::Cosine;
    else fail("config: eval.distance must be euclidean|cosine");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json obj;
  try {
    obj = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(std::string("config: invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) fail("config: top level must be a JSON object");
  reject_unknown(obj, {"seed", "dtype", "out", "dataset", "graph", "model", "train", "eval"}, "");
  RunConfig cfg;
  get_to(obj, "seed", cfg.seed, "");
  get_to(obj, "dtype", cfg.dtype, "");
  if (cfg.dtype != "f64" && cfg.dtype != "f32") fail("config: dtype must be f64 or f32");
  get_to(obj, "out", cfg.out, "");
  get_to(obj, "graph", cfg.graph, "");
  if (obj.contains("dataset")) parse_dataset(obj.at("dataset"), cfg.dataset);
  if (obj.contains("model")) parse_model(obj.at("model"), cfg.model);
  if (obj.contains("train")) parse_train(obj.at("train"), cfg.train);
  if (obj.contains("eval")) parse_eval(obj.at("eval"), cfg.eval);
  cfg.dataset.synth.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  json obj;
  obj["seed"] = cfg.seed;
  obj["dtype"] = cfg.dtype;
  obj["out"] = cfg.out;
  obj["graph"] = cfg.graph;
  obj["dataset"] = {{"kind", cfg.dataset.kind},
                    {"path", cfg.dataset.path},
                    {"classes", cfg.dataset.synth.classes},
                    {"per_class", cfg.dataset.synth.per_class},
                    {"m", cfg.dataset.synth.joints},
                    {"t", cfg.dataset.synth.frames},
                    {"sigma", cfg.dataset.synth.sigma},
                    {"t_fixed", cfg.dataset.t_fixed},
                    {"normalize", cfg.dataset.normalize},
                    {"body_mode", cfg.dataset.body_mode == BodyMode::First    ? "first"
                                  : cfg.dataset.body_mode == BodyMode::All    ? "all"
                                                                              : "concat2"},
                    {"cache_f32", cfg.dataset.cache_f32}};
  json pools = json::array();
  for (const auto& [h, w] : cfg.model.pools) pools.push_back({h, w});
  obj["model"] = {{"channels", cfg.model.channels}, {"kernel_w", cfg.model.kernel_w},
                  {"pools", pools},                 {"latent_dim", cfg.model.latent_dim},
                  {"latent_relu", cfg.model.latent_relu},
                  {"linear_output", cfg.model.linear_output}};
  obj["train"] = {{"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"laplacian", cfg.train.laplacian},
                  {"ssvi", cfg.train.ssvi},
                  {"loss_mode", cfg.train.loss_mode == LossMode::Sequential ? "sequential"
                                                                            : "weighted"},
                  {"mu", cfg.train.mu},
                  {"grl_lambda", cfg.train.grl_lambda},
                  {"ssvi_hidden", cfg.train.ssvi_hidden},
                  {"per_sequence_angles", cfg.train.per_sequence_angles},
                  {"checkpoint_interval", cfg.train.checkpoint_interval}};
  obj["eval"] = {{"protocol", cfg.eval.protocol},
                 {"lep_epochs", cfg.eval.lep_epochs},
                 {"lep_lr", cfg.eval.lep_lr},
                 {"ft_epochs", cfg.eval.ft_epochs},
                 {"ft_lr", cfg.eval.ft_lr},
                 {"distance", cfg.eval.distance == Distance::Euclidean ? "euclidean" : "cosine"},
                 {"rotate_test", cfg.eval.rotate_test},
                 {"rotate_seed", cfg.eval.rotate_seed}};
  return obj.dump(2);
}

}  // namespace skelrep
