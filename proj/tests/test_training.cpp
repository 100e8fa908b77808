#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "skelrep/train.hpp"

using namespace skelrep;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.joints = 6;
  cfg.frames = 16;
  cfg.channels = {4, 6, 8};
  cfg.latent_dim = 16;
  return cfg;
}

std::vector<SkeletonSequence> tiny_data(int per_class = 6, double sigma = 0.05) {
  SynthConfig sc;
  sc.classes = 2;
  sc.per_class = per_class;
  sc.joints = 6;
  sc.frames = 16;
  sc.sigma = sigma;
  sc.seed = 99;
  return synth_dataset(sc).train;
}

struct Run {
  Autoencoder<double> model;
  SsviHead<double> head;
  AdamState<double> adam;
  TrainLog log;

  Run(const TrainConfig& cfg, std::uint64_t init_seed)
      : model(Autoencoder<double>::init(tiny_model(), init_seed)),
        head(SsviHead<double>::init(16, 8, cfg.grl_lambda, init_seed)) {}
};

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("variant flags map onto the optional branches") {
  CHECK(variant_from_name("ae") == Variant::AE);
  CHECK(variant_from_name("ae-l") == Variant::AE_L);
  CHECK(variant_from_name("grae") == Variant::GRAE);
  CHECK(variant_from_name("grae-l") == Variant::GRAE_L);
  CHECK_THROWS(variant_from_name("vae"));

  auto ael = config_for_variant(Variant::AE_L);
  CHECK(ael.laplacian);
  CHECK_FALSE(ael.ssvi);
  auto grae = config_for_variant(Variant::GRAE);
  CHECK_FALSE(grae.laplacian);
  CHECK(grae.ssvi);
  auto grael = config_for_variant(Variant::GRAE_L);
  CHECK(grael.laplacian);
  CHECK(grael.ssvi);
}

TEST_CASE("same seed and config reproduce the log and parameters bitwise") {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 5;
  cfg.laplacian = true;
  cfg.ssvi = true;
  auto data = tiny_data();
  auto graph = chain_graph(6);

  Run a(cfg, 1), b(cfg, 1);
  train<double>(a.model, &a.head, data, &graph, cfg, a.adam, a.log);
  train<double>(b.model, &b.head, data, &graph, cfg, b.adam, b.log);

  REQUIRE(a.log.records.size() == b.log.records.size());
  REQUIRE(a.log.records.size() >= 5);
  for (std::size_t i = 0; i < a.log.records.size(); ++i) {
    CHECK(a.log.records[i].mse == b.log.records[i].mse);
    CHECK(*a.log.records[i].r_skel == *b.log.records[i].r_skel);
    CHECK(*a.log.records[i].ssvi == *b.log.records[i].ssvi);
  }
  for (const auto& [name, p] : a.model.params)
    CHECK(bitwise_equal(p->value, b.model.params.at(name)->value));
}

TEST_CASE("branches off leave no trace in the log") {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  auto data = tiny_data();
  Run r(cfg, 2);
  train<double>(r.model, nullptr, data, nullptr, cfg, r.adam, r.log);
  CHECK(!r.log.records.empty());
  for (const auto& rec : r.log.records) {
    CHECK_FALSE(rec.r_skel.has_value());
    CHECK_FALSE(rec.ssvi.has_value());
  }
}

TEST_CASE("optimizer step counts: sequential 2 per batch, weighted 1, ssvi +1") {
  auto data = tiny_data(6);  // 8 train sequences, batch 4 -> 2 batches/epoch
  auto graph = chain_graph(6);

  TrainConfig seq;
  seq.epochs = 1;
  seq.batch_size = 4;
  seq.laplacian = true;
  Run a(seq, 3);
  train<double>(a.model, nullptr, data, &graph, seq, a.adam, a.log);
  CHECK(a.adam.step == 2 * 2);

  TrainConfig wsum = seq;
  wsum.loss_mode = LossMode::WeightedSum;
  Run b(wsum, 3);
  train<double>(b.model, nullptr, data, &graph, wsum, b.adam, b.log);
  CHECK(b.adam.step == 1 * 2);

  TrainConfig all = seq;
  all.ssvi = true;
  Run c(all, 3);
  train<double>(c.model, &c.head, data, &graph, all, c.adam, c.log);
  CHECK(c.adam.step == 3 * 2);

  TrainConfig mse_only;
  mse_only.epochs = 1;
  mse_only.batch_size = 4;
  Run d(mse_only, 3);
  train<double>(d.model, nullptr, data, nullptr, mse_only, d.adam, d.log);
  CHECK(d.adam.step == 1 * 2);
}

TEST_CASE("the ssvi branch never updates decoder parameters") {
  auto data = tiny_data(8);
  TrainConfig base;
  base.epochs = 1;
  base.batch_size = 100;  // single batch: runs stay aligned through the MSE update
  base.seed = 17;

  Run ae(base, 7);
  train<double>(ae.model, nullptr, data, nullptr, base, ae.adam, ae.log);

  TrainConfig with_ssvi = base;
  with_ssvi.ssvi = true;
  Run grae(with_ssvi, 7);
  train<double>(grae.model, &grae.head, data, nullptr, with_ssvi, grae.adam, grae.log);

  // decoder: bitwise identical to the run without the branch
  for (const auto& [name, p] : ae.model.decoder_params())
    CHECK(bitwise_equal(p->value, grae.model.params.at(name)->value));
  // encoder: moved by the reversed gradients
  bool encoder_differs = false;
  for (const auto& [name, p] : ae.model.encoder_params())
    if (!bitwise_equal(p->value, grae.model.params.at(name)->value)) encoder_differs = true;
  CHECK(encoder_differs);

  // and directly: after an encoder-only forward, decoder leaves carry no grad
  auto x = constant(stack_batch<double>(data, {0, 1}));
  auto z = grae.model.encode(x).z;
  zero_grads(grae.model.params);
  backward(ssvi_loss(z, EulerAngles{1.0, 2.0, 3.0}, grae.head));
  for (const auto& [name, p] : grae.model.decoder_params()) CHECK_FALSE(p->has_grad);
}

TEST_CASE("loss decreases over a short mse-only run") {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.seed = 23;
  auto data = tiny_data(10);
  Run r(cfg, 11);
  train<double>(r.model, nullptr, data, nullptr, cfg, r.adam, r.log);
  CHECK(r.log.epoch_mean_mse(9) < r.log.epoch_mean_mse(0));
}

TEST_CASE("checkpoint round trip is bitwise") {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.laplacian = true;
  auto graph = chain_graph(6);
  auto data = tiny_data();
  Run r(cfg, 13);
  train<double>(r.model, nullptr, data, &graph, cfg, r.adam, r.log);

  ParamMap<double> all = r.model.params;
  auto ck = snapshot(all, r.model.bn_stats, &r.adam, TrainProgress{42, 1, 0, 13});
  std::ostringstream buf1;
  save_checkpoint(buf1, ck);
  std::istringstream in(buf1.str());
  auto back = load_checkpoint<double>(in);
  CHECK(back.progress.global_step == 42);
  CHECK(back.progress.seed == 13);
  CHECK(back.has_adam);
  CHECK(back.adam.step == r.adam.step);
  std::ostringstream buf2;
  save_checkpoint(buf2, back);
  CHECK(buf1.str() == buf2.str());  // save -> load -> save: identical bytes

  // restore into a fresh model: parameters land bit-exact
  auto fresh = Autoencoder<double>::init(tiny_model(), 999);
  restore(back, fresh.params, fresh.bn_stats);
  for (const auto& [name, p] : r.model.params)
    CHECK(bitwise_equal(p->value, fresh.params.at(name)->value));
  for (const auto& [name, st] : r.model.bn_stats) {
    CHECK(bitwise_equal(st.running_mean, fresh.bn_stats.at(name).running_mean));
    CHECK(bitwise_equal(st.running_var, fresh.bn_stats.at(name).running_var));
  }
}

TEST_CASE("resume from a checkpoint equals the uninterrupted run") {
  auto graph = chain_graph(6);
  auto data = tiny_data();

  TrainConfig full;
  full.epochs = 3;
  full.batch_size = 4;
  full.seed = 31;
  full.laplacian = true;  // sequential update mode
  Run straight(full, 19);
  train<double>(straight.model, nullptr, data, &graph, full, straight.adam, straight.log);

  // stop after epoch 1, checkpoint, resume to epoch 3
  const std::string ckpt = temp_path("skelrep_resume_test.ckpt");
  TrainConfig part = full;
  part.epochs = 1;
  part.checkpoint_path = ckpt;
  Run resumed(part, 19);
  auto progress = train<double>(resumed.model, nullptr, data, &graph, part, resumed.adam, resumed.log);
  CHECK(progress.epoch == 1);

  auto ck = load_checkpoint_file<double>(ckpt);
  auto model2 = Autoencoder<double>::init(tiny_model(), 555);
  restore(ck, model2.params, model2.bn_stats);
  AdamState<double> adam2 = ck.adam;
  TrainLog log2;
  TrainConfig rest = full;  // epochs = 3, no checkpointing
  train<double>(model2, nullptr, data, &graph, rest, adam2, log2, ck.progress);

  for (const auto& [name, p] : straight.model.params)
    CHECK(bitwise_equal(p->value, model2.params.at(name)->value));
  // the resumed log covers exactly the remaining steps with matching values
  REQUIRE(resumed.log.records.size() + log2.records.size() == straight.log.records.size());
  for (std::size_t i = 0; i < log2.records.size(); ++i) {
    const auto& cont = log2.records[i];
    const auto& ref = straight.log.records[resumed.log.records.size() + i];
    CHECK(cont.step == ref.step);
    CHECK(cont.mse == ref.mse);
  }
  std::filesystem::remove(ckpt);
}

TEST_CASE("non-finite loss aborts, keeping the last good checkpoint") {
  const std::string ckpt = temp_path("skelrep_diverge_test.ckpt");
  auto data = tiny_data();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.checkpoint_path = ckpt;
  Run r(cfg, 29);
  train<double>(r.model, nullptr, data, nullptr, cfg, r.adam, r.log);
  const auto good = load_checkpoint_file<double>(ckpt);

  // poison the model and continue: the first forward must trip the guard
  r.model.params.at("enc.fc.bias")->value.data[0] =
      std::numeric_limits<double>::quiet_NaN();
  TrainConfig more = cfg;
  more.epochs = 2;
  TrainLog log2;
  CHECK_THROWS_AS(
      train<double>(r.model, nullptr, data, nullptr, more, r.adam, log2, TrainProgress{0, 1, 0, 0}),
      DivergenceError);
  // the checkpoint on disk still holds the pre-divergence state
  const auto after = load_checkpoint_file<double>(ckpt);
  for (const auto& [name, t] : good.params) CHECK(bitwise_equal(t, after.params.at(name)));
  std::filesystem::remove(ckpt);
}

TEST_CASE("preconditions: graph mismatch and empty data") {
  auto data = tiny_data();
  auto wrong_graph = chain_graph(9);
  TrainConfig cfg;
  cfg.laplacian = true;
  Run r(cfg, 31);
  CHECK_THROWS(train<double>(r.model, nullptr, data, &wrong_graph, cfg, r.adam, r.log));
  std::vector<SkeletonSequence> empty;
  TrainConfig plain;
  CHECK_THROWS(train<double>(r.model, nullptr, empty, nullptr, plain, r.adam, r.log));
  TrainConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS(train<double>(r.model, nullptr, data, nullptr, bad, r.adam, r.log));
}
