#include "doctest.h"

#include <Eigen/QR>

#include "skelrep/eval.hpp"
#include "skelrep/report.hpp"

using namespace skelrep;

namespace {

FeatureBank random_bank(Eigen::Index n, Eigen::Index dim, int classes, std::uint64_t salt) {
  auto rng = Rng::stream(0xeba1, "bank", salt);
  FeatureBank bank;
  bank.features.resize(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    bank.labels.push_back(label);
    for (Eigen::Index f = 0; f < dim; ++f)
      bank.features(i, f) = rng.gaussian() + 3.0 * label;  // mild class structure
  }
  return bank;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.joints = 6;
  cfg.frames = 16;
  cfg.channels = {4, 6, 8};
  cfg.latent_dim = 16;
  return cfg;
}

DatasetSplit tiny_split(double sigma = 0.02) {
  SynthConfig sc;
  sc.classes = 3;
  sc.per_class = 10;
  sc.joints = 6;
  sc.frames = 16;
  sc.sigma = sigma;
  sc.seed = 77;
  return synth_dataset(sc);
}

}  // namespace

TEST_CASE("knn1: test bank equal to train bank classifies itself perfectly") {
  auto bank = random_bank(30, 8, 3, 1);
  auto report = knn1_eval(bank, bank);
  CHECK(report.accuracy == 1.0);
  CHECK(report.confusion.trace() == 30);
}

TEST_CASE("knn1: two-point geometry") {
  FeatureBank train;
  train.features.resize(2, 2);
  train.features << 0, 0, 10, 10;
  train.labels = {0, 1};  // A at origin, B far away
  FeatureBank test;
  test.features.resize(1, 2);
  test.features << 1, 1;
  test.labels = {0};
  auto report = knn1_eval(train, test);
  CHECK(report.accuracy == 1.0);
  CHECK(report.confusion(0, 0) == 1);
}

TEST_CASE("knn1 matches an exhaustive distance-scan oracle on 200 points") {
  auto train = random_bank(200, 6, 4, 2);
  auto test = random_bank(100, 6, 4, 3);
  auto report = knn1_eval(train, test);

  // independent O(N^2) oracle with the same tie rule
  int agree = 0;
  std::vector<int> oracle_pred;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index j = 0; j < train.size(); ++j) {
      double d = 0;
      for (Eigen::Index f = 0; f < 6; ++f) {
        const double diff = train.features(j, f) - test.features(i, f);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    oracle_pred.push_back(train.labels[static_cast<std::size_t>(arg)]);
  }
  auto oracle_report = make_report("1nn", test.labels, oracle_pred, 4);
  CHECK(report.accuracy == oracle_report.accuracy);
  CHECK((report.confusion - oracle_report.confusion).cwiseAbs().maxCoeff() == 0);
  (void)agree;
}

TEST_CASE("knn1: tie breaks to the lowest train index") {
  FeatureBank train;
  train.features.resize(3, 1);
  train.features << 5.0, 5.0, 5.0;  // all equidistant
  train.labels = {2, 0, 1};
  FeatureBank test;
  test.features.resize(1, 1);
  test.features << 5.0;
  test.labels = {2};
  CHECK(knn1_eval(train, test).accuracy == 1.0);  // index 0 wins, label 2
}

TEST_CASE("knn1 errors and invariants") {
  FeatureBank empty;
  empty.features.resize(0, 4);
  auto bank = random_bank(10, 4, 2, 4);
  CHECK_THROWS(knn1_eval(empty, bank));

  // invariant to a shared isometry
  auto train = random_bank(60, 5, 3, 5);
  auto test = random_bank(40, 5, 3, 6);
  auto base = knn1_eval(train, test);
  auto rng = Rng::stream(7, "iso");
  Eigen::MatrixXd g(5, 5);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) g(i, j) = rng.gaussian();
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  FeatureBank train_rot = train, test_rot = test;
  train_rot.features = train.features * q;
  test_rot.features = test.features * q;
  auto rotated = knn1_eval(train_rot, test_rot);
  CHECK(base.accuracy == rotated.accuracy);
  CHECK((base.confusion - rotated.confusion).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("report identities: trace over total, row sums") {
  auto train = random_bank(50, 4, 3, 8);
  auto test = random_bank(33, 4, 3, 9);
  auto r = knn1_eval(train, test);
  CHECK(r.accuracy == static_cast<double>(r.confusion.trace()) / r.n_test);
  std::vector<int> counts(3, 0);
  for (int l : test.labels) counts[static_cast<std::size_t>(l)]++;
  for (int c = 0; c < 3; ++c) CHECK(r.confusion.row(c).sum() == counts[static_cast<std::size_t>(c)]);
}

TEST_CASE("linear_eval separates a linearly separable fixture") {
  auto rng = Rng::stream(11, "sep");
  FeatureBank train, test;
  train.features.resize(40, 2);
  test.features.resize(20, 2);
  for (int i = 0; i < 40; ++i) {
    const int label = i % 2;
    train.labels.push_back(label);
    train.features(i, 0) = rng.gaussian() * 0.3 + (label ? 4.0 : -4.0);
    train.features(i, 1) = rng.gaussian() * 0.3;
  }
  for (int i = 0; i < 20; ++i) {
    const int label = i % 2;
    test.labels.push_back(label);
    test.features(i, 0) = rng.gaussian() * 0.3 + (label ? 4.0 : -4.0);
    test.features(i, 1) = rng.gaussian() * 0.3;
  }
  auto report = linear_eval(train, test, 200, 1e-2, 1);
  CHECK(report.accuracy == 1.0);
}

TEST_CASE("linear_eval is deterministic given the seed") {
  auto train = random_bank(60, 5, 3, 12);
  auto test = random_bank(30, 5, 3, 13);
  auto a = linear_eval(train, test, 50, 1e-3, 42);
  auto b = linear_eval(train, test, 50, 1e-3, 42);
  CHECK(a.accuracy == b.accuracy);
  CHECK((a.confusion - b.confusion).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("linear_eval rejects a class missing from the train labels") {
  auto train = random_bank(20, 4, 2, 14);  // labels 0 and 1 only
  auto test = random_bank(9, 4, 3, 15);    // labels include 2
  CHECK_THROWS_WITH_AS(linear_eval(train, test, 10, 1e-3, 0), doctest::Contains("class 2"),
                       std::invalid_argument);
}

TEST_CASE("lep on frozen random features still meets the chance floor") {
  auto model = Autoencoder<double>::init(tiny_model(), 31);  // untrained encoder
  auto split = tiny_split();
  auto train_bank = extract_features(model, split.train, "train");
  auto test_bank = extract_features(model, split.test, "test");
  auto report = linear_eval(train_bank, test_bank, 100, 1e-3, 3);
  CHECK(report.accuracy >= 1.0 / 3.0);
}

TEST_CASE("extract_features: deterministic, right shape, never mutates the model") {
  auto model = Autoencoder<double>::init(tiny_model(), 17);
  auto split = tiny_split();
  std::map<std::string, Tensor> before;
  for (const auto& [name, p] : model.params) before[name] = p->value;

  auto a = extract_features(model, split.test, "test");
  auto b = extract_features(model, split.test, "test");
  CHECK(a.size() == static_cast<Eigen::Index>(split.test.size()));
  CHECK(a.dim() == 16);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  for (const auto& [name, p] : model.params) CHECK(bitwise_equal(before[name], p->value));
}

TEST_CASE("fine_tune trains encoder + classifier, decoder untouched") {
  auto model = Autoencoder<double>::init(tiny_model(), 19);
  auto split = tiny_split();
  std::map<std::string, Tensor> dec_before;
  for (const auto& [name, p] : model.decoder_params()) dec_before[name] = p->value;

  auto report = fine_tune(model, split.train, split.test, 8, 1e-3, 5);
  CHECK(report.protocol == "finetune");
  CHECK(report.settings.at("epochs") == "8");
  CHECK(report.accuracy >= 0.0);
  CHECK(report.accuracy <= 1.0);
  for (const auto& [name, p] : model.decoder_params())
    CHECK(bitwise_equal(dec_before[name], p->value));
  // defaults carry the supervised regime
  auto model2 = Autoencoder<double>::init(tiny_model(), 19);
  auto quick = fine_tune(model2, split.train, split.test);
  CHECK(quick.settings.at("epochs") == "100");
  CHECK(quick.settings.at("lr").substr(0, 8) == "0.001000");
}

TEST_CASE("supervised_e2e beats chance on the clean tiny dataset") {
  auto split = tiny_split(0.0);
  auto report = supervised_e2e<double>(tiny_model(), split.train, split.test, 30, 1e-3, 7);
  CHECK(report.protocol == "supervised");
  CHECK(report.accuracy > 1.0 / 3.0);
  // determinism
  auto again = supervised_e2e<double>(tiny_model(), split.train, split.test, 30, 1e-3, 7);
  CHECK(report.accuracy == again.accuracy);
}

TEST_CASE("eval report serialization round trip") {
  auto train = random_bank(30, 4, 3, 20);
  auto test = random_bank(12, 4, 3, 21);
  auto r = knn1_eval(train, test);
  auto back = parse_eval_report(eval_report_to_json(r));
  CHECK(back.protocol == r.protocol);
  CHECK(back.accuracy == r.accuracy);
  CHECK((back.confusion - r.confusion).cwiseAbs().maxCoeff() == 0);

  std::ostringstream grid;
  write_confusion_grid(grid, r);
  CHECK(grid.str().find("overall accuracy") != std::string::npos);
}
