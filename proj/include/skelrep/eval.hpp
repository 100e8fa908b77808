#pragma once

// Frozen-representation evaluation protocols: 1-nearest-neighbor over
// encoder features, the linear probe, fine-tuning of encoder + appended
// classifier, and end-to-end supervised training from scratch. Reports carry
// overall accuracy, per-class accuracy and the full confusion matrix.

#include <Eigen/Dense>

#include <map>
#include <string>
#include <vector>

#include "skelrep/model.hpp"
#include "skelrep/train.hpp"

namespace skelrep {

struct FeatureBank {
  Eigen::MatrixXd features;  // one row per sequence
  std::vector<int> labels;
  std::string split_tag;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

struct EvalReport {
  std::string protocol;
  double accuracy = 0.0;
  Eigen::VectorXd per_class;  // accuracy per class; 0 where the class has no test items
  Eigen::MatrixXi confusion;  // rows = true class, cols = predicted
  int n_train = 0;
  int n_test = 0;
  std::map<std::string, std::string> settings;
};

inline EvalReport make_report(const std::string& protocol, const std::vector<int>& truth,
                              const std::vector<int>& pred, int num_classes) {
  if (truth.size() != pred.size()) fail("make_report: label count mismatch");
  EvalReport r;
  r.protocol = protocol;
  r.n_test = static_cast<int>(truth.size());
  r.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || pred[i] < 0 || pred[i] >= num_classes)
      fail("make_report: label outside [0," + std::to_string(num_classes) + ")");
    r.confusion(truth[i], pred[i]) += 1;
  }
  r.accuracy = truth.empty() ? 0.0
                             : static_cast<double>(r.confusion.trace()) /
                                   static_cast<double>(truth.size());
  r.per_class = Eigen::VectorXd::Zero(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const int row = r.confusion.row(c).sum();
    if (row > 0) r.per_class[c] = static_cast<double>(r.confusion(c, c)) / row;
  }
  return r;
}

inline int class_count(const FeatureBank& a, const FeatureBank& b) {
  int mx = -1;
  for (int l : a.labels) mx = std::max(mx, l);
  for (int l : b.labels) mx = std::max(mx, l);
  if (mx < 0) fail("class_count: no labels present");
  return mx + 1;
}

// Encoder features for a frozen model, in input order. Never mutates the
// model.
template <typename S>
inline FeatureBank extract_features(const Autoencoder<S>& model,
                                    const std::vector<SkeletonSequence>& seqs,
                                    std::string split_tag = {}, Eigen::Index batch = 64) {
  FeatureBank bank;
  bank.split_tag = std::move(split_tag);
  bank.features.resize(static_cast<Eigen::Index>(seqs.size()), model.config.latent_dim);
  bank.labels.resize(seqs.size(), -1);
  for (std::size_t lo = 0; lo < seqs.size(); lo += static_cast<std::size_t>(batch)) {
    const std::size_t hi = std::min(seqs.size(), lo + static_cast<std::size_t>(batch));
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < hi; ++i) idx.push_back(i);
    auto z = model.encode(constant(stack_batch<S>(seqs, idx))).z;
    for (std::size_t i = lo; i < hi; ++i) {
      for (Eigen::Index f = 0; f < model.config.latent_dim; ++f)
        bank.features(static_cast<Eigen::Index>(i), f) =
            static_cast<double>(z->value.at(static_cast<Eigen::Index>(i - lo), f));
      bank.labels[i] = seqs[i].label.value_or(-1);
    }
  }
  return bank;
}

enum class Distance { Euclidean, Cosine };

// Each test feature takes the label of its single nearest training feature;
// ties break to the lowest training index.
inline EvalReport knn1_eval(const FeatureBank& train, const FeatureBank& test,
                            Distance dist = Distance::Euclidean) {
  if (train.size() == 0) fail("knn1_eval: empty train bank");
  if (train.dim() != test.dim())
    fail("knn1_eval: feature dims differ (" + std::to_string(train.dim()) + " vs " +
         std::to_string(test.dim()) + ")");
  const int C = class_count(train, test);
  std::vector<int> pred(static_cast<std::size_t>(test.size()));
  Eigen::VectorXd train_norms;
  if (dist == Distance::Cosine) train_norms = train.features.rowwise().norm();
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    Eigen::Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < train.size(); ++j) {
      double d;
      if (dist == Distance::Euclidean) {
        d = (train.features.row(j) - test.features.row(i)).squaredNorm();
      } else {
        const double denom = train_norms[j] * test.features.row(i).norm();
        d = denom > 0 ? 1.0 - train.features.row(j).dot(test.features.row(i)) / denom : 1.0;
      }
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    pred[static_cast<std::size_t>(i)] = train.labels[static_cast<std::size_t>(best)];
  }
  EvalReport r = make_report("1nn", test.labels, pred, C);
  r.n_train = static_cast<int>(train.size());
  r.settings["distance"] = dist == Distance::Euclidean ? "euclidean" : "cosine";
  return r;
}

// Softmax regression on frozen features: a single affine layer trained with
// Adam and evaluated on the test bank.
inline EvalReport linear_eval(const FeatureBank& train, const FeatureBank& test, int epochs = 300,
                              double lr = 1e-3, std::uint64_t seed = 0, int batch_size = 128) {
  if (train.size() == 0) fail("linear_eval: empty train bank");
  const int C = class_count(train, test);
  {
    std::vector<bool> present(static_cast<std::size_t>(C), false);
    for (int l : train.labels)
      if (l >= 0) present[static_cast<std::size_t>(l)] = true;
    for (int c = 0; c < C; ++c)
      if (!present[static_cast<std::size_t>(c)])
        fail("linear_eval: class " + std::to_string(c) + " absent from train labels");
  }
  const Eigen::Index F = train.dim();
  auto wrng = Rng::stream(seed, "lep/init");
  const double bound = 1.0 / std::sqrt(static_cast<double>(F));
  auto w = leaf(Tensor::uniform({F, C}, wrng, -bound, bound));
  auto b = leaf(Tensor::zeros({C}));
  ParamMap<double> params{{"lep.weight", w}, {"lep.bias", b}};
  AdamState<double> adam;
  adam.lr = lr;

  const std::size_t n = static_cast<std::size_t>(train.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto rng = Rng::stream(seed, "lep/shuffle", static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(batch_size)) {
      const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(batch_size));
      Tensor x({static_cast<Eigen::Index>(hi - lo), F});
      std::vector<int> y(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        for (Eigen::Index f = 0; f < F; ++f)
          x.at(static_cast<Eigen::Index>(i - lo), f) =
              train.features(static_cast<Eigen::Index>(order[i]), f);
        y[i - lo] = train.labels[order[i]];
      }
      auto loss = softmax_cross_entropy(dense(constant(std::move(x)), w, b), y);
      zero_grads(params);
      backward(loss);
      adam_step(params, adam);
    }
  }

  std::vector<int> pred(static_cast<std::size_t>(test.size()));
  const Eigen::MatrixXd wm =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          w->value.data.data(), F, C);
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    Eigen::VectorXd logits = wm.transpose() * test.features.row(i).transpose();
    for (int c = 0; c < C; ++c) logits[c] += b->value.data[c];
    Eigen::Index arg;
    logits.maxCoeff(&arg);
    pred[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  EvalReport r = make_report("lep", test.labels, pred, C);
  r.n_train = static_cast<int>(train.size());
  r.settings["epochs"] = std::to_string(epochs);
  r.settings["lr"] = std::to_string(lr);
  return r;
}

namespace detail {

template <typename S>
inline std::vector<int> classify(const Autoencoder<S>& model, const NodePtr<S>& w,
                                 const NodePtr<S>& b, const std::vector<SkeletonSequence>& seqs) {
  std::vector<int> pred(seqs.size());
  constexpr std::size_t kBatch = 64;
  for (std::size_t lo = 0; lo < seqs.size(); lo += kBatch) {
    const std::size_t hi = std::min(seqs.size(), lo + kBatch);
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < hi; ++i) idx.push_back(i);
    auto z = model.encode(constant(stack_batch<S>(seqs, idx))).z;
    auto logits = dense(z, w, b);
    const Eigen::Index C = logits->value.shape[1];
    for (std::size_t i = lo; i < hi; ++i) {
      Eigen::Index arg = 0;
      S best = logits->value.at(static_cast<Eigen::Index>(i - lo), 0);
      for (Eigen::Index c = 1; c < C; ++c) {
        const S v = logits->value.at(static_cast<Eigen::Index>(i - lo), c);
        if (v > best) {
          best = v;
          arg = c;
        }
      }
      pred[i] = static_cast<int>(arg);
    }
  }
  return pred;
}

// Shared loop for fine-tuning and end-to-end supervised training: encoder +
// appended linear classifier trained jointly with labels; the decoder is not
// part of the parameter set and stays untouched.
template <typename S>
inline EvalReport train_classifier_head(Autoencoder<S>& model,
                                        const std::vector<SkeletonSequence>& train_seqs,
                                        const std::vector<SkeletonSequence>& test_seqs,
                                        const std::string& protocol, int epochs, double lr,
                                        std::uint64_t seed) {
  if (train_seqs.empty()) fail(protocol + ": empty training set");
  int C = 0;
  for (const auto& s : train_seqs) {
    if (!s.label) fail(protocol + ": unlabeled training sequence");
    C = std::max(C, *s.label + 1);
  }
  for (const auto& s : test_seqs) C = std::max(C, s.label.value_or(-1) + 1);

  auto wrng = Rng::stream(seed, "cls/init");
  const S bound = S(1) / static_cast<S>(std::sqrt(static_cast<double>(model.config.latent_dim)));
  auto w = leaf(TensorT<S>::uniform({model.config.latent_dim, C}, wrng, -bound, bound));
  auto b = leaf(TensorT<S>::zeros({C}));
  ParamMap<S> params = model.encoder_params();
  params["cls.weight"] = w;
  params["cls.bias"] = b;
  AdamState<S> adam;
  adam.lr = static_cast<S>(lr);

  constexpr int kBatch = 32;
  const std::size_t n = train_seqs.size();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto rng = Rng::stream(seed, "cls/shuffle", static_cast<std::uint64_t>(epoch));
    rng.shuffle(order);
    for (std::size_t lo = 0; lo < n; lo += kBatch) {
      const std::size_t hi = std::min(n, lo + kBatch);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                   order.begin() + static_cast<std::ptrdiff_t>(hi));
      std::vector<int> y;
      for (auto i : idx) y.push_back(*train_seqs[i].label);
      auto z = model.encode(constant(stack_batch<S>(train_seqs, idx))).z;
      auto loss = softmax_cross_entropy(dense(z, w, b), y);
      zero_grads(params);
      backward(loss);
      adam_step(params, adam);
    }
  }

  std::vector<int> truth;
  for (const auto& s : test_seqs) truth.push_back(s.label.value_or(-1));
  EvalReport r = make_report(protocol, truth, classify(model, w, b, test_seqs), C);
  r.n_train = static_cast<int>(train_seqs.size());
  r.settings["epochs"] = std::to_string(epochs);
  r.settings["lr"] = std::to_string(lr);
  return r;
}

}  // namespace detail

// Supervised training of encoder + linear classifier on top of an
// unsupervised pretrained model.
template <typename S>
inline EvalReport fine_tune(Autoencoder<S>& model, const std::vector<SkeletonSequence>& train_seqs,
                            const std::vector<SkeletonSequence>& test_seqs, int epochs = 100,
                            double lr = 1e-3, std::uint64_t seed = 0) {
  return detail::train_classifier_head(model, train_seqs, test_seqs, "finetune", epochs, lr, seed);
}

// Same regime from random initialization, no pretraining.
template <typename S>
inline EvalReport supervised_e2e(const ModelConfig& config,
                                 const std::vector<SkeletonSequence>& train_seqs,
                                 const std::vector<SkeletonSequence>& test_seqs, int epochs = 100,
                                 double lr = 1e-3, std::uint64_t seed = 0) {
  auto model = Autoencoder<S>::init(config, seed);
  return detail::train_classifier_head(model, train_seqs, test_seqs, "supervised", epochs, lr,
                                       seed);
}

}  // namespace skelrep
