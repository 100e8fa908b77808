#include "doctest.h"

#include <sstream>

#include "skelrep/cache.hpp"
#include "skelrep/eval.hpp"
#include "skelrep/ntu.hpp"
#include "skelrep/synth.hpp"

using namespace skelrep;

namespace {

// hand-written 2-frame, 1-body fixture with known coordinates
std::string two_frame_fixture() {
  std::ostringstream out;
  SkeletonSequence body = make_sequence(kNtuJoints, 2);
  for (int j = 0; j < kNtuJoints; ++j)
    for (int d = 0; d < 3; ++d)
      for (int f = 0; f < 2; ++f)
        body.at(d, j, f) = 0.001 * (j + 1) + 0.1 * d + 0.01 * f + 1.0 / 3.0;
  write_ntu_skeleton(out, {body});
  return out.str();
}

}  // namespace

TEST_CASE("resample_temporal: identity when t == t_fixed") {
  auto rng = Rng::stream(1, "resample");
  SkeletonSequence s = make_sequence(4, 7);
  s.coords = Tensor::gaussian({3, 4, 7}, rng);
  auto out = resample_temporal(s, 7);
  CHECK(bitwise_equal(out.coords, s.coords));
}

TEST_CASE("resample_temporal: [0,1,2] onto five samples gives [0,.5,1,1.5,2]") {
  SkeletonSequence s = make_sequence(1, 3);
  for (int f = 0; f < 3; ++f)
    for (int d = 0; d < 3; ++d) s.at(d, 0, f) = f;
  auto out = resample_temporal(s, 5);
  const double expect[5] = {0.0, 0.5, 1.0, 1.5, 2.0};
  for (int i = 0; i < 5; ++i) CHECK(out.at(0, 0, i) == expect[i]);
}

TEST_CASE("resample_temporal: linear coordinates stay linear, endpoints exact") {
  SkeletonSequence s = make_sequence(2, 9);
  for (int f = 0; f < 9; ++f)
    for (int j = 0; j < 2; ++j)
      for (int d = 0; d < 3; ++d) s.at(d, j, f) = (d + 1) * 0.25 * f - j * 1.0 / 7.0;
  auto out = resample_temporal(s, 33);
  for (int i = 0; i < 33; ++i) {
    const double src = i * 8.0 / 32.0;
    for (int j = 0; j < 2; ++j)
      for (int d = 0; d < 3; ++d)
        CHECK(out.at(d, j, i) ==
              doctest::Approx((d + 1) * 0.25 * src - j * 1.0 / 7.0).epsilon(1e-13));
  }
  // endpoint frames bit-for-bit
  for (int j = 0; j < 2; ++j)
    for (int d = 0; d < 3; ++d) {
      CHECK(out.at(d, j, 0) == s.at(d, j, 0));
      CHECK(out.at(d, j, 32) == s.at(d, j, 8));
    }
  CHECK(out.joints() == s.joints());
  CHECK_THROWS(resample_temporal(s, 1));
}

TEST_CASE("normalize: root centered, torso scaled, idempotent") {
  auto rng = Rng::stream(2, "normalize");
  SkeletonSequence s = make_sequence(5, 6);
  s.coords = Tensor::gaussian({3, 5, 6}, rng);
  NormalizeOptions opt;
  opt.root_joint = 0;
  opt.torso_a = 0;
  opt.torso_b = 1;
  auto n1 = normalize(s, opt);
  // root at origin in every frame
  for (int f = 0; f < 6; ++f)
    for (int d = 0; d < 3; ++d) CHECK(n1.at(d, 0, f) == 0.0);
  // mean torso length is one
  double torso = 0;
  for (int f = 0; f < 6; ++f) {
    double acc = 0;
    for (int d = 0; d < 3; ++d) {
      const double diff = n1.at(d, 0, f) - n1.at(d, 1, f);
      acc += diff * diff;
    }
    torso += std::sqrt(acc);
  }
  CHECK(torso / 6 == doctest::Approx(1.0).epsilon(1e-12));
  // idempotence
  auto n2 = normalize(n1, opt);
  CHECK(max_abs_diff(n2.coords, n1.coords) < 1e-12);
}

TEST_CASE("normalize: invariant to translation and uniform scaling") {
  auto rng = Rng::stream(3, "normalize2");
  SkeletonSequence s = make_sequence(4, 3);
  s.coords = Tensor::gaussian({3, 4, 3}, rng);
  NormalizeOptions opt;
  opt.torso_b = 2;
  auto base = normalize(s, opt);

  SkeletonSequence shifted = s;
  for (int f = 0; f < 3; ++f)
    for (int j = 0; j < 4; ++j) {
      shifted.at(0, j, f) += 12.0;
      shifted.at(1, j, f) -= 3.5;
      shifted.at(2, j, f) += 0.25;
    }
  CHECK(max_abs_diff(normalize(shifted, opt).coords, base.coords) < 1e-12);

  SkeletonSequence scaled = s;
  scaled.coords.data *= 2.0;
  CHECK(max_abs_diff(normalize(scaled, opt).coords, base.coords) < 1e-12);
}

TEST_CASE("normalize: zero torso is an error") {
  SkeletonSequence s = make_sequence(3, 2);  // all zeros
  CHECK_THROWS(normalize(s, NormalizeOptions{0, 0, 1}));
}

TEST_CASE("synth_dataset: deterministic, stratified 70/30") {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.per_class = 50;
  cfg.seed = 7;
  auto a = synth_dataset(cfg);
  auto b = synth_dataset(cfg);
  CHECK(a.train.size() == 140);
  CHECK(a.test.size() == 60);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK(bitwise_equal(a.train[i].coords, b.train[i].coords));
  for (std::size_t i = 0; i < a.test.size(); ++i)
    CHECK(bitwise_equal(a.test[i].coords, b.test[i].coords));
  // stratification: each class contributes 35 train / 15 test
  std::vector<int> per_class(4, 0);
  for (const auto& s : a.train) per_class[static_cast<std::size_t>(*s.label)]++;
  for (int c = 0; c < 4; ++c) CHECK(per_class[static_cast<std::size_t>(c)] == 35);
  CHECK_THROWS(synth_dataset(SynthConfig{1, 10}));
}

TEST_CASE("synth_dataset: sigma 0 leaves only trajectory-parameter variation") {
  SynthConfig cfg;
  cfg.classes = 2;
  cfg.per_class = 4;
  cfg.sigma = 0.0;
  cfg.seed = 11;
  auto split = synth_dataset(cfg);
  // same class, different sequences: different parameters, different coords
  CHECK_FALSE(bitwise_equal(split.train[0].coords, split.train[1].coords));
  // but identical class signature: regenerating with the same seed and index
  // reproduces the same tensors (covered above); here check smoothness: no
  // noise means adjacent frames stay close
  const auto& s = split.train[0];
  for (Eigen::Index f = 1; f < s.frames(); ++f)
    for (Eigen::Index j = 0; j < s.joints(); ++j)
      for (int d = 0; d < 3; ++d)
        CHECK(std::abs(s.at(d, j, f) - s.at(d, j, f - 1)) < 0.5);
}

TEST_CASE("synth_dataset: clean classes are 1-NN separable on raw coordinates") {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.per_class = 20;
  cfg.sigma = 0.0;
  cfg.seed = 13;
  auto split = synth_dataset(cfg);
  auto flatten = [](const std::vector<SkeletonSequence>& seqs) {
    FeatureBank bank;
    bank.features.resize(static_cast<Eigen::Index>(seqs.size()), seqs[0].coords.numel());
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      for (Eigen::Index k = 0; k < seqs[i].coords.numel(); ++k)
        bank.features(static_cast<Eigen::Index>(i), k) = seqs[i].coords.data[k];
      bank.labels.push_back(*seqs[i].label);
    }
    return bank;
  };
  auto report = knn1_eval(flatten(split.train), flatten(split.test));
  CHECK(report.accuracy == 1.0);
}

TEST_CASE("ntu parser: fixture round trip") {
  const std::string text = two_frame_fixture();
  std::istringstream in(text);
  auto bodies = parse_ntu_skeleton(in, "fixture");
  REQUIRE(bodies.size() == 1);
  CHECK(bodies[0].joints() == 25);
  CHECK(bodies[0].frames() == 2);
  CHECK(bodies[0].at(0, 0, 0) == doctest::Approx(0.001 + 1.0 / 3.0).epsilon(1e-15));

  // parse -> serialize -> parse is the identity
  std::ostringstream out;
  write_ntu_skeleton(out, bodies);
  std::istringstream in2(out.str());
  auto again = parse_ntu_skeleton(in2, "fixture2");
  REQUIRE(again.size() == 1);
  CHECK(bitwise_equal(again[0].coords, bodies[0].coords));
}

TEST_CASE("ntu parser: errors carry line numbers") {
  std::istringstream zero("0\n");
  CHECK_THROWS_WITH_AS(parse_ntu_skeleton(zero, "z"), doctest::Contains("z:1"),
                       std::invalid_argument);

  std::istringstream bad_joints("1\n1\n1 0 0 0 0 0 0 0 0 0\n24\n");
  CHECK_THROWS_WITH_AS(parse_ntu_skeleton(bad_joints, "j"), doctest::Contains("24"),
                       std::invalid_argument);

  std::string text = two_frame_fixture();
  text = text.substr(0, text.size() / 2);  // truncate mid-file
  std::istringstream trunc(text);
  CHECK_THROWS_AS(parse_ntu_skeleton(trunc, "t"), std::invalid_argument);

  std::istringstream nan_text("1\n1\n1 0 0 0 0 0 0 0 0 0\n25\nx y z 0 0 0 0 0 0 0 0 0\n");
  CHECK_THROWS_WITH_AS(parse_ntu_skeleton(nan_text, "n"), doctest::Contains("unparsable"),
                       std::invalid_argument);
}

TEST_CASE("ntu parser: two bodies become two sequences") {
  SkeletonSequence b1 = make_sequence(25, 3), b2 = make_sequence(25, 3);
  auto rng = Rng::stream(5, "two-body");
  b1.coords = Tensor::gaussian({3, 25, 3}, rng);
  b2.coords = Tensor::gaussian({3, 25, 3}, rng);
  std::ostringstream out;
  write_ntu_skeleton(out, {b1, b2});
  std::istringstream in(out.str());
  auto bodies = parse_ntu_skeleton(in, "pair");
  REQUIRE(bodies.size() == 2);
  CHECK(bitwise_equal(bodies[0].coords, b1.coords));
  CHECK(bitwise_equal(bodies[1].coords, b2.coords));
}

TEST_CASE("ntu filename metadata") {
  auto meta = parse_ntu_filename("some/dir/S001C002P003R002A013.skeleton");
  REQUIRE(meta.action.has_value());
  CHECK(*meta.setup == 1);
  CHECK(*meta.camera == 2);
  CHECK(*meta.subject == 3);
  CHECK(*meta.action == 13);
  CHECK_FALSE(parse_ntu_filename("notes.txt").action.has_value());
}

TEST_CASE("dataset cache: bit-exact round trip, f64 and f32") {
  SynthConfig cfg;
  cfg.classes = 3;
  cfg.per_class = 5;
  cfg.seed = 17;
  auto split = synth_dataset(cfg);
  split.train[0].subject = 4;
  split.train[0].has_missing_joints = true;

  std::ostringstream out;
  write_cache(out, split);
  const std::string bytes = out.str();
  // rewriting the identical split produces identical bytes
  std::ostringstream out2;
  write_cache(out2, split);
  CHECK(bytes == out2.str());

  std::istringstream in(bytes);
  auto back = read_cache(in);
  REQUIRE(back.train.size() == split.train.size());
  REQUIRE(back.test.size() == split.test.size());
  CHECK(back.num_classes == 3);
  CHECK(back.train[0].subject == std::optional<int>(4));
  CHECK(back.train[0].has_missing_joints);
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    CHECK(bitwise_equal(back.train[i].coords, split.train[i].coords));
    CHECK(back.train[i].label == split.train[i].label);
  }

  // f32 payload: values survive to float precision
  std::ostringstream out32;
  write_cache(out32, split, true);
  CHECK(out32.str().size() < bytes.size());
  std::istringstream in32(out32.str());
  auto back32 = read_cache(in32);
  CHECK(max_abs_diff(back32.train[0].coords, split.train[0].coords) < 1e-6);

  std::istringstream garbage("not a cache");
  CHECK_THROWS(read_cache(garbage));
}

TEST_CASE("cache stats count per class and split") {
  SynthConfig cfg;
  cfg.classes = 2;
  cfg.per_class = 10;
  auto split = synth_dataset(cfg);
  auto st = cache_stats(split);
  CHECK(st.num_classes == 2);
  CHECK(st.train_total == 14);
  CHECK(st.test_total == 6);
  CHECK(st.train_per_class[0] == 7);
  CHECK(st.test_per_class[1] == 3);
}
