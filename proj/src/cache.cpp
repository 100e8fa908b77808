#include "skelrep/cache.hpp"

#include <fstream>

#include "skelrep/binio.hpp"

namespace skelrep {

namespace {

constexpr char kMagic[9] = "SKELCACH";
constexpr std::uint32_t kVersion = 1;

void write_sequence(std::ostream& out, const SkeletonSequence& s, bool f32) {
  using namespace binio;
  write_raw<std::int32_t>(out, s.label.value_or(-1));
  write_raw<std::int32_t>(out, s.subject.value_or(-1));
  write_raw<std::int32_t>(out, s.camera.value_or(-1));
  write_raw<std::int32_t>(out, s.setup.value_or(-1));
  write_raw<std::uint8_t>(out, s.has_missing_joints ? 1 : 0);
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.joints()));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.frames()));
  if (f32) {
    for (Eigen::Index i = 0; i < s.coords.numel(); ++i)
      write_raw<float>(out, static_cast<float>(s.coords.data[i]));
  } else {
    for (Eigen::Index i = 0; i < s.coords.numel(); ++i) write_raw<double>(out, s.coords.data[i]);
  }
}

SkeletonSequence read_sequence(std::istream& in, bool f32) {
  using namespace binio;
  auto opt = [](std::int32_t v) { return v < 0 ? std::optional<int>{} : std::optional<int>{v}; };
  const auto label = read_raw<std::int32_t>(in);
  const auto subject = read_raw<std::int32_t>(in);
  const auto camera = read_raw<std::int32_t>(in);
  const auto setup = read_raw<std::int32_t>(in);
  const auto flags = read_raw<std::uint8_t>(in);
  const auto m = read_raw<std::uint32_t>(in);
  const auto t = read_raw<std::uint32_t>(in);
  if (!in) fail("dataset cache: truncated sequence header");
  SkeletonSequence s = make_sequence(m, t);
  s.label = opt(label);
  s.subject = opt(subject);
  s.camera = opt(camera);
  s.setup = opt(setup);
  s.has_missing_joints = (flags & 1) != 0;
  for (Eigen::Index i = 0; i < s.coords.numel(); ++i)
    s.coords.data[i] = f32 ? static_cast<double>(read_raw<float>(in)) : read_raw<double>(in);
  if (!in) fail("dataset cache: truncated sequence payload");
  return s;
}

}  // namespace

CacheStats cache_stats(const DatasetSplit& split) {
  CacheStats st;
  int max_label = -1;
  for (const auto* seqs : {&split.train, &split.test})
    for (const auto& s : *seqs)
      if (s.label) max_label = std::max(max_label, *s.label);
  st.num_classes = std::max(split.num_classes, max_label + 1);
  st.train_per_class.assign(static_cast<std::size_t>(st.num_classes), 0);
  st.test_per_class.assign(static_cast<std::size_t>(st.num_classes), 0);
  for (const auto& s : split.train) {
    ++st.train_total;
    if (s.label) ++st.train_per_class[static_cast<std::size_t>(*s.label)];
  }
  for (const auto& s : split.test) {
    ++st.test_total;
    if (s.label) ++st.test_per_class[static_cast<std::size_t>(*s.label)];
  }
  return st;
}

void write_cache(std::ostream& out, const DatasetSplit& split, bool f32_payload) {
  using namespace binio;
  const CacheStats st = cache_stats(split);
  write_magic(out, kMagic);
  write_raw<std::uint32_t>(out, kVersion);
  write_raw<std::uint8_t>(out, f32_payload ? kF32 : kF64);
  write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(split.kind));
  write_raw<std::int32_t>(out, st.num_classes);
  write_raw<std::uint64_t>(out, st.train_total);
  write_raw<std::uint64_t>(out, st.test_total);
  // label table: class id -> per-split counts
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(st.num_classes));
  for (int c = 0; c < st.num_classes; ++c) {
    write_raw<std::int32_t>(out, c);
    write_raw<std::uint64_t>(out, st.train_per_class[static_cast<std::size_t>(c)]);
    write_raw<std::uint64_t>(out, st.test_per_class[static_cast<std::size_t>(c)]);
  }
  for (const auto& s : split.train) write_sequence(out, s, f32_payload);
  for (const auto& s : split.test) write_sequence(out, s, f32_payload);
}

void write_cache_file(const std::string& path, const DatasetSplit& split, bool f32_payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open cache file for writing: " + path);
  write_cache(out, split, f32_payload);
  if (!out) fail("failed writing cache file: " + path);
}

DatasetSplit read_cache(std::istream& in) {
  using namespace binio;
  expect_magic(in, kMagic, "dataset cache");
  const auto version = read_raw<std::uint32_t>(in);
  if (version != kVersion)
    fail("dataset cache: unsupported version " + std::to_string(version));
  const auto dtype = read_raw<std::uint8_t>(in);
  if (dtype != kF64 && dtype != kF32) fail("dataset cache: bad dtype tag");
  DatasetSplit split;
  split.kind = static_cast<SplitKind>(read_raw<std::uint8_t>(in));
  split.num_classes = read_raw<std::int32_t>(in);
  const auto train_total = read_raw<std::uint64_t>(in);
  const auto test_total = read_raw<std::uint64_t>(in);
  const auto table = read_raw<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < table; ++i) {
    read_raw<std::int32_t>(in);
    read_raw<std::uint64_t>(in);
    read_raw<std::uint64_t>(in);
  }
  if (!in) fail("dataset cache: truncated header");
  const bool f32 = dtype == kF32;
  split.train.reserve(train_total);
  split.test.reserve(test_total);
  for (std::uint64_t i = 0; i < train_total; ++i) split.train.push_back(read_sequence(in, f32));
  for (std::uint64_t i = 0; i < test_total; ++i) split.test.push_back(read_sequence(in, f32));
  return split;
}

DatasetSplit read_cache_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open cache file: " + path);
  return read_cache(in);
}

}  // namespace skelrep
