#pragma once

// Binary dataset cache: magic + version header, dtype tag, a label table
// with per-split counts and the raw sequence payloads (little-endian f64 by
// default, f32 on request). Rewriting the same split produces identical
// bytes.

#include <iosfwd>
#include <string>

#include "skelrep/skeleton.hpp"

namespace skelrep {

struct CacheStats {
  int num_classes = 0;
  std::vector<std::size_t> train_per_class;
  std::vector<std::size_t> test_per_class;
  std::size_t train_total = 0;
  std::size_t test_total = 0;
};

void write_cache(std::ostream& out, const DatasetSplit& split, bool f32_payload = false);
void write_cache_file(const std::string& path, const DatasetSplit& split, bool f32_payload = false);

DatasetSplit read_cache(std::istream& in);
DatasetSplit read_cache_file(const std::string& path);

CacheStats cache_stats(const DatasetSplit& split);

}  // namespace skelrep
