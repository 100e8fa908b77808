#pragma once

// Reader/writer for the NTU `.skeleton` text layout: a frame-count line,
// then per frame a body count, per body an info line, a joint-count line
// (25) and 25 joint lines whose first three fields are the x y z coordinates
// in meters. Remaining per-joint fields are discarded on read and written as
// zeros. One sequence is produced per tracked body.

#include <iosfwd>
#include <string>
#include <vector>

#include "skelrep/skeleton.hpp"

namespace skelrep {

inline constexpr int kNtuJoints = 25;

struct NtuFileMeta {
  std::optional<int> setup, camera, subject, replication, action;  // from the file name
};

// Parses SsssCcccPpppRrrrAaaa-style names; returns empty meta otherwise.
NtuFileMeta parse_ntu_filename(const std::string& name);

// Throws std::invalid_argument with a line number on malformed input.
// `source_name` is only used in error messages.
std::vector<SkeletonSequence> parse_ntu_skeleton(std::istream& in,
                                                 const std::string& source_name = "<stream>");

// Convenience: parse a file and stamp label/subject/camera/setup metadata
// from its name when it follows the NTU convention.
std::vector<SkeletonSequence> parse_ntu_skeleton_file(const std::string& path);

// Writes bodies tracked over the same frame count. Coordinates round-trip
// exactly through parse_ntu_skeleton.
void write_ntu_skeleton(std::ostream& out, const std::vector<SkeletonSequence>& bodies);

}  // namespace skelrep
