#include "skelrep/ntu.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace skelrep {

namespace {

// Token reader that remembers the line each token came from, so parse errors
// can point at the offending line.
class TokenReader {
 public:
  TokenReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next(std::string& tok) {
    while (pos_ >= tokens_.size()) {
      std::string line;
      if (!std::getline(in_, line)) return false;
      ++lineno_;
      tokens_.clear();
      pos_ = 0;
      std::istringstream ls(line);
      std::string t;
      while (ls >> t) tokens_.push_back(t);
    }
    tok = tokens_[pos_++];
    return true;
  }

  [[noreturn]] void error(const std::string& msg) const {
    fail(source_ + ":" + std::to_string(lineno_) + ": " + msg);
  }

  long require_int(const std::string& what) {
    std::string tok;
    if (!next(tok)) error("truncated file: expected " + what);
    try {
      std::size_t used = 0;
      long v = std::stol(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      error("unparsable integer '" + tok + "' for " + what);
    }
  }

  double require_real(const std::string& what) {
    std::string tok;
    if (!next(tok)) error("truncated file: expected " + what);
    try {
      std::size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      error("unparsable number '" + tok + "' for " + what);
    }
  }

 private:
  std::istream& in_;
  std::string source_;
  std::vector<std::string> tokens_;
  std::size_t pos_ = 0;
  int lineno_ = 0;
};

constexpr int kBodyInfoFields = 10;   // body id + 9 tracking fields
constexpr int kJointExtraFields = 9;  // fields after x y z on a joint line

struct BodyTrack {
  long body_id = 0;
  std::vector<std::array<double, 3 * kNtuJoints>> frames;
  bool missing_joint = false;
};

}  // namespace

NtuFileMeta parse_ntu_filename(const std::string& name) {
  // strip directory and extension
  std::string base = name;
  if (auto slash = base.find_last_of("/\\"); slash != std::string::npos) base.erase(0, slash + 1);
  if (auto dot = base.find('.'); dot != std::string::npos) base.erase(dot);
  NtuFileMeta meta;
  int s, c, p, r, a;
  if (std::sscanf(base.c_str(), "S%dC%dP%dR%dA%d", &s, &c, &p, &r, &a) == 5) {
    meta.setup = s;
    meta.camera = c;
    meta.subject = p;
    meta.replication = r;
    meta.action = a;
  }
  return meta;
}

std::vector<SkeletonSequence> parse_ntu_skeleton(std::istream& in,
                                                 const std::string& source_name) {
  TokenReader rd(in, source_name);
  const long frame_count = rd.require_int("frame count");
  if (frame_count <= 0) rd.error("frame count must be positive, got " + std::to_string(frame_count));

  std::vector<BodyTrack> tracks;  // in order of first appearance
  std::map<long, std::size_t> track_of;

  for (long f = 0; f < frame_count; ++f) {
    const long body_count = rd.require_int("body count");
    if (body_count < 0) rd.error("negative body count");
    for (long b = 0; b < body_count; ++b) {
      const long body_id = rd.require_int("body id");
      for (int i = 1; i < kBodyInfoFields; ++i) rd.require_real("body info field");
      const long joint_count = rd.require_int("joint count");
      if (joint_count != kNtuJoints)
        rd.error("joint count " + std::to_string(joint_count) + " != " +
                 std::to_string(kNtuJoints));
      auto it = track_of.find(body_id);
      if (it == track_of.end()) {
        it = track_of.emplace(body_id, tracks.size()).first;
        tracks.push_back(BodyTrack{body_id, {}, false});
      }
      BodyTrack& track = tracks[it->second];
      std::array<double, 3 * kNtuJoints> frame{};
      for (int j = 0; j < kNtuJoints; ++j) {
        const double x = rd.require_real("joint x");
        const double y = rd.require_real("joint y");
        const double z = rd.require_real("joint z");
        for (int e = 0; e < kJointExtraFields; ++e) rd.require_real("joint extra field");
        frame[static_cast<std::size_t>(3 * j)] = x;
        frame[static_cast<std::size_t>(3 * j + 1)] = y;
        frame[static_cast<std::size_t>(3 * j + 2)] = z;
        if (x == 0.0 && y == 0.0 && z == 0.0) track.missing_joint = true;
      }
      track.frames.push_back(frame);
    }
  }

  std::vector<SkeletonSequence> out;
  for (const auto& track : tracks) {
    const Eigen::Index t = static_cast<Eigen::Index>(track.frames.size());
    SkeletonSequence seq = make_sequence(kNtuJoints, t);
    seq.has_missing_joints = track.missing_joint;
    for (Eigen::Index f = 0; f < t; ++f)
      for (int j = 0; j < kNtuJoints; ++j)
        for (int d = 0; d < 3; ++d)
          seq.at(d, j, f) = track.frames[static_cast<std::size_t>(f)]
                                        [static_cast<std::size_t>(3 * j + d)];
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<SkeletonSequence> parse_ntu_skeleton_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open skeleton file: " + path);
  auto bodies = parse_ntu_skeleton(in, path);
  const NtuFileMeta meta = parse_ntu_filename(path);
  for (auto& seq : bodies) {
    if (meta.action) seq.label = *meta.action - 1;  // action ids are 1-based
    seq.subject = meta.subject;
    seq.camera = meta.camera;
    seq.setup = meta.setup;
  }
  return bodies;
}

void write_ntu_skeleton(std::ostream& out, const std::vector<SkeletonSequence>& bodies) {
  if (bodies.empty()) fail("write_ntu_skeleton: no bodies");
  const Eigen::Index t = bodies.front().frames();
  for (const auto& b : bodies) {
    if (b.joints() != kNtuJoints)
      fail("write_ntu_skeleton: body has " + std::to_string(b.joints()) + " joints, expected " +
           std::to_string(kNtuJoints));
    if (b.frames() != t) fail("write_ntu_skeleton: bodies must share the frame count");
  }
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  out << t << "\n";
  for (Eigen::Index f = 0; f < t; ++f) {
    out << bodies.size() << "\n";
    for (std::size_t bi = 0; bi < bodies.size(); ++bi) {
      out << (bi + 1);  // body id
      for (int i = 1; i < kBodyInfoFields; ++i) out << " 0";
      out << "\n" << kNtuJoints << "\n";
      for (int j = 0; j < kNtuJoints; ++j) {
        put(bodies[bi].at(0, j, f));
        out << " ";
        put(bodies[bi].at(1, j, f));
        out << " ";
        put(bodies[bi].at(2, j, f));
        for (int e = 0; e < kJointExtraFields; ++e) out << " 0";
        out << "\n";
      }
    }
  }
}

}  // namespace skelrep
