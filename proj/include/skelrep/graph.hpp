#pragma once

// Skeletal connectivity as an undirected graph: 0/1 adjacency W, diagonal
// degree matrix D and the un-normalized Laplacian L = D - W, plus the
// quadratic-form regularizer evaluated in reconstruction space.

#include <Eigen/Dense>

#include <istream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "skelrep/autodiff.hpp"

namespace skelrep {

using BoneList = std::vector<std::pair<int, int>>;

struct SkeletonGraph {
  int m = 0;
  BoneList edges;
  Eigen::MatrixXd W;
  Eigen::MatrixXd D;
  Eigen::MatrixXd L;
};

inline SkeletonGraph build_graph(int m, const BoneList& edges) {
  if (m < 1) fail("build_graph: joint count must be >= 1");
  SkeletonGraph g;
  g.m = m;
  g.edges = edges;
  g.W = Eigen::MatrixXd::Zero(m, m);
  for (const auto& [i, j] : edges) {
    if (i < 0 || i >= m || j < 0 || j >= m)
      fail("build_graph: bone (" + std::to_string(i) + "," + std::to_string(j) +
           ") references a joint outside [0," + std::to_string(m) + ")");
    if (i == j) fail("build_graph: self-loop at joint " + std::to_string(i));
    g.W(i, j) = 1.0;
    g.W(j, i) = 1.0;
  }
  g.D = g.W.rowwise().sum().asDiagonal();
  g.L = g.D - g.W;
  return g;
}

// Kinect v2 skeleton: 25 joints, 24 bones, spine base at index 0.
inline const BoneList& ntu25_bones() {
  static const BoneList bones = {
      {0, 1},   {1, 20},  {2, 20},  {3, 2},   {4, 20},  {5, 4},   {6, 5},   {7, 6},
      {8, 20},  {9, 8},   {10, 9},  {11, 10}, {12, 0},  {13, 12}, {14, 13}, {15, 14},
      {16, 0},  {17, 16}, {18, 17}, {19, 18}, {21, 22}, {22, 7},  {23, 24}, {24, 11}};
  return bones;
}

inline SkeletonGraph ntu25_graph() { return build_graph(25, ntu25_bones()); }

// Bone-list text format: one "i j" pair per line; '#' starts a comment.
inline BoneList parse_bone_list(std::istream& in) {
  BoneList bones;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int i, j;
    if (!(ls >> i)) continue;  // blank line
    if (!(ls >> j))
      fail("bone list: line " + std::to_string(lineno) + ": expected two joint indices");
    bones.emplace_back(i, j);
  }
  return bones;
}

// Path graph 0-1-...-(m-1), the natural topology of the synthetic chain data.
inline SkeletonGraph chain_graph(int m) {
  BoneList bones;
  for (int i = 0; i + 1 < m; ++i) bones.emplace_back(i, i + 1);
  return build_graph(m, bones);
}

// Built-in topologies: "ntu25" and "chain<N>".
inline SkeletonGraph graph_by_name(const std::string& name) {
  if (name == "ntu25") return ntu25_graph();
  if (name.rfind("chain", 0) == 0) {
    try {
      const int m = std::stoi(name.substr(5));
      if (m >= 2) return chain_graph(m);
    } catch (const std::exception&) {
    }
  }
  fail("graph_by_name: unknown built-in topology '" + name + "'");
}

// z' L z for an m-vector z.
inline double laplacian_quadratic(const Eigen::VectorXd& z, const Eigen::MatrixXd& L) {
  if (z.size() != L.rows())
    fail("laplacian_quadratic: vector length " + std::to_string(z.size()) +
         " does not match Laplacian order " + std::to_string(L.rows()));
  return z.dot(L * z);
}

// Skeletal regularizer on a reconstruction batch shaped [N, d, m, t]: the
// mean over batch, timestamps and coordinate axes of x' L x, where x stacks
// the m joint coordinates of one frame along one axis. Differentiable w.r.t.
// the reconstruction; L is symmetric so the per-frame gradient is 2 L x
// divided by the same normalizer.
template <typename S>
inline NodePtr<S> r_skel(const NodePtr<S>& recon, const SkeletonGraph& graph) {
  const auto& sh = recon->value.shape;
  if (sh.size() != 4) fail("r_skel: reconstruction must be rank 4 [N,d,m,t]");
  if (sh[0] < 1) fail("r_skel: empty batch");
  if (sh[2] != graph.m)
    fail("r_skel: joint extent " + std::to_string(sh[2]) + " does not match graph m = " +
         std::to_string(graph.m));
  const Eigen::Index N = sh[0], D = sh[1], M = sh[2], T = sh[3];
  const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> L = graph.L.cast<S>();
  const S inv = S(1) / static_cast<S>(N * D * T);

  Eigen::VectorX<S> x(M), Lx(M);
  S acc = 0;
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index d = 0; d < D; ++d)
      for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index j = 0; j < M; ++j) x[j] = recon->value.at(n, d, j, t);
        Lx.noalias() = L * x;
        acc += x.dot(Lx);
      }
  auto node = make_node<S>(TensorT<S>::scalar(acc * inv), "r_skel", {recon});
  node->backprop = [L, inv](NodeT<S>& self) {
    const auto& r = self.parents[0];
    if (!r->requires_grad) return;
    const auto& sh = r->value.shape;
    const Eigen::Index N = sh[0], D = sh[1], M = sh[2], T = sh[3];
    const S g = self.grad.data[0] * inv;
    TensorT<S> dr(sh);
    Eigen::VectorX<S> x(M), Lx(M);
    for (Eigen::Index n = 0; n < N; ++n)
      for (Eigen::Index d = 0; d < D; ++d)
        for (Eigen::Index t = 0; t < T; ++t) {
          for (Eigen::Index j = 0; j < M; ++j) x[j] = r->value.at(n, d, j, t);
          Lx.noalias() = L * x;
          for (Eigen::Index j = 0; j < M; ++j) dr.at(n, d, j, t) = S(2) * g * Lx[j];
        }
    r->accumulate(dr);
  };
  return node;
}

}  // namespace skelrep
