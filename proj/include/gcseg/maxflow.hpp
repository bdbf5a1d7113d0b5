#pragma once

// Exact minimum s-t cut on the 4-connected grid.
//
// The solver is a Boykov-Kolmogorov dual search tree max-flow specialised to
// the fixed grid stencil: every node has four n-link arcs (left, right, up,
// down) stored in a flat array indexed by 4 * node + direction, plus one
// signed terminal residual (positive: residual from the source, negative:
// residual to the sink). All arithmetic is fp64.
//
// After the flow is maximal the labeling is recomputed by a breadth-first
// search from the source over unsaturated residual arcs, so the returned cut
// is always the source-side-minimal minimum cut.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <vector>

#include "gcseg/errors.hpp"
#include "gcseg/graph.hpp"

namespace gcseg {

struct SolveStats {
  std::uint64_t augmentations = 0;
  std::uint64_t runtime_ns = 0;
  double flow = 0.0;  // max-flow value, equals the cut capacity
};

struct CutResult {
  Labeling labeling;
  double capacity = 0.0;
  CutEdgeSet cut;
  SolveStats stats;
};

namespace detail {

class GridMaxflow {
public:
  // direction d: 0 = left, 1 = right, 2 = up, 3 = down; reverse is d ^ 1
  explicit GridMaxflow(const GridGraph& g)
      : H_(g.height), W_(g.width), n_(g.node_count()), rcap_(4 * n_, 0.0), tr_(n_, 0.0),
        parent_(n_, kFree), sink_side_(n_, 0), ts_(n_, 0), dist_(n_, 0), active_(n_, 0) {
    for (int y = 0; y < H_; ++y)
      for (int x = 0; x < W_; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * W_ + x;
        if (x + 1 < W_) {
          const double c = g.gamma * g.psi_h[g.h_index(y, x)];
          rcap_[4 * p + 1] = c;
          rcap_[4 * (p + 1) + 0] = c;
        }
        if (y + 1 < H_) {
          const double c = g.gamma * g.psi_v[g.v_index(y, x)];
          rcap_[4 * p + 3] = c;
          rcap_[4 * (p + W_) + 2] = c;
        }
        // pre-cancel the common part of both t-links; it is pure flow
        const double common = std::min(g.phi_s[p], g.phi_t[p]);
        flow_ += common;
        tr_[p] = (g.phi_s[p] - common) - (g.phi_t[p] - common);
      }
  }

  void run() {
    for (std::size_t p = 0; p < n_; ++p) {
      if (tr_[p] > 0.0) {
        plant(p, false);
      } else if (tr_[p] < 0.0) {
        plant(p, true);
      }
    }
    while (!queue_.empty()) {
      const std::size_t p = queue_.front();
      queue_.pop_front();
      active_[p] = 0;
      if (parent_[p] == kFree) continue;
      std::size_t a = 0, b = 0;
      int dir = -1;
      if (!grow(p, a, b, dir)) continue;
      ++time_;
      augment(a, b, dir);
      adopt();
      // p may still reach the other tree
      if (parent_[p] != kFree) activate(p);
    }
  }

  Labeling labeling() const {
    Labeling l(H_, W_, 0);
    std::vector<std::size_t> stack;
    for (std::size_t p = 0; p < n_; ++p)
      if (tr_[p] > 0.0) {
        l[p] = 1;
        stack.push_back(p);
      }
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      for (int d = 0; d < 4; ++d) {
        if (rcap_[4 * p + d] <= 0.0) continue;
        const std::size_t q = neighbour(p, d);
        if (!l[q]) {
          l[q] = 1;
          stack.push_back(q);
        }
      }
    }
    return l;
  }

  double flow() const { return flow_; }
  std::uint64_t augmentations() const { return augmentations_; }

private:
  static constexpr int kFree = -1;
  static constexpr int kTerminal = 4;
  static constexpr int kOrphan = 5;

  std::size_t neighbour(std::size_t p, int d) const {
    switch (d) {
      case 0: return p - 1;
      case 1: return p + 1;
      case 2: return p - W_;
      default: return p + W_;
    }
  }

  bool has_neighbour(std::size_t p, int d) const {
    const std::size_t x = p % W_, y = p / W_;
    switch (d) {
      case 0: return x > 0;
      case 1: return x + 1 < static_cast<std::size_t>(W_);
      case 2: return y > 0;
      default: return y + 1 < static_cast<std::size_t>(H_);
    }
  }

  void plant(std::size_t p, bool sink) {
    parent_[p] = kTerminal;
    sink_side_[p] = sink;
    ts_[p] = time_;
    dist_[p] = 1;
    activate(p);
  }

  void activate(std::size_t p) {
    if (!active_[p]) {
      active_[p] = 1;
      queue_.push_back(p);
    }
  }

  // Residual capacity of the arc that carries flow in the tree direction
  // between p and its neighbour q = neighbour(p, d): source tree p -> q, sink
  // tree q -> p.
  double tree_arc(std::size_t p, int d, bool sink) const {
    return sink ? rcap_[4 * neighbour(p, d) + (d ^ 1)] : rcap_[4 * p + d];
  }

  bool grow(std::size_t p, std::size_t& a, std::size_t& b, int& dir) {
    const bool sink = sink_side_[p];
    for (int d = 0; d < 4; ++d) {
      if (!has_neighbour(p, d) || tree_arc(p, d, sink) <= 0.0) continue;
      const std::size_t q = neighbour(p, d);
      if (parent_[q] == kFree) {
        parent_[q] = d ^ 1;
        sink_side_[q] = sink;
        ts_[q] = ts_[p];
        dist_[q] = dist_[p] + 1;
        activate(q);
      } else if (sink_side_[q] != sink) {
        // s-side endpoint a, t-side endpoint b, arc a -> b in direction dir
        if (sink) {
          a = q;
          b = p;
          dir = d ^ 1;
        } else {
          a = p;
          b = q;
          dir = d;
        }
        return true;
      } else if (ts_[q] <= ts_[p] && dist_[q] > dist_[p]) {
        // shorter path to the terminal through p
        parent_[q] = d ^ 1;
        ts_[q] = ts_[p];
        dist_[q] = dist_[p] + 1;
      }
    }
    return false;
  }

  void augment(std::size_t a, std::size_t b, int dir) {
    double bottleneck = rcap_[4 * a + dir];
    std::size_t root_s = a;
    while (parent_[root_s] != kTerminal) {
      const std::size_t q = neighbour(root_s, parent_[root_s]);
      bottleneck = std::min(bottleneck, rcap_[4 * q + (parent_[root_s] ^ 1)]);
      root_s = q;
    }
    bottleneck = std::min(bottleneck, tr_[root_s]);
    std::size_t root_t = b;
    while (parent_[root_t] != kTerminal) {
      bottleneck = std::min(bottleneck, rcap_[4 * root_t + parent_[root_t]]);
      root_t = neighbour(root_t, parent_[root_t]);
    }
    bottleneck = std::min(bottleneck, -tr_[root_t]);

    rcap_[4 * a + dir] -= bottleneck;
    rcap_[4 * b + (dir ^ 1)] += bottleneck;

    for (std::size_t p = a; parent_[p] != kTerminal;) {
      const int d = parent_[p];
      const std::size_t q = neighbour(p, d);
      rcap_[4 * q + (d ^ 1)] -= bottleneck;
      rcap_[4 * p + d] += bottleneck;
      if (rcap_[4 * q + (d ^ 1)] <= 0.0) make_orphan(p);
      p = q;
    }
    tr_[root_s] -= bottleneck;
    if (tr_[root_s] <= 0.0) {
      tr_[root_s] = 0.0;
      make_orphan(root_s);
    }

    for (std::size_t p = b; parent_[p] != kTerminal;) {
      const int d = parent_[p];
      const std::size_t q = neighbour(p, d);
      rcap_[4 * p + d] -= bottleneck;
      rcap_[4 * q + (d ^ 1)] += bottleneck;
      if (rcap_[4 * p + d] <= 0.0) make_orphan(p);
      p = q;
    }
    tr_[root_t] += bottleneck;
    if (tr_[root_t] >= 0.0) {
      tr_[root_t] = 0.0;
      make_orphan(root_t);
    }

    flow_ += bottleneck;
    ++augmentations_;
  }

  // An orphan lost its parent arc; adopt() either re-attaches it or frees it.
  void make_orphan(std::size_t p) {
    parent_[p] = kOrphan;
    orphans_.push_back(p);
  }

  void adopt() {
    while (!orphans_.empty()) {
      const std::size_t p = orphans_.front();
      orphans_.pop_front();
      process_orphan(p);
    }
  }

  void process_orphan(std::size_t p) {
    const bool sink = sink_side_[p];
    int best_dir = -1;
    int best_dist = std::numeric_limits<int>::max();
    for (int d = 0; d < 4; ++d) {
      if (!has_neighbour(p, d)) continue;
      const std::size_t q = neighbour(p, d);
      // flow must be able to travel q -> p (source tree) or p -> q (sink tree)
      const double cap = sink ? rcap_[4 * p + d] : rcap_[4 * q + (d ^ 1)];
      if (cap <= 0.0 || parent_[q] == kFree || sink_side_[q] != sink) continue;
      // walk to the root to check q is still anchored at a terminal
      int steps = 0;
      std::size_t j = q;
      bool anchored = false;
      while (true) {
        if (ts_[j] == time_) {
          steps += dist_[j];
          anchored = true;
          break;
        }
        ++steps;
        if (parent_[j] == kTerminal) {
          ts_[j] = time_;
          dist_[j] = 1;
          anchored = true;
          break;
        }
        if (parent_[j] == kOrphan) break;
        j = neighbour(j, parent_[j]);
      }
      if (!anchored) continue;
      if (steps < best_dist) {
        best_dist = steps;
        best_dir = d;
      }
      // stamp the path so later walks stop early
      for (j = q; ts_[j] != time_; j = neighbour(j, parent_[j])) {
        ts_[j] = time_;
        dist_[j] = steps--;
      }
    }
    if (best_dir >= 0) {
      parent_[p] = best_dir;
      ts_[p] = time_;
      dist_[p] = best_dist + 1;
      return;
    }
    // no valid parent: p becomes free
    parent_[p] = kFree;
    for (int d = 0; d < 4; ++d) {
      if (!has_neighbour(p, d)) continue;
      const std::size_t q = neighbour(p, d);
      if (parent_[q] == kFree || sink_side_[q] != sink) continue;
      const double cap = sink ? rcap_[4 * p + d] : rcap_[4 * q + (d ^ 1)];
      if (cap > 0.0) activate(q);
      if (parent_[q] != kTerminal && parent_[q] != kOrphan && neighbour(q, parent_[q]) == p) make_orphan(q);
    }
  }

  int H_, W_;
  std::size_t n_;
  std::vector<double> rcap_;
  std::vector<double> tr_;
  std::vector<int> parent_;
  std::vector<std::uint8_t> sink_side_;
  std::vector<std::uint64_t> ts_;
  std::vector<int> dist_;
  std::vector<std::uint8_t> active_;
  std::deque<std::size_t> queue_;
  std::deque<std::size_t> orphans_;
  std::uint64_t time_ = 0;
  double flow_ = 0.0;
  std::uint64_t augmentations_ = 0;
};

}  // namespace detail

inline CutResult solve(const GridGraph& graph) {
  graph.validate_weights();
  const auto t0 = std::chrono::steady_clock::now();
  detail::GridMaxflow mf(graph);
  mf.run();
  CutResult r;
  r.labeling = mf.labeling();
  r.capacity = cut_capacity(graph, r.labeling);
  r.cut = cut_edges(graph, r.labeling);
  r.stats.augmentations = mf.augmentations();
  r.stats.flow = mf.flow();
  r.stats.runtime_ns = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count());
  const double scale = std::max(1.0, std::abs(r.capacity));
  if (std::abs(r.stats.flow - r.capacity) > 1e-9 * scale)
    throw NumericError("max-flow value " + std::to_string(r.stats.flow) + " differs from cut capacity " +
                       std::to_string(r.capacity));
  return r;
}

// Exhaustive minimum over all 2^(H*W) labelings. Labelings are visited in
// increasing row-major binary order (pixel 0 most significant), and only a
// strictly smaller capacity replaces the incumbent.
inline CutResult brute_force_mincut(const GridGraph& graph) {
  graph.validate_weights();
  const std::size_t n = graph.node_count();
  if (n > 20) throw InvalidArgument("brute_force_mincut supports at most 20 nodes, got " + std::to_string(n));
  const auto t0 = std::chrono::steady_clock::now();
  Labeling l(graph.height, graph.width, 0);
  Labeling best = l;
  double best_cap = std::numeric_limits<double>::infinity();
  const std::uint64_t total = std::uint64_t{1} << n;
  for (std::uint64_t m = 0; m < total; ++m) {
    for (std::size_t p = 0; p < n; ++p) l[p] = static_cast<std::uint8_t>((m >> (n - 1 - p)) & 1u);
    const double c = cut_capacity(graph, l);
    if (m == 0 || c < best_cap - 1e-12 * std::max(1.0, best_cap)) {
      best_cap = c;
      best = l;
    }
  }
  CutResult r;
  r.labeling = best;
  r.capacity = best_cap;
  r.cut = cut_edges(graph, best);
  r.stats.flow = best_cap;
  r.stats.runtime_ns = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count());
  return r;
}

}  // namespace gcseg
