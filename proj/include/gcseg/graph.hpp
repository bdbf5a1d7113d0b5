#pragma once

// s-t grid graph over an H x W image with 4-connectivity.
//
// Node p (row-major id) has a source t-link of weight phi_s(p) and a sink
// t-link of weight phi_t(p). Neighbour pairs carry an undirected n-link of
// weight psi in [0,1]; gamma scales every n-link when a capacity is evaluated,
// the stored psi stays raw.
//
// Labeling convention: 1 = foreground, node on the source side S; 0 =
// background, node on the sink side T. A cut pays phi_t(p) for p in S,
// phi_s(p) for p in T and gamma * psi(p,q) for every neighbour pair whose
// labels differ.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "gcseg/errors.hpp"

namespace gcseg {

struct Labeling {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  Labeling() = default;
  Labeling(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t size() const { return labels.size(); }
  std::uint8_t operator[](std::size_t p) const { return labels[p]; }
  std::uint8_t& operator[](std::size_t p) { return labels[p]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  std::size_t foreground_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  }

  void validate() const {
    if (labels.size() != static_cast<std::size_t>(height) * width)
      throw InvalidArgument("labeling size does not match its dimensions");
    for (auto v : labels)
      if (v > 1) throw InvalidArgument("labeling values must be 0 or 1");
  }

  friend bool operator==(const Labeling&, const Labeling&) = default;
};

// Per-pixel t-link probabilities from the segmentation head.
struct TLinkMap {
  int height = 0;
  int width = 0;
  std::vector<float> phi_s;
  std::vector<float> phi_t;
};

// Per-pixel feature vectors, channel-major ([F][H][W]) like the tensors.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  float at(int c, std::size_t p) const {
    return data[static_cast<std::size_t>(c) * height * width + p];
  }
};

enum class EdgeKind : std::uint8_t { source_tlink = 0, sink_tlink = 1, nlink = 2 };

// SOURCE_TLINK(p) and SINK_TLINK(p) use q = -1; NLINK(p, q) has p < q.
struct EdgeId {
  EdgeKind kind;
  int p;
  int q = -1;

  static EdgeId source(int p) { return {EdgeKind::source_tlink, p, -1}; }
  static EdgeId sink(int p) { return {EdgeKind::sink_tlink, p, -1}; }
  static EdgeId nlink(int a, int b) { return {EdgeKind::nlink, std::min(a, b), std::max(a, b)}; }

  friend bool operator==(const EdgeId&, const EdgeId&) = default;
  friend bool operator<(const EdgeId& a, const EdgeId& b) {
    return std::tie(a.p, a.q, a.kind) < std::tie(b.p, b.q, b.kind);
  }
};

inline std::string to_string(const EdgeId& e) {
  switch (e.kind) {
    case EdgeKind::source_tlink: return "SOURCE_TLINK(" + std::to_string(e.p) + ")";
    case EdgeKind::sink_tlink: return "SINK_TLINK(" + std::to_string(e.p) + ")";
    case EdgeKind::nlink: return "NLINK(" + std::to_string(e.p) + "," + std::to_string(e.q) + ")";
  }
  return "?";
}

// Sorted, duplicate-free set of cut edges.
class CutEdgeSet {
public:
  CutEdgeSet() = default;
  explicit CutEdgeSet(std::vector<EdgeId> edges) : edges_(std::move(edges)) {
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  }

  bool contains(const EdgeId& e) const { return std::binary_search(edges_.begin(), edges_.end(), e); }
  std::size_t size() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }
  auto begin() const { return edges_.begin(); }
  auto end() const { return edges_.end(); }
  const std::vector<EdgeId>& edges() const { return edges_; }

  std::size_t nlink_count() const {
    return static_cast<std::size_t>(
        std::count_if(edges_.begin(), edges_.end(), [](const EdgeId& e) { return e.kind == EdgeKind::nlink; }));
  }

  friend bool operator==(const CutEdgeSet&, const CutEdgeSet&) = default;

private:
  std::vector<EdgeId> edges_;
};

struct GridGraph {
  int height = 0;
  int width = 0;
  std::vector<double> phi_s;  // H*W
  std::vector<double> phi_t;  // H*W
  std::vector<double> psi_h;  // H*(W-1), pair (y,x)-(y,x+1)
  std::vector<double> psi_v;  // (H-1)*W, pair (y,x)-(y+1,x)
  double gamma = 1.0;

  GridGraph() = default;
  GridGraph(int h, int w, double g = 1.0) : height(h), width(w), gamma(g) {
    if (h <= 0 || w <= 0) throw InvalidArgument("grid dimensions must be positive");
    const std::size_t n = static_cast<std::size_t>(h) * w;
    phi_s.assign(n, 0.0);
    phi_t.assign(n, 0.0);
    psi_h.assign(static_cast<std::size_t>(h) * (w - 1), 0.0);
    psi_v.assign(static_cast<std::size_t>(h - 1) * w, 0.0);
  }

  std::size_t node_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t h_index(int y, int x) const { return static_cast<std::size_t>(y) * (width - 1) + x; }
  std::size_t v_index(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }

  // Raw stored weight behind an edge id (psi for n-links, before gamma).
  double& raw_weight(const EdgeId& e) {
    switch (e.kind) {
      case EdgeKind::source_tlink: return phi_s.at(e.p);
      case EdgeKind::sink_tlink: return phi_t.at(e.p);
      case EdgeKind::nlink: break;
    }
    const int y = e.p / width, x = e.p % width;
    if (e.q == e.p + 1 && x + 1 < width) return psi_h.at(h_index(y, x));
    if (e.q == e.p + width) return psi_v.at(v_index(y, x));
    throw InvalidArgument("not a grid n-link: " + to_string(e));
  }
  double raw_weight(const EdgeId& e) const { return const_cast<GridGraph*>(this)->raw_weight(e); }

  // Weight the edge contributes to a cut (gamma applied to n-links).
  double effective_weight(const EdgeId& e) const {
    return e.kind == EdgeKind::nlink ? gamma * raw_weight(e) : raw_weight(e);
  }

  // Structural check plus non-negative finite weights (what the solver needs).
  void validate_weights() const {
    const std::size_t n = node_count();
    if (height <= 0 || width <= 0 || phi_s.size() != n || phi_t.size() != n ||
        psi_h.size() != static_cast<std::size_t>(height) * (width - 1) ||
        psi_v.size() != static_cast<std::size_t>(height - 1) * width)
      throw InvalidArgument("grid graph arrays do not match " + std::to_string(height) + "x" + std::to_string(width));
    auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!ok(gamma)) throw InvalidArgument("gamma must be finite and non-negative");
    for (const auto* arr : {&phi_s, &phi_t, &psi_h, &psi_v})
      for (double v : *arr)
        if (!ok(v)) throw InvalidArgument("edge weights must be finite and non-negative");
  }

  // Full invariant check for graphs produced by the segmentation head.
  void validate() const {
    validate_weights();
    if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
    for (std::size_t p = 0; p < node_count(); ++p)
      if (std::abs(phi_s[p] + phi_t[p] - 1.0) > 1e-6) throw InvalidArgument("phi_s + phi_t must equal 1");
    for (const auto* arr : {&psi_h, &psi_v})
      for (double v : *arr)
        if (v > 1.0) throw InvalidArgument("psi must lie in [0,1]");
  }
};

inline void require_same_dims(const GridGraph& g, const Labeling& l) {
  if (g.height != l.height || g.width != l.width || l.labels.size() != g.node_count())
    throw InvalidArgument("labeling " + std::to_string(l.height) + "x" + std::to_string(l.width) +
                          " does not match graph " + std::to_string(g.height) + "x" + std::to_string(g.width));
}

// ---------------------------------------------------------------------------
// n-link weights from feature cosine similarity

namespace detail {

constexpr double kDegenerateNorm = 1e-12;

inline double cosine_affinity(const FeatureMap& f, std::size_t p, std::size_t q) {
  double dot = 0.0, np = 0.0, nq = 0.0;
  for (int c = 0; c < f.channels; ++c) {
    const double a = f.at(c, p), b = f.at(c, q);
    dot += a * b;
    np += a * a;
    nq += b * b;
  }
  np = std::sqrt(np);
  nq = std::sqrt(nq);
  if (np < kDegenerateNorm || nq < kDegenerateNorm) return 0.5;
  const double cosv = std::clamp(dot / (np * nq), -1.0, 1.0);
  return 0.5 * (1.0 + cosv);
}

// Adds g * d psi(p,q) / d(features at p and q) into grad.
inline void cosine_affinity_backward(const FeatureMap& f, std::size_t p, std::size_t q, double g,
                                     std::vector<double>& grad) {
  if (g == 0.0) return;
  double dot = 0.0, np2 = 0.0, nq2 = 0.0;
  for (int c = 0; c < f.channels; ++c) {
    const double a = f.at(c, p), b = f.at(c, q);
    dot += a * b;
    np2 += a * a;
    nq2 += b * b;
  }
  const double np = std::sqrt(np2), nq = std::sqrt(nq2);
  if (np < kDegenerateNorm || nq < kDegenerateNorm) return;
  const double inv = 1.0 / (np * nq);
  const double cosv = dot * inv;
  const std::size_t plane = static_cast<std::size_t>(f.height) * f.width;
  for (int c = 0; c < f.channels; ++c) {
    const double a = f.at(c, p), b = f.at(c, q);
    grad[c * plane + p] += 0.5 * g * (b * inv - cosv * a / np2);
    grad[c * plane + q] += 0.5 * g * (a * inv - cosv * b / nq2);
  }
}

}  // namespace detail

// Assembles the grid graph from the two head outputs; psi(p,q) = (1 + cos)/2.
// A pair where either feature vector has norm below 1e-12 gets psi = 0.5.
inline GridGraph build_graph(const TLinkMap& tlinks, const FeatureMap& features, double gamma) {
  const int H = tlinks.height, W = tlinks.width;
  const std::size_t n = static_cast<std::size_t>(H) * W;
  if (H <= 0 || W <= 0 || tlinks.phi_s.size() != n || tlinks.phi_t.size() != n)
    throw InvalidArgument("t-link map is inconsistent with its dimensions");
  if (features.height != H || features.width != W)
    throw InvalidArgument("feature map " + std::to_string(features.height) + "x" + std::to_string(features.width) +
                          " does not match t-link map " + std::to_string(H) + "x" + std::to_string(W));
  if (features.channels < 1 || features.data.size() != n * features.channels)
    throw InvalidArgument("feature map needs at least one channel and matching data");
  if (!std::isfinite(gamma) || gamma < 0.0) throw InvalidArgument("gamma must be finite and non-negative");

  GridGraph g(H, W, gamma);
  for (std::size_t p = 0; p < n; ++p) {
    g.phi_s[p] = tlinks.phi_s[p];
    g.phi_t[p] = tlinks.phi_t[p];
  }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      if (x + 1 < W) g.psi_h[g.h_index(y, x)] = detail::cosine_affinity(features, p, p + 1);
      if (y + 1 < H) g.psi_v[g.v_index(y, x)] = detail::cosine_affinity(features, p, p + W);
    }
  return g;
}

// Chains gradients on psi back onto the feature map (same layout as FeatureMap::data).
inline std::vector<double> psi_backward(const FeatureMap& features, const std::vector<double>& grad_psi_h,
                                        const std::vector<double>& grad_psi_v) {
  const int H = features.height, W = features.width;
  if (grad_psi_h.size() != static_cast<std::size_t>(H) * (W - 1) ||
      grad_psi_v.size() != static_cast<std::size_t>(H - 1) * W)
    throw InvalidArgument("psi gradient arrays do not match the feature map");
  std::vector<double> grad(features.data.size(), 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      if (x + 1 < W)
        detail::cosine_affinity_backward(features, p, p + 1, grad_psi_h[static_cast<std::size_t>(y) * (W - 1) + x], grad);
      if (y + 1 < H) detail::cosine_affinity_backward(features, p, p + W, grad_psi_v[p], grad);
    }
  return grad;
}

// ---------------------------------------------------------------------------
// cut evaluation

inline double cut_capacity(const GridGraph& g, const Labeling& l) {
  require_same_dims(g, l);
  const int H = g.height, W = g.width;
  double tl = 0.0, nl = 0.0;
  for (std::size_t p = 0; p < g.node_count(); ++p) tl += l[p] ? g.phi_t[p] : g.phi_s[p];
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      if (x + 1 < W && l[p] != l[p + 1]) nl += g.psi_h[g.h_index(y, x)];
      if (y + 1 < H && l[p] != l[p + W]) nl += g.psi_v[g.v_index(y, x)];
    }
  return tl + g.gamma * nl;
}

inline CutEdgeSet cut_edges(const GridGraph& g, const Labeling& l) {
  require_same_dims(g, l);
  const int H = g.height, W = g.width;
  std::vector<EdgeId> edges;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int p = y * W + x;
      edges.push_back(l[p] ? EdgeId::sink(p) : EdgeId::source(p));
      if (x + 1 < W && l[p] != l[p + 1]) edges.push_back(EdgeId::nlink(p, p + 1));
      if (y + 1 < H && l[p] != l[p + W]) edges.push_back(EdgeId::nlink(p, p + W));
    }
  return CutEdgeSet(std::move(edges));
}

inline double edge_weight_sum(const GridGraph& g, const CutEdgeSet& cut) {
  double acc = 0.0;
  for (const auto& e : cut) acc += g.effective_weight(e);
  return acc;
}

struct GroundTruthCut {
  CutEdgeSet edges;
  double capacity = 0.0;
};

inline GroundTruthCut gt_cut(const GridGraph& g, const Labeling& mask) {
  mask.validate();
  return {cut_edges(g, mask), cut_capacity(g, mask)};
}

// ---------------------------------------------------------------------------
// debug dump: "GCGRAPH v1 H W gamma" then phi_s, phi_t, psi_h, psi_v row-major

inline void write_graph(std::ostream& os, const GridGraph& g) {
  std::ostringstream buf;
  buf.precision(17);
  buf << "GCGRAPH v1 " << g.height << ' ' << g.width << ' ' << g.gamma << '\n';
  for (const auto* arr : {&g.phi_s, &g.phi_t, &g.psi_h, &g.psi_v}) {
    for (std::size_t i = 0; i < arr->size(); ++i) buf << (i ? " " : "") << (*arr)[i];
    buf << '\n';
  }
  os << buf.str();
}

inline GridGraph read_graph(std::istream& is) {
  std::string magic, version;
  int h = 0, w = 0;
  double gamma = 0.0;
  if (!(is >> magic >> version >> h >> w >> gamma) || magic != "GCGRAPH" || version != "v1")
    throw FormatError("bad graph dump header");
  if (h <= 0 || w <= 0) throw FormatError("bad graph dump dimensions");
  GridGraph g(h, w, gamma);
  for (auto* arr : {&g.phi_s, &g.phi_t, &g.psi_h, &g.psi_v})
    for (double& v : *arr)
      if (!(is >> v)) throw FormatError("truncated graph dump");
  return g;
}

}  // namespace gcseg
