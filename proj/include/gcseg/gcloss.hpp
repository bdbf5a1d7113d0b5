#pragma once

// Residual graph-cut loss: the normalised gap between the capacity of the cut
// induced by the ground-truth mask and the capacity of the solver's minimum
// cut, evaluated on the same graph.
//
// The min-cut capacity is differentiable in every edge weight whenever the
// minimum cut is unique, with derivative 1 on cut edges and 0 elsewhere. The
// loss gradient therefore lands directly on the edge weights: +1/N_o on edges
// only in the ground-truth cut, -1/N_o on edges only in the minimum cut, zero
// on common edges. The solver itself is never differentiated.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gcseg/errors.hpp"
#include "gcseg/graph.hpp"
#include "gcseg/maxflow.hpp"

namespace gcseg {

// Gradient w.r.t. the stored graph arrays (psi entries include the gamma factor).
struct EdgeGrads {
  std::vector<double> phi_s, phi_t, psi_h, psi_v;

  EdgeGrads() = default;
  explicit EdgeGrads(const GridGraph& g)
      : phi_s(g.phi_s.size(), 0.0), phi_t(g.phi_t.size(), 0.0), psi_h(g.psi_h.size(), 0.0),
        psi_v(g.psi_v.size(), 0.0) {}

  double& at(const GridGraph& g, const EdgeId& e) {
    switch (e.kind) {
      case EdgeKind::source_tlink: return phi_s[e.p];
      case EdgeKind::sink_tlink: return phi_t[e.p];
      case EdgeKind::nlink: break;
    }
    if (e.q == e.p + 1 && e.p % g.width + 1 < g.width) return psi_h[g.h_index(e.p / g.width, e.p % g.width)];
    return psi_v[g.v_index(e.p / g.width, e.p % g.width)];
  }

  void scale(double c) {
    for (auto* arr : {&phi_s, &phi_t, &psi_h, &psi_v})
      for (double& v : *arr) v *= c;
  }
};

struct RGCLossResult {
  double loss = 0.0;      // clamped at zero
  double raw_loss = 0.0;  // before clamping
  double n_o = 0.0;
  double gt_capacity = 0.0;
  double min_capacity = 0.0;
  CutEdgeSet gt_cut;
  CutEdgeSet min_cut;
  EdgeGrads grads;  // d loss / d weights at unit upstream gradient
};

inline RGCLossResult rgc_forward(const GridGraph& graph, const CutResult& mincut, const Labeling& gt_mask) {
  require_same_dims(graph, gt_mask);
  gt_mask.validate();
  const double recomputed = cut_capacity(graph, mincut.labeling);
  if (std::abs(recomputed - mincut.capacity) > 1e-6)
    throw InconsistentState("min cut does not belong to this graph: stored capacity " +
                            std::to_string(mincut.capacity) + ", recomputed " + std::to_string(recomputed));

  RGCLossResult r;
  auto gt = gt_cut(graph, gt_mask);
  r.gt_cut = std::move(gt.edges);
  r.gt_capacity = gt.capacity;
  r.min_cut = cut_edges(graph, mincut.labeling);
  r.min_capacity = recomputed;
  r.n_o = static_cast<double>(graph.node_count()) +
          0.5 * static_cast<double>(r.min_cut.nlink_count() + r.gt_cut.nlink_count());
  r.raw_loss = (r.gt_capacity - r.min_capacity) / r.n_o;
  r.loss = std::max(0.0, r.raw_loss);

  r.grads = EdgeGrads(graph);
  const double unit = 1.0 / r.n_o;
  for (const auto& e : r.gt_cut)
    if (!r.min_cut.contains(e)) r.grads.at(graph, e) += e.kind == EdgeKind::nlink ? unit * graph.gamma : unit;
  for (const auto& e : r.min_cut)
    if (!r.gt_cut.contains(e)) r.grads.at(graph, e) -= e.kind == EdgeKind::nlink ? unit * graph.gamma : unit;
  return r;
}

// Gradients on (phi_s, phi_t, psi) for an upstream gradient on the loss.
inline EdgeGrads rgc_backward(const RGCLossResult& result, double upstream) {
  EdgeGrads g = result.grads;
  g.scale(upstream);
  return g;
}

enum class DerivativeStatus { ok, skipped_non_unique };

struct DerivativeCheck {
  DerivativeStatus status = DerivativeStatus::ok;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares d||C_min|| / d w_e (1 on min-cut edges, 0 otherwise) with a central
// difference over two extra solves. The perturbation is applied to the
// effective edge weight (gamma * psi for n-links). If the minimum-cut
// partition changes under either perturbation the cut is not unique at this
// point and the check reports skipped_non_unique.
inline DerivativeCheck capacity_derivative_check(const GridGraph& graph, const EdgeId& edge, double h) {
  if (!(h > 0.0)) throw InvalidArgument("perturbation h must be positive");
  const CutResult base = solve(graph);
  DerivativeCheck out;
  out.analytic = base.cut.contains(edge) ? 1.0 : 0.0;

  const bool nlink = edge.kind == EdgeKind::nlink;
  if (nlink && !(graph.gamma > 0.0)) throw InvalidArgument("n-link derivative needs gamma > 0");
  const double raw_step = nlink ? h / graph.gamma : h;

  GridGraph up = graph, down = graph;
  up.raw_weight(edge) += raw_step;
  const double w = graph.raw_weight(edge);
  const bool one_sided = w < raw_step;
  if (!one_sided) down.raw_weight(edge) -= raw_step;
  const CutResult ru = solve(up);
  const CutResult rd = solve(down);
  if (ru.labeling != base.labeling || rd.labeling != base.labeling) {
    out.status = DerivativeStatus::skipped_non_unique;
  }
  out.numeric = (ru.capacity - rd.capacity) / (one_sided ? h : 2.0 * h);
  return out;
}

}  // namespace gcseg
