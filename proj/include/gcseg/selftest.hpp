#pragma once

// Built-in oracle suites run by `gcseg selftest`.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gcseg/gcloss.hpp"
#include "gcseg/graph.hpp"
#include "gcseg/losses.hpp"
#include "gcseg/maxflow.hpp"
#include "gcseg/metrics.hpp"
#include "gcseg/tensor.hpp"
#include "gcseg/train.hpp"

namespace gcseg {

// Random grid graph with t-links drawn as a probability pair and uniform n-links.
inline GridGraph random_grid_graph(std::mt19937_64& rng, int height, int width, double gamma) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GridGraph g(height, width, gamma);
  for (std::size_t p = 0; p < g.phi_s.size(); ++p) {
    g.phi_s[p] = u(rng);
    g.phi_t[p] = 1.0 - g.phi_s[p];
  }
  for (double& w : g.psi_h) w = u(rng);
  for (double& w : g.psi_v) w = u(rng);
  return g;
}

inline Labeling random_labeling(std::mt19937_64& rng, int height, int width) {
  Labeling l(height, width, 0);
  std::bernoulli_distribution b(0.5);
  for (auto& v : l.labels) v = b(rng) ? 1 : 0;
  return l;
}

struct SuiteResult {
  std::string name;
  bool ok = false;
  std::string detail;
  double seconds = 0.0;
};

namespace selftest {

// Number of labelings within tol of the minimum capacity, by enumeration.
inline int count_minimisers(const GridGraph& g, double min_cap, double tol) {
  const int n = g.height * g.width;
  Labeling l(g.height, g.width, 0);
  int count = 0;
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    for (int p = 0; p < n; ++p) l[static_cast<std::size_t>(p)] = (m >> p) & 1u;
    if (cut_capacity(g, l) <= min_cap + tol) ++count;
  }
  return count;
}

inline SuiteResult solver_vs_bruteforce(int graphs, std::uint64_t seed) {
  SuiteResult r{"solver_vs_bruteforce", true, "", 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> side(1, 4);
  std::uniform_real_distribution<double> gam(0.1, 2.0);
  int bad = 0;
  for (int i = 0; i < graphs; ++i) {
    const GridGraph g = random_grid_graph(rng, side(rng), side(rng), gam(rng));
    const CutResult a = solve(g), b = brute_force_mincut(g);
    const bool cap_ok = std::isfinite(b.capacity) &&
                        std::abs(a.capacity - b.capacity) <= 1e-9 * std::max(1.0, std::abs(b.capacity));
    const bool unique = count_minimisers(g, b.capacity, 1e-9) == 1;
    if (!cap_ok || (unique && a.labeling != b.labeling)) ++bad;
  }
  r.ok = bad == 0;
  r.detail = std::to_string(graphs - bad) + "/" + std::to_string(graphs) + " graphs agree";
  return r;
}

inline SuiteResult capacity_derivatives(int pairs, std::uint64_t seed) {
  SuiteResult r{"capacity_derivatives", true, "", 0.0};
  std::mt19937_64 rng(seed);
  int match = 0, skipped = 0, bad = 0;
  for (int i = 0; i < pairs; ++i) {
    const GridGraph g = random_grid_graph(rng, 3, 4, 0.5);
    std::uniform_int_distribution<int> pick(0, 2);
    std::uniform_int_distribution<int> node(0, static_cast<int>(g.node_count()) - 1);
    EdgeId e = EdgeId::source(node(rng));
    const int kind = pick(rng);
    if (kind == 1) e = EdgeId::sink(node(rng));
    if (kind == 2) {
      const int p = node(rng);
      const int y = p / g.width, x = p % g.width;
      e = (x + 1 < g.width) ? EdgeId::nlink(p, p + 1) : (y + 1 < g.height ? EdgeId::nlink(p, p + g.width)
                                                                          : EdgeId::nlink(p - 1, p));
    }
    const DerivativeCheck c = capacity_derivative_check(g, e, 1e-5);
    if (c.status == DerivativeStatus::skipped_non_unique) ++skipped;
    else if (std::abs(c.analytic - c.numeric) <= 1e-6) ++match;
    else ++bad;
  }
  r.ok = bad == 0 && match >= static_cast<int>(std::ceil(0.95 * pairs));
  r.detail = std::to_string(match) + " match, " + std::to_string(skipped) + " non-unique, " + std::to_string(bad) +
             " mismatched of " + std::to_string(pairs);
  return r;
}

// Largest absolute difference between analytic and central-difference gradients.
inline double loss_gradient_error(std::mt19937_64& rng, bool dice) {
  std::uniform_real_distribution<double> u(0.02, 0.98);
  const int H = 4, W = 4;
  std::vector<float> ps(H * W), pt(H * W);
  for (std::size_t p = 0; p < ps.size(); ++p) {
    ps[p] = static_cast<float>(u(rng));
    pt[p] = static_cast<float>(u(rng));
  }
  Labeling gt = random_labeling(rng, H, W);
  const auto eval = [&](const std::vector<double>& s, const std::vector<double>& t) {
    // fp64 evaluation of the same formulas
    double fg = 0, ss = 0, st = 0, is = 0, it = 0, ce = 0;
    for (std::size_t p = 0; p < s.size(); ++p) {
      const double g = gt[p];
      fg += g;
      ss += s[p];
      st += t[p];
      is += g * s[p];
      it += (1 - g) * t[p];
      ce -= g ? std::log(s[p]) : std::log(t[p]);
    }
    if (!dice) return ce / static_cast<double>(s.size());
    const double bg = static_cast<double>(s.size()) - fg;
    const double ws = 1.0 / (fg * fg + 1e-8), wt = 1.0 / (bg * bg + 1e-8);
    return 1.0 - 2.0 * (ws * is + wt * it) / (ws * (fg + ss) + wt * (bg + st) + 1e-8);
  };
  const PixelLoss l = dice ? generalized_dice(ps, pt, gt) : bce(ps, pt, gt);
  std::vector<double> s(ps.begin(), ps.end()), t(pt.begin(), pt.end());
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t p = 0; p < s.size(); ++p) {
    for (int which = 0; which < 2; ++which) {
      auto& v = which ? t : s;
      const double keep = v[p];
      v[p] = keep + h;
      const double up = eval(s, t);
      v[p] = keep - h;
      const double down = eval(s, t);
      v[p] = keep;
      const double analytic = which ? l.grad_phi_t[p] : l.grad_phi_s[p];
      worst = std::max(worst, std::abs(analytic - (up - down) / (2 * h)));
    }
  }
  return worst;
}

inline SuiteResult loss_gradients(int instances, std::uint64_t seed) {
  SuiteResult r{"loss_gradients", true, "", 0.0};
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    worst = std::max(worst, loss_gradient_error(rng, false));
    worst = std::max(worst, loss_gradient_error(rng, true));
  }
  r.ok = worst <= 1e-3;
  r.detail = "max gradient error " + format_number(worst);
  return r;
}

inline SuiteResult metric_oracles() {
  SuiteResult r{"metric_oracles", true, "", 0.0};
  std::vector<std::string> failures;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failures.push_back(what);
  };
  Labeling a(4, 4, 0), b(4, 4, 0);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) a[static_cast<std::size_t>(y * 4 + x)] = 1;
  for (int y = 0; y < 2; ++y)
    for (int x = 1; x < 3; ++x) b[static_cast<std::size_t>(y * 4 + x)] = 1;
  const RegionScores rs = region_scores(a, b);
  expect(std::abs(rs.dice - 0.5) < 1e-12, "dice of half-overlapping squares");
  expect(std::abs(rs.precision - 0.5) < 1e-12 && std::abs(rs.recall - 0.5) < 1e-12, "precision/recall");
  const SurfaceScores ss = surface_scores(a, b);
  expect(std::abs(ss.hd - 1.0) < 1e-12 && std::abs(ss.asd - 0.5) < 1e-12, "surface distances of shifted squares");
  const SurfaceScores self = surface_scores(a, a);
  expect(self.asd == 0.0 && self.hd == 0.0 && self.hd95 == 0.0, "self distances");
  const Labeling empty(4, 4, 0);
  expect(region_scores(empty, empty).dice == 1.0, "both empty");
  expect(region_scores(a, empty).dice == 0.0, "one empty");
  expect(std::abs(percentile({0, 1, 2, 3, 4}, 0.95) - 3.8) < 1e-12, "percentile interpolation");
  r.ok = failures.empty();
  r.detail = failures.empty() ? "all metric oracles hold" : "failed: " + failures.front();
  return r;
}

inline SuiteResult descent(int cases, std::uint64_t seed) {
  SuiteResult r{"rgc_descent", true, "", 0.0};
  std::mt19937_64 rng(seed);
  int used = 0, reduced = 0, tries = 0;
  while (used < cases && tries < 50 * cases) {
    ++tries;
    const GridGraph g = random_grid_graph(rng, 6, 6, 0.5);
    const Labeling gt = random_labeling(rng, 6, 6);
    const DescentCheck d = rgc_descent_check(g, gt, 1e-3);
    if (!(d.gap_before > 0.0)) continue;
    ++used;
    if (d.reduced()) ++reduced;
  }
  r.ok = used == cases && reduced >= static_cast<int>(std::ceil(0.95 * cases));
  r.detail = std::to_string(reduced) + "/" + std::to_string(used) + " steps reduce the gap";
  return r;
}

inline SuiteResult op_gradients(std::uint64_t seed) {
  SuiteResult r{"op_gradients", true, "", 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  auto rand_tensor = [&](Shape s) {
    Tensor t(std::move(s));
    for (float& v : t.data) v = u(rng);
    return t;
  };
  const Tensor x = rand_tensor({1, 2, 4, 4});
  const Tensor k = rand_tensor({3, 2, 3, 3}), bias = rand_tensor({3});
  const double err = grad_check(
      [&](Tape& t, Var in) {
        Var y = conv2d(in, t.constant(k), t.constant(bias));
        y = upsample_bilinear2x(maxpool2x2(relu(y)));
        return channel_softmax(y);
      },
      x, 1e-3);
  r.ok = err <= 1e-2;
  r.detail = "relative gradient error " + format_number(err);
  return r;
}

}  // namespace selftest

// Runs the suites; the fast level is sized to finish in seconds.
inline std::vector<SuiteResult> run_selftest(bool full, std::uint64_t seed = 7) {
  using clock = std::chrono::steady_clock;
  std::vector<SuiteResult> out;
  auto timed = [&](auto&& fn) {
    const auto t0 = clock::now();
    SuiteResult r = fn();
    r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    out.push_back(std::move(r));
  };
  timed([&] { return selftest::solver_vs_bruteforce(full ? 200 : 50, seed); });
  timed([&] { return selftest::capacity_derivatives(full ? 500 : 100, seed + 1); });
  timed([&] { return selftest::loss_gradients(full ? 50 : 10, seed + 2); });
  timed([&] { return selftest::metric_oracles(); });
  timed([&] { return selftest::op_gradients(seed + 3); });
  if (full) timed([&] { return selftest::descent(200, seed + 4); });
  return out;
}

}  // namespace gcseg
