// Acceptance run: one PASS/FAIL line per criterion. Oracles here are written
// independently of the library code they check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gcseg/train.hpp"

using namespace gcseg;

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

GridGraph random_graph(std::mt19937_64& rng, int H, int W, bool independent_tlinks) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GridGraph g(H, W, 0.2 + 1.8 * u(rng));
  for (std::size_t p = 0; p < g.node_count(); ++p) {
    g.phi_s[p] = u(rng);
    g.phi_t[p] = independent_tlinks ? u(rng) : 1.0 - g.phi_s[p];
  }
  for (double& v : g.psi_h) v = u(rng);
  for (double& v : g.psi_v) v = u(rng);
  return g;
}

// Capacity of a labeling, computed directly from the energy.
double energy(const GridGraph& g, const std::vector<int>& l) {
  double c = 0.0;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const int p = y * g.width + x;
      c += l[p] ? g.phi_t[p] : g.phi_s[p];
      if (x + 1 < g.width && l[p] != l[p + 1]) c += g.gamma * g.psi_h[y * (g.width - 1) + x];
      if (y + 1 < g.height && l[p] != l[p + g.width]) c += g.gamma * g.psi_v[p];
    }
  return c;
}

struct Enumeration {
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> argmin;
  int near_ties = 0;  // labelings within `window` of the optimum
};

Enumeration enumerate(const GridGraph& g, double window) {
  const int n = g.height * g.width;
  std::vector<double> caps(std::size_t{1} << n);
  std::vector<int> l(static_cast<std::size_t>(n));
  for (std::size_t m = 0; m < caps.size(); ++m) {
    for (int p = 0; p < n; ++p) l[p] = static_cast<int>((m >> p) & 1u);
    caps[m] = energy(g, l);
  }
  Enumeration e;
  std::size_t arg = 0;
  for (std::size_t m = 0; m < caps.size(); ++m)
    if (caps[m] < e.best) {
      e.best = caps[m];
      arg = m;
    }
  for (double c : caps) e.near_ties += c <= e.best + window;
  e.argmin.resize(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) e.argmin[p] = static_cast<int>((arg >> p) & 1u);
  return e;
}

std::vector<int> as_vector(const Labeling& l) { return std::vector<int>(l.labels.begin(), l.labels.end()); }

// 1. solver exactness against exhaustive enumeration
Outcome criterion1() {
  std::mt19937_64 rng(101);
  const auto t0 = Clock::now();
  int cap_ok = 0, unique = 0, part_ok = 0;
  for (int i = 0; i < 200; ++i) {
    const int H = 1 + static_cast<int>(rng() % 4), W = 1 + static_cast<int>(rng() % 4);
    const GridGraph g = random_graph(rng, H, W, i % 2 == 1);
    const CutResult r = solve(g);
    const CutResult b = brute_force_mincut(g);
    const Enumeration e = enumerate(g, 1e-12 * std::max(1.0, std::abs(b.capacity)));
    const double tol = 1e-9 * std::max(1.0, e.best);
    if (std::abs(r.capacity - e.best) <= tol && std::abs(b.capacity - e.best) <= tol &&
        std::abs(energy(g, as_vector(r.labeling)) - e.best) <= tol)
      ++cap_ok;
    if (e.near_ties == 1) {
      ++unique;
      part_ok += as_vector(r.labeling) == e.argmin && r.labeling == b.labeling;
    }
  }
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "capacity %d/200, partition %d/%d unique optima, %.2f s", cap_ok, part_ok, unique,
                secs);
  return {cap_ok == 200 && part_ok == unique && secs < 10.0, buf};
}

// 2. capacity derivative is the cut indicator
Outcome criterion2() {
  std::mt19937_64 rng(202);
  const double h = 1e-5;
  int matched = 0, exceptions = 0, explained = 0;
  for (int i = 0; i < 500; ++i) {
    const GridGraph g = random_graph(rng, 3, 4, false);
    const int p = static_cast<int>(rng() % 12);
    EdgeId e = EdgeId::source(p);
    switch (rng() % 4) {
      case 0: e = EdgeId::source(p); break;
      case 1: e = EdgeId::sink(p); break;
      case 2: e = p % 4 < 3 ? EdgeId::nlink(p, p + 1) : EdgeId::nlink(p - 1, p); break;
      default: e = p / 4 < 2 ? EdgeId::nlink(p, p + 4) : EdgeId::nlink(p - 4, p); break;
    }
    const DerivativeCheck c = capacity_derivative_check(g, e, h);
    const bool indicator = c.analytic == 0.0 || c.analytic == 1.0;
    if (indicator && std::abs(c.analytic - c.numeric) <= 1e-6) {
      ++matched;
      continue;
    }
    ++exceptions;
    // a non-unique cut means another labeling is optimal somewhere in [w - h, w + h]
    const bool tie = enumerate(g, 2.0 * h).near_ties > 1;
    explained += tie && c.status == DerivativeStatus::skipped_non_unique;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d/500 match within 1e-6, %d exceptions, %d at detected non-unique cuts", matched,
                exceptions, explained);
  return {matched >= 475 && explained == exceptions, buf};
}

// 3. one rGC gradient step on the edge weights shrinks the capacity gap
Outcome criterion3() {
  std::mt19937_64 rng(303);
  int cases = 0, reduced = 0, attempts = 0;
  while (cases < 200 && attempts < 10000) {
    ++attempts;
    const GridGraph g = random_graph(rng, 3, 4, false);
    Labeling gt(3, 4);
    for (auto& v : gt.labels) v = static_cast<std::uint8_t>(rng() & 1u);
    const double gap0 = energy(g, as_vector(gt)) - enumerate(g, 0.0).best;
    if (gap0 <= 1e-12) continue;
    ++cases;
    const RGCLossResult r = rgc_forward(g, solve(g), gt);
    GridGraph next = g;
    const double step = 1e-3;
    for (std::size_t i = 0; i < next.phi_s.size(); ++i) {
      next.phi_s[i] = std::max(0.0, next.phi_s[i] - step * r.grads.phi_s[i]);
      next.phi_t[i] = std::max(0.0, next.phi_t[i] - step * r.grads.phi_t[i]);
    }
    for (std::size_t i = 0; i < next.psi_h.size(); ++i)
      next.psi_h[i] = std::max(0.0, next.psi_h[i] - step * r.grads.psi_h[i]);
    for (std::size_t i = 0; i < next.psi_v.size(); ++i)
      next.psi_v[i] = std::max(0.0, next.psi_v[i] - step * r.grads.psi_v[i]);
    const double gap1 = energy(next, as_vector(gt)) - enumerate(next, 0.0).best;
    const DescentCheck lib = rgc_descent_check(g, gt, step);
    reduced += gap1 < gap0 && lib.reduced();
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "gap reduced in %d/%d non-zero-loss cases at step 1e-3", reduced, cases);
  return {cases == 200 && reduced >= 190, buf};
}

// 4. pixel losses: gradients and hand-computed values
double ref_bce(const std::vector<double>& s, const std::vector<double>& t, const Labeling& g) {
  double acc = 0.0;
  for (std::size_t p = 0; p < s.size(); ++p)
    acc -= g[p] ? std::log(std::clamp(s[p], 1e-7, 1 - 1e-7)) : std::log(std::clamp(t[p], 1e-7, 1 - 1e-7));
  return acc / static_cast<double>(s.size());
}

double ref_dice(const std::vector<double>& s, const std::vector<double>& t, const Labeling& g) {
  double ng = 0.0, nb = 0.0;
  for (std::size_t p = 0; p < s.size(); ++p) (g[p] ? ng : nb) += 1.0;
  const double ws = 1.0 / (ng * ng + 1e-8), wt = 1.0 / (nb * nb + 1e-8);
  double num = 0.0, den = 0.0;
  for (std::size_t p = 0; p < s.size(); ++p) {
    num += ws * g[p] * s[p] + wt * (1 - g[p]) * t[p];
    den += ws * (g[p] + s[p]) + wt * ((1 - g[p]) + t[p]);
  }
  return 1.0 - 2.0 * num / (den + 1e-8);
}

bool four_digits(double got, double want) {
  char a[32], b[32];
  std::snprintf(a, sizeof a, "%.4g", got);
  std::snprintf(b, sizeof b, "%.4g", want);
  return std::string(a) == b;
}

Outcome criterion4() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<float> u(0.02f, 0.98f);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<float> fs(16), ft(16);
    Labeling g(4, 4);
    for (std::size_t p = 0; p < 16; ++p) {
      fs[p] = u(rng);
      ft[p] = 1.0f - fs[p];
      g[p] = static_cast<std::uint8_t>(rng() & 1u);
    }
    g[0] = 1;
    g[1] = 0;
    for (int which = 0; which < 2; ++which) {
      const PixelLoss l = which ? generalized_dice(fs, ft, g) : bce(fs, ft, g);
      std::vector<double> s(fs.begin(), fs.end()), t(ft.begin(), ft.end());
      auto ref = which ? ref_dice : ref_bce;
      for (std::size_t p = 0; p < 16; ++p)
        for (int side = 0; side < 2; ++side) {
          auto& v = side ? t : s;
          const double keep = v[p], h = 1e-6;
          v[p] = keep + h;
          const double up = ref(s, t, g);
          v[p] = keep - h;
          const double down = ref(s, t, g);
          v[p] = keep;
          const double analytic = side ? l.grad_phi_t[p] : l.grad_phi_s[p];
          worst = std::max(worst, std::abs(analytic - (up - down) / (2 * h)));
        }
    }
  }
  Labeling g16(4, 4);
  for (std::size_t p = 0; p < 16; p += 3) g16[p] = 1;
  const double ln2 = bce(std::vector<float>(16, 0.5f), std::vector<float>(16, 0.5f), g16).value;
  Labeling one(1, 1, 1);
  const std::vector<float> tiny{1e-7f}, rest{1.0f - 1e-7f};
  const double clamp = bce(tiny, rest, one).value;
  Labeling two(1, 2);
  two[0] = 1;
  const std::vector<float> s2{0.8f, 0.4f}, t2{0.2f, 0.6f};
  const double dice2 = generalized_dice(s2, t2, two).value;
  const bool grads_ok = worst <= 1e-3;
  const bool v1 = four_digits(ln2, 0.6931), v2 = four_digits(dice2, 0.17647), v3 = four_digits(clamp, 16.118);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "max |grad - fd| %.2e; ln2 %.6f (%s), dice two-pixel %.6f vs 0.17647 (%s), clamp %.4f (%s)", worst, ln2,
                v1 ? "ok" : "mismatch", dice2, v2 ? "ok" : "mismatch", clamp, v3 ? "ok" : "mismatch");
  return {grads_ok && v1 && v2 && v3, buf};
}

// 5. parameter gradients through forward, solve and losses
Outcome criterion5() {
  ModelConfig mc;
  mc.seed = 55;
  Model m(mc);
  SyntheticSpec spec;
  spec.height = spec.width = 8;
  spec.overlap = 0.5;
  spec.seed = 5;
  const Sample s = synthesize(spec, 0);
  const std::array<double, 3> alpha{0.3, 0.3, 0.4};
  auto total = [&](Labeling* cut) {
    ImageTerms t = compute_terms(m, s, Mode::gcdlseg);
    if (cut) *cut = t.mincut->labeling;
    return alpha[0] * t.ce.value + alpha[1] * t.dice.value + alpha[2] * t.rgc->loss;
  };
  {
    ImageTerms t = compute_terms(m, s, Mode::gcdlseg);
    backward_terms(t, alpha, 1.0);
    m.zero_grad();
    m.accumulate(t.fp);
  }
  std::mt19937_64 rng(505);
  const int samples = 100;
  const double h = 1e-3;
  int passed = 0, ties = 0, kinks = 0, unexplained = 0;
  Labeling base_cut, up_cut, down_cut;
  const double base = total(&base_cut);
  for (int i = 0; i < samples; ++i) {
    auto& params = m.params();
    auto& p = params[rng() % params.size()].tensor;
    const std::size_t k = rng() % p.data.size();
    const float keep = p.data[k];
    p.data[k] = static_cast<float>(keep + h);
    const double up = total(&up_cut);
    p.data[k] = static_cast<float>(keep - h);
    const double down = total(&down_cut);
    p.data[k] = keep;
    const double numeric = (up - down) / (2 * h), analytic = p.grad[k];
    if (std::abs(analytic - numeric) <= 1e-2 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-5) {
      ++passed;
      continue;
    }
    // one-sided slopes disagree when a relu/maxpool kink lies inside the window
    const double fwd = (up - base) / h, bwd = (base - down) / h;
    if (up_cut != base_cut || down_cut != base_cut) {
      ++ties;
      std::printf("  criterion 5 log: min-cut change at sampled parameter %d (analytic %.4g numeric %.4g)\n", i,
                  analytic, numeric);
    } else if (std::abs(fwd - bwd) > 1e-2 * std::max({std::abs(fwd), std::abs(bwd), 1e-3})) {
      ++kinks;
      std::printf("  criterion 5 log: kink at sampled parameter %d (slopes %.4g / %.4g)\n", i, fwd, bwd);
    } else {
      ++unexplained;
      std::printf("  criterion 5 log: unexplained mismatch at sampled parameter %d (analytic %.4g numeric %.4g)\n",
                  i, analytic, numeric);
    }
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "%d/%d parameters within 1e-2, exceptions: %d min-cut changes, %d kinks, %d unexplained",
                passed, samples, ties, kinks, unexplained);
  return {passed >= static_cast<int>(0.9 * samples) && unexplained == 0, buf};
}

// 6 and 7 share one set of trained models.
constexpr int kSeeds = 3;
constexpr int kEpochs = 12;

struct SeedRun {
  double gc = 0, ng = 0, pp = 0;
  std::vector<double> gc_eps, ng_eps;
};

std::vector<SeedRun> g_runs;

void split_dataset(const SyntheticSpec& spec, std::vector<Sample>& tr, std::vector<Sample>& va, std::vector<Sample>& te) {
  for (int i = 0; i < spec.count; ++i) {
    Sample s = synthesize(spec, static_cast<std::uint64_t>(i));
    const std::string split = split_of(spec, i);
    (split == "train" ? tr : split == "val" ? va : te).push_back(std::move(s));
  }
}

void run_toy_experiments() {
  for (int seed = 1; seed <= kSeeds; ++seed) {
    SyntheticSpec spec;
    spec.overlap = 0.8;
    spec.seed = static_cast<std::uint64_t>(seed);
    std::vector<Sample> tr, va, te;
    split_dataset(spec, tr, va, te);
    TrainConfig cfg;
    cfg.epochs = kEpochs;
    cfg.seed = cfg.model.seed = static_cast<std::uint64_t>(seed);
    cfg.mode = Mode::gcdlseg;
    const auto t0 = Clock::now();
    const TrainResult gc = train(cfg, tr, va);
    cfg.mode = Mode::nographcut;
    const TrainResult ng = train(cfg, tr, va);
    EvalMethod pp;
    pp.name = "postprocess";
    pp.predict = [&ng](const Sample& s) { return postprocess_graphcut(ng.model, s, ng.model.config().gamma); };
    const std::vector<EvalMethod> methods{method_from_model("gcdlseg", gc.model, Mode::gcdlseg, gc.alpha),
                                          method_from_model("nographcut", ng.model, Mode::nographcut, ng.alpha)};
    const auto clean = evaluate({methods[0], methods[1], pp}, te, "test");
    const auto attacked = evaluate(methods, te, "test", default_epsilons());
    SeedRun r;
    r.gc = mean_dice(clean, "gcdlseg");
    r.ng = mean_dice(clean, "nographcut");
    r.pp = mean_dice(clean, "postprocess");
    for (double e : default_epsilons()) {
      r.gc_eps.push_back(mean_dice(attacked, "gcdlseg", e));
      r.ng_eps.push_back(mean_dice(attacked, "nographcut", e));
    }
    std::printf("  seed %d: dice gcdlseg %.4f postprocess %.4f nographcut %.4f | eps 0.1: gcdlseg %.4f nographcut %.4f (%.0f s)\n",
                seed, r.gc, r.pp, r.ng, r.gc_eps.back(), r.ng_eps.back(), seconds_since(t0));
    std::fflush(stdout);
    g_runs.push_back(std::move(r));
  }
}

Outcome criterion6() {
  double gc = 0, ng = 0, pp = 0;
  for (const auto& r : g_runs) {
    gc += r.gc / kSeeds;
    ng += r.ng / kSeeds;
    pp += r.pp / kSeeds;
  }
  // "approximately" allows postprocess to trail nographcut by half a Dice point
  const bool order = gc >= pp && pp >= ng - 0.005;
  const bool margin = gc - ng >= 0.005;
  char buf[200];
  std::snprintf(buf, sizeof buf, "mean test dice over %d seeds: gcdlseg %.4f, postprocess %.4f, nographcut %.4f (gap %+.4f)",
                kSeeds, gc, pp, ng, gc - ng);
  return {order && margin, buf};
}

Outcome criterion7() {
  const std::size_t n = default_epsilons().size();
  std::vector<double> gc(n, 0.0), ng(n, 0.0);
  for (const auto& r : g_runs)
    for (std::size_t i = 0; i < n; ++i) {
      gc[i] += r.gc_eps[i] / kSeeds;
      ng[i] += r.ng_eps[i] / kSeeds;
    }
  const double drop_gc = gc.front() - gc.back(), drop_ng = ng.front() - ng.back();
  std::string curve = "dice by eps gcdlseg";
  char num[32];
  for (double v : gc) {
    std::snprintf(num, sizeof num, " %.4f", v);
    curve += num;
  }
  curve += " nographcut";
  for (double v : ng) {
    std::snprintf(num, sizeof num, " %.4f", v);
    curve += num;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "; drop gcdlseg %.4f vs nographcut %.4f", drop_gc, drop_ng);
  return {drop_gc > 0.0 && drop_ng > 0.0 && drop_gc < drop_ng, curve + buf};
}

// 8. two identical train + eval runs
Outcome criterion8() {
  SyntheticSpec spec;
  spec.count = 40;
  spec.overlap = 0.5;
  std::vector<Sample> tr, va, te;
  split_dataset(spec, tr, va, te);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.augment = true;
  const fs::path root = fs::temp_directory_path() / "gcseg_acceptance_determinism";
  fs::remove_all(root);
  std::vector<std::string> csv, ckpt, eval;
  for (int run = 0; run < 2; ++run) {
    const std::string dir = (root / ("run" + std::to_string(run))).string();
    const TrainResult r = train(cfg, tr, va, dir);
    csv.push_back(read_file(dir + "/metrics.csv"));
    ckpt.push_back(read_file(dir + "/best.ckpt") + read_file(dir + "/last.ckpt"));
    eval.push_back(format_table(
        evaluate({method_from_model("gcdlseg", r.model, Mode::gcdlseg, r.alpha)}, te, "test", {0.0, 0.04})));
  }
  fs::remove_all(root);
  const bool same = csv[0] == csv[1] && ckpt[0] == ckpt[1] && eval[0] == eval[1];
  char buf[160];
  std::snprintf(buf, sizeof buf, "metrics.csv %s, checkpoints %s, eval table %s", csv[0] == csv[1] ? "identical" : "differ",
                ckpt[0] == ckpt[1] ? "identical" : "differ", eval[0] == eval[1] ? "identical" : "differ");
  return {same, buf};
}

// 9. performance smoke
Outcome criterion9() {
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GridGraph g(256, 256, 1.0);
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) {
      const double d = std::hypot(y - 128.0, x - 128.0) / 90.0;
      const double p = std::clamp(1.0 - d + 0.4 * (u(rng) - 0.5), 0.0, 1.0);
      g.phi_s[static_cast<std::size_t>(y) * 256 + x] = p;
      g.phi_t[static_cast<std::size_t>(y) * 256 + x] = 1.0 - p;
    }
  for (double& v : g.psi_h) v = u(rng);
  for (double& v : g.psi_v) v = u(rng);
  auto t0 = Clock::now();
  solve(g);
  const double solve_s = seconds_since(t0);

  SyntheticSpec spec;
  spec.count = 200;
  std::vector<Sample> samples;
  for (int i = 0; i < spec.count; ++i) samples.push_back(synthesize(spec, static_cast<std::uint64_t>(i)));
  TrainConfig cfg;
  cfg.epochs = 1;
  t0 = Clock::now();
  train(cfg, samples, {});
  const double epoch_s = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "256x256 solve %.3f s, gcdlseg epoch on 200 32x32 samples %.1f s (%d threads)", solve_s,
                epoch_s, resolve_threads());
  return {solve_s < 1.0 && epoch_s < 120.0, buf};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    Outcome o{false, ""};
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d: %s %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, criterion1);
  report(2, criterion2);
  report(3, criterion3);
  report(4, criterion4);
  report(5, criterion5);
  bool trained = true;
  try {
    run_toy_experiments();
  } catch (const std::exception& e) {
    trained = false;
    std::printf("  toy experiments failed: %s\n", e.what());
  }
  report(6, [&] { return trained ? criterion6() : Outcome{false, "no trained models"}; });
  report(7, [&] { return trained ? criterion7() : Outcome{false, "no trained models"}; });
  report(8, criterion8);
  report(9, criterion9);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
