#pragma once

// Training loop, predictors, FGSM attack and evaluation tables.
//
// One training step over a batch of B images:
//   1. per image (parallel): forward, BCE and Dice on the t-links; in gcdlseg
//      mode also build the grid graph, solve the min cut and evaluate the
//      residual graph-cut loss.
//   2. serial: update the loss weights from the batch-mean losses.
//   3. per image (parallel): backward from the weighted head gradients, scaled
//      by 1/B. The rGC gradient enters through the edge weights: t-link
//      gradients seed the softmax output, n-link gradients are chained through
//      the cosine affinity into the feature map.
//   4. serial: accumulate parameter gradients in batch order, Adam update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gcseg/data.hpp"
#include "gcseg/errors.hpp"
#include "gcseg/gcloss.hpp"
#include "gcseg/graph.hpp"
#include "gcseg/losses.hpp"
#include "gcseg/maxflow.hpp"
#include "gcseg/metrics.hpp"
#include "gcseg/model.hpp"
#include "gcseg/parallel.hpp"

namespace gcseg {

enum class Mode { gcdlseg, nographcut };

inline std::string mode_name(Mode m) { return m == Mode::gcdlseg ? "gcdlseg" : "nographcut"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "gcdlseg") return Mode::gcdlseg;
  if (s == "nographcut") return Mode::nographcut;
  throw InvalidArgument("unknown mode '" + s + "' (expected gcdlseg or nographcut)");
}

// ---------------------------------------------------------------------------
// optimiser

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<Model::Param>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw InconsistentState("optimiser state does not match the parameter list");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i].tensor;
      if (p.grad.size() != p.data.size()) p.zero_grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        const double g = static_cast<double>(p.grad[k]) + cfg_.weight_decay * p.data[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double upd = cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
        p.data[k] = static_cast<float>(p.data[k] - upd);
      }
    }
  }

  std::size_t steps() const { return t_; }

private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// metrics csv

struct MetricsRow {
  std::optional<long> epoch, step;
  std::string split, method, id;
  std::optional<double> l_ce, l_dice, l_rgc, alpha1, alpha2, alpha3, l_total;
  std::optional<double> dice, precision, recall, asd, hd, hd95, epsilon;
};

inline constexpr const char* kMetricsHeader =
    "epoch,step,split,method,id,L_ce,L_Dice,L_rGC,alpha1,alpha2,alpha3,L_total,dice,precision,recall,asd,hd,hd95,"
    "epsilon";

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string format_row(const MetricsRow& r) {
  std::string out = r.epoch ? std::to_string(*r.epoch) : "";
  out += ',';
  if (r.step) out += std::to_string(*r.step);
  for (const auto* s : {&r.split, &r.method, &r.id}) out += ',' + *s;
  for (const auto* v : {&r.l_ce, &r.l_dice, &r.l_rgc, &r.alpha1, &r.alpha2, &r.alpha3, &r.l_total, &r.dice,
                        &r.precision, &r.recall, &r.asd, &r.hd, &r.hd95, &r.epsilon}) {
    out += ',';
    if (*v) out += format_number(**v);
  }
  return out;
}

inline std::string format_table(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += format_row(r) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// per-image terms

inline Tensor image_tensor(const Sample& s) {
  return Tensor({1, 1, s.height, s.width}, s.image);
}

// Losses and head gradients of one image at unit weights.
struct ImageTerms {
  ForwardPass fp;
  PixelLoss ce, dice;
  std::optional<GridGraph> graph;
  std::optional<CutResult> mincut;
  std::optional<RGCLossResult> rgc;
  Labeling prediction;
};

inline ImageTerms compute_terms(const Model& model, const Sample& s, Mode mode, bool input_grad = false) {
  ImageTerms t;
  t.fp = model.forward(image_tensor(s), input_grad);
  const TLinkMap tl = t.fp.tlink_map(0);
  t.ce = bce(tl.phi_s, tl.phi_t, s.mask);
  t.dice = generalized_dice(tl.phi_s, tl.phi_t, s.mask);
  if (mode == Mode::gcdlseg) {
    t.graph = build_graph(tl, t.fp.feature_map(0), model.config().gamma);
    t.mincut = solve(*t.graph);
    const double c_gt = cut_capacity(*t.graph, s.mask);
    if (t.mincut->capacity > c_gt + 1e-9)
      throw InconsistentState("min cut capacity " + format_number(t.mincut->capacity) +
                              " exceeds ground-truth cut capacity " + format_number(c_gt) + " on " + s.id);
    t.rgc = rgc_forward(*t.graph, *t.mincut, s.mask);
    t.prediction = t.mincut->labeling;
  } else {
    t.prediction = argmax_labeling(tl);
  }
  return t;
}

// Backward of alpha-weighted terms times `scale`, seeded at the two heads.
inline void backward_terms(ImageTerms& t, const std::array<double, 3>& alpha, double scale) {
  const std::size_t n = t.ce.grad_phi_s.size();
  std::vector<float> g_tl(2 * n);
  for (std::size_t p = 0; p < n; ++p) {
    double gs = alpha[0] * t.ce.grad_phi_s[p] + alpha[1] * t.dice.grad_phi_s[p];
    double gt = alpha[0] * t.ce.grad_phi_t[p] + alpha[1] * t.dice.grad_phi_t[p];
    if (t.rgc) {
      gs += alpha[2] * t.rgc->grads.phi_s[p];
      gt += alpha[2] * t.rgc->grads.phi_t[p];
    }
    g_tl[p] = static_cast<float>(scale * gs);
    g_tl[n + p] = static_cast<float>(scale * gt);
  }
  std::vector<float> g_feat;
  if (t.rgc && alpha[2] != 0.0) {
    const auto gf = psi_backward(t.fp.feature_map(0), t.rgc->grads.psi_h, t.rgc->grads.psi_v);
    g_feat.resize(gf.size());
    for (std::size_t i = 0; i < gf.size(); ++i) g_feat[i] = static_cast<float>(scale * alpha[2] * gf[i]);
  }
  Model::backward_pass(t.fp, g_tl, g_feat);
}

// ---------------------------------------------------------------------------
// edge-weight descent check

struct DescentCheck {
  double gap_before = 0.0;
  double gap_after = 0.0;
  bool reduced() const { return gap_after < gap_before; }
};

// Takes one gradient step of size `step` on the stored edge weights using only
// the rGC gradient, re-solves and reports the capacity gap before and after.
// Weights are kept non-negative.
inline DescentCheck rgc_descent_check(const GridGraph& graph, const Labeling& gt_mask, double step) {
  const CutResult base = solve(graph);
  const RGCLossResult r = rgc_forward(graph, base, gt_mask);
  GridGraph next = graph;
  auto apply = [&](std::vector<double>& w, const std::vector<double>& g) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::max(0.0, w[i] - step * g[i]);
  };
  apply(next.phi_s, r.grads.phi_s);
  apply(next.phi_t, r.grads.phi_t);
  apply(next.psi_h, r.grads.psi_h);
  apply(next.psi_v, r.grads.psi_v);
  const CutResult after = solve(next);
  return {r.gt_capacity - r.min_capacity, cut_capacity(next, gt_mask) - after.capacity};
}

// ---------------------------------------------------------------------------
// training

struct TrainConfig {
  ModelConfig model;
  Mode mode = Mode::gcdlseg;
  int epochs = 20;
  int batch_size = 4;
  AdamConfig adam;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // epochs between numbered checkpoints, 0 = off
  bool augment = false;
  std::string init_from;  // optional checkpoint to start from
  int threads = 0;

  void validate() const {
    model.validate();
    if (epochs <= 0) throw InvalidArgument("train.epochs must be positive");
    if (batch_size <= 0) throw InvalidArgument("train.batch_size must be positive");
    if (!(adam.lr > 0.0) || !(adam.eps > 0.0)) throw InvalidArgument("train.lr and train.adam_eps must be positive");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
      throw InvalidArgument("Adam betas must lie in [0, 1)");
    if (!(adam.weight_decay >= 0.0)) throw InvalidArgument("train.weight_decay must be non-negative");
    if (checkpoint_every < 0) throw InvalidArgument("train.checkpoint_every must be non-negative");
    if (mode == Mode::gcdlseg && !(model.gamma > 0.0))
      throw InvalidArgument("graph.gamma must be positive in gcdlseg mode");
  }
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  double best_val_dice = -1.0;
  int best_epoch = 0;
  std::array<double, 3> alpha{};
  std::vector<MetricsRow> rows;
};

// Model prediction for one sample: min cut in gcdlseg mode, argmax otherwise.
inline Labeling predict(const Model& model, const Sample& s, Mode mode) {
  const ForwardPass fp = model.forward(image_tensor(s));
  const TLinkMap tl = fp.tlink_map(0);
  if (mode == Mode::nographcut) return argmax_labeling(tl);
  return solve(build_graph(tl, fp.feature_map(0), model.config().gamma)).labeling;
}

// Min cut on the graph built from a model's maps with an explicit gamma.
inline Labeling postprocess_graphcut(const Model& model, const Sample& s, double gamma) {
  const ForwardPass fp = model.forward(image_tensor(s));
  return solve(build_graph(fp.tlink_map(0), fp.feature_map(0), gamma)).labeling;
}

namespace detail {

inline std::vector<std::pair<std::string, std::string>> checkpoint_meta(Mode mode, const std::array<double, 3>& alpha,
                                                                        int epoch, double val_dice) {
  return {{"mode", mode_name(mode)},
          {"alpha1", format_number(alpha[0])},
          {"alpha2", format_number(alpha[1])},
          {"alpha3", format_number(alpha[2])},
          {"epoch", std::to_string(epoch)},
          {"val_dice", format_number(val_dice)}};
}

inline void dump_diagnostics(const std::string& out_dir, const std::vector<const Sample*>& batch,
                             const std::vector<ImageTerms>& terms) {
  if (out_dir.empty()) return;
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(out_dir) / "diagnostic";
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream ids(dir / "batch_ids.txt");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ids << batch[i]->id << " L_ce=" << format_number(terms[i].ce.value)
        << " L_Dice=" << format_number(terms[i].dice.value);
    if (terms[i].rgc) ids << " L_rGC=" << format_number(terms[i].rgc->raw_loss);
    ids << "\n";
    if (terms[i].graph) {
      std::ofstream g(dir / ("graph_" + batch[i]->id + ".txt"));
      write_graph(g, *terms[i].graph);
    }
  }
}

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

}  // namespace detail

inline Model initial_model(const TrainConfig& cfg) {
  if (cfg.init_from.empty()) return Model(cfg.model);
  const Checkpoint ck = load_checkpoint(cfg.init_from);
  ModelConfig want = cfg.model, have = ck.config;
  want.gamma = have.gamma = 0.0;
  want.seed = have.seed = 0;
  if (want != have) throw InvalidArgument("initial checkpoint " + cfg.init_from + " has a different architecture");
  Checkpoint adjusted = ck;
  adjusted.config.gamma = cfg.model.gamma;
  adjusted.config.seed = cfg.model.seed;
  return model_from_checkpoint(adjusted);
}

// Trains on `train_set`, selecting the epoch with the best mean validation
// Dice. With a non-empty out_dir writes metrics.csv, best.ckpt, last.ckpt and
// optional epoch_N.ckpt files. Progress lines go to `log`.
inline TrainResult train(const TrainConfig& cfg, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const std::string& out_dir = "",
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw InvalidArgument("training split is empty");
  namespace fs = std::filesystem;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir);
  }

  const int threads = resolve_threads(cfg.threads);
  const std::string method = mode_name(cfg.mode);
  Model model = initial_model(cfg);
  Adam adam(cfg.adam);
  CovWeights<3> cov3;
  CovWeights<2> cov2;
  TrainResult result{model, -1.0, 0, {}, {}};
  std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(train_set.size());
  long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), order_rng);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      ++step;
      std::vector<Sample> augmented;
      std::vector<const Sample*> batch(B);
      if (cfg.augment) {
        augmented.resize(B);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t idx = order[start + b];
          auto rng = detail::sample_rng(cfg.seed + static_cast<std::uint64_t>(step), idx);
          augmented[b] = augment(train_set[idx], rng);
          batch[b] = &augmented[b];
        }
      } else {
        for (std::size_t b = 0; b < B; ++b) batch[b] = &train_set[order[start + b]];
      }

      std::vector<ImageTerms> terms(B);
      parallel_for(B, threads, [&](std::size_t b) { terms[b] = compute_terms(model, *batch[b], cfg.mode); });

      std::vector<double> ce(B), dc(B), rg(B, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        ce[b] = terms[b].ce.value;
        dc[b] = terms[b].dice.value;
        if (terms[b].rgc) rg[b] = terms[b].rgc->loss;
      }
      const double l_ce = detail::mean_of(ce), l_dice = detail::mean_of(dc), l_rgc = detail::mean_of(rg);
      if (!std::isfinite(l_ce) || !std::isfinite(l_dice) || !std::isfinite(l_rgc)) {
        detail::dump_diagnostics(out_dir, batch, terms);
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }

      std::array<double, 3> alpha{};
      if (cfg.mode == Mode::gcdlseg) {
        alpha = cov3.update({l_ce, l_dice, l_rgc});
      } else {
        const auto w = cov2.update({l_ce, l_dice});
        alpha = {w[0], w[1], 0.0};
      }
      const LossBundle bundle = total_loss(l_ce, l_dice, l_rgc, alpha);
      result.alpha = alpha;

      const double scale = 1.0 / static_cast<double>(B);
      parallel_for(B, threads, [&](std::size_t b) { backward_terms(terms[b], alpha, scale); });
      model.zero_grad();
      for (auto& t : terms) model.accumulate(t.fp);
      adam.step(model.params());

      double dsum = 0.0, psum = 0.0, rsum = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const RegionScores rs = region_scores(terms[b].prediction, batch[b]->mask);
        dsum += rs.dice;
        psum += rs.precision;
        rsum += rs.recall;
      }
      MetricsRow row;
      row.epoch = epoch;
      row.step = step;
      row.split = "train";
      row.method = method;
      for (std::size_t b = 0; b < B; ++b) row.id += (b ? ";" : "") + batch[b]->id;
      row.l_ce = bundle.l_ce;
      row.l_dice = bundle.l_dice;
      if (cfg.mode == Mode::gcdlseg) row.l_rgc = bundle.l_rgc;
      row.alpha1 = alpha[0];
      row.alpha2 = alpha[1];
      row.alpha3 = alpha[2];
      row.l_total = bundle.l_total;
      row.dice = dsum / static_cast<double>(B);
      row.precision = psum / static_cast<double>(B);
      row.recall = rsum / static_cast<double>(B);
      result.rows.push_back(std::move(row));
    }

    // validation
    std::vector<RegionScores> vs(val_set.size());
    parallel_for(val_set.size(), threads,
                 [&](std::size_t i) { vs[i] = region_scores(predict(model, val_set[i], cfg.mode), val_set[i].mask); });
    MetricsRow vrow;
    vrow.epoch = epoch;
    vrow.step = step;
    vrow.split = "val";
    vrow.method = method;
    double val_dice = 0.0;
    if (!vs.empty()) {
      double p = 0.0, r = 0.0;
      for (const auto& s : vs) {
        val_dice += s.dice;
        p += s.precision;
        r += s.recall;
      }
      const double n = static_cast<double>(vs.size());
      val_dice /= n;
      vrow.dice = val_dice;
      vrow.precision = p / n;
      vrow.recall = r / n;
    }
    result.rows.push_back(vrow);

    const auto meta = detail::checkpoint_meta(cfg.mode, result.alpha, epoch, val_dice);
    if (val_dice > result.best_val_dice) {
      result.best_val_dice = val_dice;
      result.best_epoch = epoch;
      result.model = model;
      if (!out_dir.empty()) save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), model, meta);
    }
    if (!out_dir.empty()) {
      save_checkpoint((fs::path(out_dir) / "last.ckpt").string(), model, meta);
      if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
        save_checkpoint((fs::path(out_dir) / ("epoch_" + std::to_string(epoch) + ".ckpt")).string(), model, meta);
      write_file((fs::path(out_dir) / "metrics.csv").string(), format_table(result.rows));
    }
    if (log) {
      const MetricsRow& last = result.rows[result.rows.size() - 2];
      *log << "epoch " << epoch << " step " << step << " L_total " << format_number(*last.l_total) << " val_dice "
           << format_number(val_dice) << "\n";
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// attack

// One-step FGSM on the model's own weighted training loss:
//   I_adv = clamp(I + eps * sign(dL/dI), 0, 1)
inline std::vector<float> fgsm_attack(const Model& model, Mode mode, const Sample& s, double eps,
                                      const std::array<double, 3>& alpha) {
  if (!(eps >= 0.0)) throw InvalidArgument("attack epsilon must be non-negative");
  if (eps == 0.0) return s.image;
  ImageTerms t = compute_terms(model, s, mode, true);
  std::array<double, 3> a = alpha;
  if (mode == Mode::nographcut) a[2] = 0.0;
  backward_terms(t, a, 1.0);
  const auto g = t.fp.tape->grad(t.fp.image);
  std::vector<float> out(s.image.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sign = g[i] > 0.0f ? 1.0 : (g[i] < 0.0f ? -1.0 : 0.0);
    out[i] = static_cast<float>(std::clamp(s.image[i] + eps * sign, 0.0, 1.0));
  }
  return out;
}

// Loss weights stored with a checkpoint; equal weights when absent.
inline std::array<double, 3> checkpoint_alpha(const Checkpoint& ck) {
  std::array<double, 3> a{};
  const char* keys[3] = {"alpha1", "alpha2", "alpha3"};
  for (int i = 0; i < 3; ++i) {
    const std::string v = ck.meta_value(keys[i]);
    a[static_cast<std::size_t>(i)] = v.empty() ? 1.0 / 3.0 : std::stod(v);
  }
  return a;
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalMethod {
  std::string name;
  std::function<Labeling(const Sample&)> predict;
  // Adversarial image for a given epsilon; required only for attack sweeps.
  std::function<std::vector<float>(const Sample&, double)> attack;
};

inline EvalMethod method_from_model(std::string name, const Model& model, Mode mode,
                                    const std::array<double, 3>& alpha) {
  EvalMethod m;
  m.name = std::move(name);
  m.predict = [&model, mode](const Sample& s) { return predict(model, s, mode); };
  m.attack = [&model, mode, alpha](const Sample& s, double eps) { return fgsm_attack(model, mode, s, eps, alpha); };
  return m;
}

inline std::vector<double> default_epsilons() { return {0.0, 0.02, 0.04, 0.06, 0.08, 0.10}; }

// Per-image rows followed by a mean row (id "mean") per method and epsilon.
// Surface metrics are blank where undefined and averaged over defined images.
// An empty epsilon list evaluates clean images without an epsilon column.
inline std::vector<MetricsRow> evaluate(const std::vector<EvalMethod>& methods, const std::vector<Sample>& samples,
                                        const std::string& split, const std::vector<double>& epsilons = {},
                                        int threads = 0) {
  std::vector<MetricsRow> rows;
  if (samples.empty()) return rows;
  const int nthreads = resolve_threads(threads);
  std::vector<std::optional<double>> eps_list;
  if (epsilons.empty()) eps_list.push_back(std::nullopt);
  for (double e : epsilons) {
    if (!(e >= 0.0)) throw InvalidArgument("attack epsilon must be non-negative");
    eps_list.push_back(e);
  }
  for (const auto& m : methods) {
    for (const auto& eps : eps_list) {
      if (eps && *eps > 0.0 && !m.attack) throw InvalidArgument("method " + m.name + " cannot be attacked");
      std::vector<MetricsRow> per(samples.size());
      parallel_for(samples.size(), nthreads, [&](std::size_t i) {
        const Sample& s = samples[i];
        Labeling pred;
        if (eps && *eps > 0.0) {
          Sample adv = s;
          adv.image = m.attack(s, *eps);
          pred = m.predict(adv);
        } else {
          pred = m.predict(s);
        }
        MetricsRow r;
        r.split = split;
        r.method = m.name;
        r.id = s.id;
        r.epsilon = eps;
        const RegionScores rs = region_scores(pred, s.mask);
        r.dice = rs.dice;
        r.precision = rs.precision;
        r.recall = rs.recall;
        try {
          const SurfaceScores ss = surface_scores(pred, s.mask);
          r.asd = ss.asd;
          r.hd = ss.hd;
          r.hd95 = ss.hd95;
        } catch (const UndefinedMetric&) {
        }
        per[i] = std::move(r);
      });
      MetricsRow mean;
      mean.split = split;
      mean.method = m.name;
      mean.id = "mean";
      mean.epsilon = eps;
      auto avg = [&](std::optional<double> MetricsRow::*field) -> std::optional<double> {
        double acc = 0.0;
        std::size_t n = 0;
        for (const auto& r : per)
          if (r.*field) {
            acc += *(r.*field);
            ++n;
          }
        if (n == 0) return std::nullopt;
        return acc / static_cast<double>(n);
      };
      mean.dice = avg(&MetricsRow::dice);
      mean.precision = avg(&MetricsRow::precision);
      mean.recall = avg(&MetricsRow::recall);
      mean.asd = avg(&MetricsRow::asd);
      mean.hd = avg(&MetricsRow::hd);
      mean.hd95 = avg(&MetricsRow::hd95);
      for (auto& r : per) rows.push_back(std::move(r));
      rows.push_back(std::move(mean));
    }
  }
  return rows;
}

// Mean Dice of one method at one epsilon (nullopt = clean evaluation).
inline double mean_dice(const std::vector<MetricsRow>& rows, const std::string& method,
                        std::optional<double> eps = std::nullopt) {
  for (const auto& r : rows)
    if (r.id == "mean" && r.method == method && r.epsilon == eps && r.dice) return *r.dice;
  throw InvalidArgument("no mean row for method " + method);
}

}  // namespace gcseg
