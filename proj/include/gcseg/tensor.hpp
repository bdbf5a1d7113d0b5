#pragma once

// Minimal reverse-mode automatic differentiation for the segmentation network.
//
// A Tape records one forward pass. Values live in tape nodes; each recorded op
// carries a closure that scatters its output gradient into its inputs. Backward
// walks the tape in exact reverse recording order, so the recording order is a
// valid topological order by construction. Storage is fp32; reductions
// accumulate in fp64.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcseg/errors.hpp"

namespace gcseg {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

struct Tensor {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty when absent
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(Shape s, float fill = 0.0f) : shape(std::move(s)) {
    for (int d : shape)
      if (d <= 0) throw InvalidArgument("tensor dimensions must be positive, got " + shape_str(shape));
    data.assign(shape_numel(shape), fill);
  }

  Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    for (int d : shape)
      if (d <= 0) throw InvalidArgument("tensor dimensions must be positive, got " + shape_str(shape));
    if (data.size() != shape_numel(shape))
      throw InvalidArgument("tensor data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(shape));
  }

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  float& at(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  float at(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  void zero_grad() { grad.assign(data.size(), 0.0f); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
  }
};

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

class Tape {
public:
  using BackwardFn = std::function<void(Tape&, std::span<const float> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  // Vars hold a pointer to their tape, so a tape never moves.
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var constant(Tensor t) { return push(std::move(t), false, {}, {}); }

  // Leaf whose gradient is wanted (e.g. the input image of an attack).
  Var input(Tensor t) { return push(std::move(t), true, {}, {}); }

  // Leaf holding a copy of parameter `slot` of some owner; after backward the
  // owner collects its gradient through param_grads().
  Var param(const Tensor& p, std::size_t slot) {
    Var v = push(Tensor(p.shape, p.data), true, {}, {});
    nodes_.back().param_slot = slot;
    return v;
  }

  Var record(Tensor out, std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    for (std::size_t i : inputs) needs = needs || nodes_.at(i).needs_grad;
    return push(std::move(out), needs, std::move(inputs), needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  // Gradient buffer of a node; valid after backward() for nodes that need grad.
  std::span<float> grad(std::size_t id) { return nodes_.at(id).grad; }
  std::span<const float> grad(Var v) const { return nodes_.at(v.id).grad; }

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  void backward(Var out, std::span<const float> seed) {
    std::vector<std::pair<Var, std::span<const float>>> seeds{{out, seed}};
    backward(seeds);
  }

  // Seeds several outputs at once (the model has two heads).
  void backward(std::span<const std::pair<Var, std::span<const float>>> seeds) {
    if (backward_done_) throw InconsistentState("tape already consumed by a previous backward pass");
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad.assign(n.value.numel(), 0.0f);
    for (const auto& [v, s] : seeds) {
      auto& n = nodes_.at(v.id);
      if (s.size() != n.value.numel())
        throw InvalidArgument("seed gradient length " + std::to_string(s.size()) + " does not match " +
                              shape_str(n.value.shape));
      if (!n.needs_grad) continue;
      for (std::size_t i = 0; i < s.size(); ++i) n.grad[i] += s[i];
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.needs_grad || !n.backward) continue;
      n.backward(*this, n.grad);
      n.backward = nullptr;  // frees saved intermediates
    }
    backward_done_ = true;
  }

  // Calls fn(slot, grad) for every parameter leaf, in recording order.
  template <class Fn>
  void param_grads(Fn&& fn) const {
    if (!backward_done_) throw InconsistentState("parameter gradients requested before backward");
    for (const auto& n : nodes_)
      if (n.param_slot != kNoSlot) fn(n.param_slot, std::span<const float>(n.grad));
  }

  // Ids of the inputs of each recorded node, for tape-order checks.
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_.at(id).inputs; }

private:
  struct Node {
    Tensor value;
    std::vector<float> grad;
    bool needs_grad = false;
    std::size_t param_slot = kNoSlot;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  static constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);

  Var push(Tensor t, bool needs, std::vector<std::size_t> inputs, BackwardFn fn) {
    if (backward_done_) throw InconsistentState("cannot record onto a consumed tape");
    nodes_.push_back(Node{std::move(t), {}, needs, kNoSlot, std::move(inputs), std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

inline void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw InvalidArgument(std::string(what) + " must be rank 4 [N,C,H,W], got " + shape_str(t.shape));
}

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw InvalidArgument("operands recorded on different tapes");
}

// out[y, x] += w * in[y + oy, x + ox] over the valid window, zero padding outside.
inline void shifted_axpy(float* out, const float* in, int H, int W, int oy, int ox, float w) {
  const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
  const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
  for (int y = y0; y < y1; ++y) {
    float* o = out + static_cast<std::size_t>(y) * W;
    const float* s = in + static_cast<std::size_t>(y + oy) * W + ox;
    for (int x = x0; x < x1; ++x) o[x] += w * s[x];
  }
}

// sum over the valid window of a[y, x] * b[y + oy, x + ox]
inline double shifted_dot(const float* a, const float* b, int H, int W, int oy, int ox) {
  const int y0 = std::max(0, -oy), y1 = std::min(H, H - oy);
  const int x0 = std::max(0, -ox), x1 = std::min(W, W - ox);
  double acc = 0.0;
  for (int y = y0; y < y1; ++y) {
    const float* pa = a + static_cast<std::size_t>(y) * W;
    const float* pb = b + static_cast<std::size_t>(y + oy) * W + ox;
    float row = 0.0f;
    for (int x = x0; x < x1; ++x) row += pa[x] * pb[x];
    acc += row;
  }
  return acc;
}

// Shared body of conv2d (k = 3) and conv1x1 (k = 1): stride 1, "same" zero padding.
inline Var conv_same(Var x, Var kernel, Var bias, int k) {
  require_same_tape(x, kernel);
  require_same_tape(x, bias);
  Tape& tape = *x.tape;
  const Tensor& in = x.value();
  const Tensor& w = kernel.value();
  const Tensor& b = bias.value();
  require_rank4(in, "conv input");
  require_rank4(w, "conv kernel");
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int K = w.dim(0);
  if (w.dim(1) != C || w.dim(2) != k || w.dim(3) != k)
    throw InvalidArgument("conv kernel " + shape_str(w.shape) + " incompatible with input " + shape_str(in.shape));
  if (b.rank() != 1 || b.dim(0) != K)
    throw InvalidArgument("conv bias " + shape_str(b.shape) + " must be [" + std::to_string(K) + "]");

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const int r = k / 2;
  Tensor out({N, K, H, W});
  for (int n = 0; n < N; ++n) {
    for (int ko = 0; ko < K; ++ko) {
      float* o = &out.data[(static_cast<std::size_t>(n) * K + ko) * plane];
      std::fill(o, o + plane, b.data[ko]);
      for (int c = 0; c < C; ++c) {
        const float* src = &in.data[(static_cast<std::size_t>(n) * C + c) * plane];
        const float* wk = &w.data[(static_cast<std::size_t>(ko) * C + c) * k * k];
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) shifted_axpy(o, src, H, W, dy - r, dx - r, wk[dy * k + dx]);
      }
    }
  }

  const std::size_t xi = x.id, wi = kernel.id, bi = bias.id;
  return tape.record(std::move(out), {xi, wi, bi}, [=](Tape& t, std::span<const float> g) {
    const Tensor& in = t.value(xi);
    const Tensor& w = t.value(wi);
    if (t.needs_grad(bi)) {
      auto gb = t.grad(bi);
      for (int ko = 0; ko < K; ++ko) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) {
          const float* go = &g[(static_cast<std::size_t>(n) * K + ko) * plane];
          acc += std::accumulate(go, go + plane, 0.0);
        }
        gb[ko] += static_cast<float>(acc);
      }
    }
    if (t.needs_grad(wi)) {
      auto gw = t.grad(wi);
      for (int ko = 0; ko < K; ++ko)
        for (int c = 0; c < C; ++c)
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              double acc = 0.0;
              for (int n = 0; n < N; ++n) {
                const float* go = &g[(static_cast<std::size_t>(n) * K + ko) * plane];
                const float* src = &in.data[(static_cast<std::size_t>(n) * C + c) * plane];
                acc += shifted_dot(go, src, H, W, dy - r, dx - r);
              }
              gw[((static_cast<std::size_t>(ko) * C + c) * k + dy) * k + dx] += static_cast<float>(acc);
            }
    }
    if (t.needs_grad(xi)) {
      auto gx = t.grad(xi);
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          float* gi = &gx[(static_cast<std::size_t>(n) * C + c) * plane];
          for (int ko = 0; ko < K; ++ko) {
            const float* go = &g[(static_cast<std::size_t>(n) * K + ko) * plane];
            const float* wk = &w.data[(static_cast<std::size_t>(ko) * C + c) * k * k];
            // transpose of the forward shift
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx) shifted_axpy(gi, go, H, W, r - dy, r - dx, wk[dy * k + dx]);
          }
        }
    }
  });
}

}  // namespace detail

// 3x3 cross-correlation, stride 1, zero padding 1.
inline Var conv2d(Var x, Var kernel, Var bias) {
  const Tensor& w = kernel.value();
  if (w.rank() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
    throw InvalidArgument("conv2d kernel must be [K,C,3,3], got " + shape_str(w.shape));
  return detail::conv_same(x, kernel, bias, 3);
}

inline Var conv1x1(Var x, Var kernel, Var bias) {
  const Tensor& w = kernel.value();
  if (w.rank() != 4 || w.dim(2) != 1 || w.dim(3) != 1)
    throw InvalidArgument("conv1x1 kernel must be [K,C,1,1], got " + shape_str(w.shape));
  return detail::conv_same(x, kernel, bias, 1);
}

inline Var relu(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape);
  for (std::size_t i = 0; i < in.numel(); ++i) out.data[i] = in.data[i] > 0.0f ? in.data[i] : 0.0f;
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi](Tape& t, std::span<const float> g) {
    const auto& in = t.value(xi).data;
    auto gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0f) gx[i] += g[i];
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape != y.shape)
    throw InvalidArgument("add shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] + y.data[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {ai, bi}, [ai, bi](Tape& t, std::span<const float> g) {
    for (std::size_t id : {ai, bi}) {
      if (!t.needs_grad(id)) continue;
      auto gx = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

// 2x2 max pooling, stride 2. Ties resolve to the first element in row-major order.
inline Var maxpool2x2(Var x) {
  const Tensor& in = x.value();
  detail::require_rank4(in, "maxpool input");
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  if (H % 2 || W % 2)
    throw InvalidArgument("maxpool2x2 needs even spatial dims, got " + shape_str(in.shape));
  const int Ho = H / 2, Wo = W / 2;
  Tensor out({N, C, Ho, Wo});
  std::vector<std::uint32_t> argmax(out.numel());
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const float* src = &in.data[static_cast<std::size_t>(nc) * H * W];
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo, ++o) {
        std::uint32_t best = static_cast<std::uint32_t>((2 * y) * W + 2 * xo);
        const std::uint32_t cand[3] = {best + 1, best + static_cast<std::uint32_t>(W),
                                       best + static_cast<std::uint32_t>(W) + 1};
        for (std::uint32_t c : cand)
          if (src[c] > src[best]) best = c;
        out.data[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(nc) * H * W + best;
      }
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [xi, argmax = std::move(argmax)](Tape& t, std::span<const float> g) {
    auto gx = t.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
  });
}

namespace detail {

// Half-pixel-centre source coordinate for 2x bilinear upsampling.
struct Tap {
  int i0, i1;
  float w1;
};

inline std::vector<Tap> upsample_taps(int in_len) {
  std::vector<Tap> taps(static_cast<std::size_t>(in_len) * 2);
  for (int o = 0; o < in_len * 2; ++o) {
    float src = std::max(0.0f, (static_cast<float>(o) + 0.5f) * 0.5f - 0.5f);
    int i0 = std::min(static_cast<int>(src), in_len - 1);
    int i1 = std::min(i0 + 1, in_len - 1);
    taps[o] = {i0, i1, src - static_cast<float>(i0)};
  }
  return taps;
}

}  // namespace detail

inline Var upsample_bilinear2x(Var x) {
  const Tensor& in = x.value();
  detail::require_rank4(in, "upsample input");
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int Ho = 2 * H, Wo = 2 * W;
  auto ty = detail::upsample_taps(H), tx = detail::upsample_taps(W);
  Tensor out({N, C, Ho, Wo});
  for (int nc = 0; nc < N * C; ++nc) {
    const float* src = &in.data[static_cast<std::size_t>(nc) * H * W];
    float* dst = &out.data[static_cast<std::size_t>(nc) * Ho * Wo];
    for (int y = 0; y < Ho; ++y) {
      const auto& a = ty[y];
      const float* r0 = src + static_cast<std::size_t>(a.i0) * W;
      const float* r1 = src + static_cast<std::size_t>(a.i1) * W;
      for (int xo = 0; xo < Wo; ++xo) {
        const auto& b = tx[xo];
        float top = r0[b.i0] + b.w1 * (r0[b.i1] - r0[b.i0]);
        float bot = r1[b.i0] + b.w1 * (r1[b.i1] - r1[b.i0]);
        dst[static_cast<std::size_t>(y) * Wo + xo] = top + a.w1 * (bot - top);
      }
    }
  }
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {xi}, [=](Tape& t, std::span<const float> g) {
    auto gx = t.grad(xi);
    for (int nc = 0; nc < N * C; ++nc) {
      float* gs = &gx[static_cast<std::size_t>(nc) * H * W];
      const float* go = &g[static_cast<std::size_t>(nc) * Ho * Wo];
      for (int y = 0; y < Ho; ++y) {
        const auto& a = ty[y];
        for (int xo = 0; xo < Wo; ++xo) {
          const auto& b = tx[xo];
          const float v = go[static_cast<std::size_t>(y) * Wo + xo];
          const float vt = v * (1.0f - a.w1), vb = v * a.w1;
          gs[static_cast<std::size_t>(a.i0) * W + b.i0] += vt * (1.0f - b.w1);
          gs[static_cast<std::size_t>(a.i0) * W + b.i1] += vt * b.w1;
          gs[static_cast<std::size_t>(a.i1) * W + b.i0] += vb * (1.0f - b.w1);
          gs[static_cast<std::size_t>(a.i1) * W + b.i1] += vb * b.w1;
        }
      }
    }
  });
}

// Softmax across the channel dimension of an [N,C,H,W] tensor.
inline Var channel_softmax(Var x) {
  const Tensor& in = x.value();
  detail::require_rank4(in, "softmax input");
  const int N = in.dim(0), C = in.dim(1);
  const std::size_t plane = static_cast<std::size_t>(in.dim(2)) * in.dim(3);
  Tensor out(in.shape);
  std::vector<double> e(C);
  for (int n = 0; n < N; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      auto idx = [&](int c) { return (static_cast<std::size_t>(n) * C + c) * plane + p; };
      double mx = in.data[idx(0)];
      for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(in.data[idx(c)]));
      double z = 0.0;
      for (int c = 0; c < C; ++c) z += e[c] = std::exp(in.data[idx(c)] - mx);
      for (int c = 0; c < C; ++c) out.data[idx(c)] = static_cast<float>(e[c] / z);
    }
  const std::size_t xi = x.id;
  Tensor saved = out;
  return x.tape->record(std::move(out), {xi}, [=, y = std::move(saved)](Tape& t, std::span<const float> g) {
    auto gx = t.grad(xi);
    for (int n = 0; n < N; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        auto idx = [&](int c) { return (static_cast<std::size_t>(n) * C + c) * plane + p; };
        double dot = 0.0;
        for (int c = 0; c < C; ++c) dot += static_cast<double>(g[idx(c)]) * y.data[idx(c)];
        for (int c = 0; c < C; ++c)
          gx[idx(c)] += static_cast<float>(y.data[idx(c)] * (g[idx(c)] - dot));
      }
  });
}

// Compares the tape gradient of a scalar projection sum_i r_i * f(x)_i against
// central differences. `build` records f onto the given tape from the input var.
// Returns max |analytic - numeric| over the checked elements (all when
// `indices` is empty-optional). The projection r is drawn from `seed`.
template <class Build>
double grad_check(Build&& build, const Tensor& input, double eps,
                  const std::optional<std::vector<std::size_t>>& indices = std::nullopt,
                  std::uint64_t seed = 0x5eed) {
  if (!(eps >= 1e-4 && eps <= 1e-2)) throw InvalidArgument("grad_check eps must lie in [1e-4, 1e-2]");
  if (!input.all_finite()) throw InvalidArgument("grad_check input must be finite");

  std::vector<std::size_t> idx;
  if (indices) {
    idx = *indices;
  } else {
    idx.resize(input.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  if (idx.empty()) return 0.0;

  std::vector<float> proj;
  auto objective = [&](const Tensor& x, std::vector<float>* grad_out) {
    Tape tape;
    Var xv = tape.input(Tensor(x.shape, x.data));
    Var y = build(tape, xv);
    const auto& yv = y.value().data;
    if (proj.empty()) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<float> u(-1.0f, 1.0f);
      proj.resize(yv.size());
      for (auto& r : proj) r = u(rng);
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < yv.size(); ++i) acc += static_cast<double>(proj[i]) * yv[i];
    if (grad_out) {
      tape.backward(y, proj);
      auto g = tape.grad(xv.id);
      grad_out->assign(g.begin(), g.end());
    }
    return acc;
  };

  std::vector<float> analytic;
  objective(input, &analytic);
  double worst = 0.0;
  Tensor probe(input.shape, input.data);
  for (std::size_t i : idx) {
    const float orig = probe.data[i];
    probe.data[i] = orig + static_cast<float>(eps);
    const double up = objective(probe, nullptr);
    const double h_up = static_cast<double>(probe.data[i]) - orig;
    probe.data[i] = orig - static_cast<float>(eps);
    const double down = objective(probe, nullptr);
    const double h_down = orig - static_cast<double>(probe.data[i]);
    probe.data[i] = orig;
    const double numeric = (up - down) / (h_up + h_down);
    worst = std::max(worst, std::abs(numeric - static_cast<double>(analytic[i])));
  }
  return worst;
}

}  // namespace gcseg
