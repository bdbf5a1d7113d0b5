#pragma once

// Encoder-decoder feature network with a two-branch graph-cut head.
//
//   stem      conv3x3(1 -> C0) + relu
//   encoder   per level l = 1..depth:
//               conv3x3(C_{l-1} -> C_l) + relu, maxpool2x2, residual triple
//   decoder   per level l = depth..1:
//               upsample2x, conv3x3(C_l -> C_{l-1}) + relu, + skip, residual triple
//   head      features = conv3x3(C0 -> F)               (n-link branch)
//             phi      = softmax(conv1x1(relu(features))) (t-link branch)
//
// with C_l = base_channels * 2^l. A residual triple is
//   relu(x + conv(relu(conv(relu(conv(x)))))).

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include "gcseg/errors.hpp"
#include "gcseg/graph.hpp"
#include "gcseg/tensor.hpp"

namespace gcseg {

struct ModelConfig {
  int depth = 3;
  int base_channels = 16;
  int head_channels = 32;
  double gamma = 1.0;
  std::uint64_t seed = 1;
  bool residual = true;

  void validate() const {
    if (depth <= 0 || base_channels <= 0 || head_channels < 2)
      throw InvalidArgument("model config needs depth > 0, base_channels > 0, head_channels >= 2");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InvalidArgument("gamma must be finite and non-negative");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Activations of one forward pass. Owns the tape that recorded it.
struct ForwardPass {
  std::unique_ptr<Tape> tape;
  Var image;
  Var tlinks;    // [N,2,H,W], channel 0 = phi_s, channel 1 = phi_t
  Var features;  // [N,F,H,W]

  bool valid() const { return tape != nullptr; }
  int batch() const { return tlinks.value().dim(0); }
  int height() const { return tlinks.value().dim(2); }
  int width() const { return tlinks.value().dim(3); }

  TLinkMap tlink_map(int n) const {
    const Tensor& t = tlinks.value();
    const int H = t.dim(2), W = t.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    TLinkMap m{H, W, {}, {}};
    const float* base = &t.data[static_cast<std::size_t>(n) * 2 * plane];
    m.phi_s.assign(base, base + plane);
    m.phi_t.assign(base + plane, base + 2 * plane);
    return m;
  }

  FeatureMap feature_map(int n) const {
    const Tensor& t = features.value();
    const int F = t.dim(1), H = t.dim(2), W = t.dim(3);
    const std::size_t vol = static_cast<std::size_t>(F) * H * W;
    FeatureMap m{H, W, F, {}};
    const float* base = &t.data[static_cast<std::size_t>(n) * vol];
    m.data.assign(base, base + vol);
    return m;
  }
};

// Per-pixel argmax of the t-link map; phi_s == phi_t resolves to background.
inline Labeling argmax_labeling(const TLinkMap& m) {
  Labeling l(m.height, m.width, 0);
  for (std::size_t p = 0; p < l.size(); ++p) l[p] = m.phi_s[p] > m.phi_t[p] ? 1 : 0;
  return l;
}

class Model {
public:
  struct Param {
    std::string name;
    Tensor tensor;
  };

  explicit Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    auto conv = [&](const std::string& name, int out, int in, int k, double gain = 1.0) {
      Tensor w({out, in, k, k});
      const double fan_in = static_cast<double>(in) * k * k;
      std::uniform_real_distribution<float> u(-1.0f, 1.0f);
      const float bound = static_cast<float>(gain * std::sqrt(6.0 / fan_in));
      for (float& v : w.data) v = bound * u(rng);
      params_.push_back({name + ".weight", std::move(w)});
      params_.push_back({name + ".bias", Tensor({out}, 0.0f)});
    };
    // residual branches start close to identity
    const double branch_gain = cfg_.residual ? 0.1 : 1.0;
    const int c0 = cfg_.base_channels;
    conv("stem", c0, 1, 3);
    for (int l = 1; l <= cfg_.depth; ++l) {
      const std::string p = "enc" + std::to_string(l);
      conv(p + ".down", channels(l), channels(l - 1), 3);
      for (int j = 0; j < 3; ++j)
        conv(p + ".res" + std::to_string(j), channels(l), channels(l), 3, j == 2 ? branch_gain : 1.0);
    }
    for (int l = cfg_.depth; l >= 1; --l) {
      const std::string p = "dec" + std::to_string(l);
      conv(p + ".up", channels(l - 1), channels(l), 3);
      for (int j = 0; j < 3; ++j)
        conv(p + ".res" + std::to_string(j), channels(l - 1), channels(l - 1), 3, j == 2 ? branch_gain : 1.0);
    }
    conv("head.features", cfg_.head_channels, c0, 3);
    conv("head.tlink", 2, cfg_.head_channels, 1, 0.1);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  int channels(int level) const { return cfg_.base_channels << level; }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void check_input(const Tensor& image) const {
    if (image.rank() != 4 || image.dim(1) != 1)
      throw InvalidArgument("model input must be [N,1,H,W], got " + shape_str(image.shape));
    const int div = 1 << cfg_.depth;
    if (image.dim(2) % div || image.dim(3) % div)
      throw InvalidArgument("input spatial dims " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                            " must be divisible by " + std::to_string(div));
  }

  // Records a forward pass. With input_grad the image becomes a gradient leaf.
  // Parameters are only read, so concurrent forwards on one model are safe.
  ForwardPass forward(const Tensor& image, bool input_grad = false) const {
    check_input(image);
    ForwardPass fp;
    fp.tape = std::make_unique<Tape>();
    Tape& t = *fp.tape;
    fp.image = input_grad ? t.input(Tensor(image.shape, image.data)) : t.constant(Tensor(image.shape, image.data));

    std::size_t next = 0;
    auto conv = [&](Var x) {
      Var w = t.param(params_[next].tensor, next);
      Var b = t.param(params_[next + 1].tensor, next + 1);
      next += 2;
      return params_[next - 2].tensor.dim(2) == 3 ? conv2d(x, w, b) : conv1x1(x, w, b);
    };
    auto residual_triple = [&](Var x) {
      Var h = relu(conv(x));
      h = relu(conv(h));
      h = conv(h);
      return cfg_.residual ? relu(add(x, h)) : relu(h);
    };

    std::vector<Var> skips;
    Var x = relu(conv(fp.image));
    for (int l = 1; l <= cfg_.depth; ++l) {
      skips.push_back(x);
      x = maxpool2x2(relu(conv(x)));
      x = residual_triple(x);
    }
    for (int l = cfg_.depth; l >= 1; --l) {
      x = relu(conv(upsample_bilinear2x(x)));
      x = add(x, skips[static_cast<std::size_t>(l - 1)]);
      x = residual_triple(x);
    }
    fp.features = conv(x);
    fp.tlinks = channel_softmax(conv(relu(fp.features)));
    return fp;
  }

  // Runs backward on the pass's tape from head gradients. Touches only the
  // pass, so distinct passes may run concurrently. Either span may be empty.
  static void backward_pass(ForwardPass& fp, std::span<const float> grad_tlinks, std::span<const float> grad_features) {
    if (!fp.valid()) throw InconsistentState("backward without a forward pass");
    std::vector<std::pair<Var, std::span<const float>>> seeds;
    if (!grad_tlinks.empty()) seeds.emplace_back(fp.tlinks, grad_tlinks);
    if (!grad_features.empty()) seeds.emplace_back(fp.features, grad_features);
    fp.tape->backward(seeds);
  }

  // Adds the pass's parameter gradients into the model. Single writer.
  void accumulate(ForwardPass& fp) {
    if (!fp.valid() || !fp.tape->backward_done()) throw InconsistentState("accumulate before backward");
    fp.tape->param_grads([&](std::size_t slot, std::span<const float> g) {
      Tensor& p = params_.at(slot).tensor;
      if (p.grad.size() != p.data.size()) p.zero_grad();
      for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
    });
  }

  void backward(ForwardPass& fp, std::span<const float> grad_tlinks, std::span<const float> grad_features) {
    backward_pass(fp, grad_tlinks, grad_features);
    accumulate(fp);
  }

  // t-link branch only; the predictor of the nographcut mode.
  TLinkMap forward_nographcut(const Tensor& image, int n = 0) const { return forward(image).tlink_map(n); }

private:
  ModelConfig cfg_;
  std::vector<Param> params_;
};

// ---------------------------------------------------------------------------
// checkpoint: "GCSEGCKPT1", u32 config length, config text (key=value lines),
// u32 tensor count, per tensor u32 rank, u32 dims, f32 data; trailing u32 CRC32
// of everything before it. Integers and floats little-endian.

struct Checkpoint {
  ModelConfig config;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<Tensor> params;

  std::string meta_value(const std::string& key, const std::string& fallback = "") const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    return fallback;
  }
};

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw CorruptCheckpoint("checkpoint truncated at byte " + std::to_string(pos));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

constexpr char kCheckpointMagic[] = "GCSEGCKPT1";

}  // namespace detail

inline std::string serialize_checkpoint(const Model& model,
                                        const std::vector<std::pair<std::string, std::string>>& meta) {
  const auto& c = model.config();
  std::ostringstream cfg;
  cfg.precision(17);
  cfg << "model.depth=" << c.depth << '\n'
      << "model.base_channels=" << c.base_channels << '\n'
      << "model.head_channels=" << c.head_channels << '\n'
      << "model.residual=" << (c.residual ? 1 : 0) << '\n'
      << "graph.gamma=" << c.gamma << '\n'
      << "seed=" << c.seed << '\n';
  for (const auto& [k, v] : meta) cfg << k << '=' << v << '\n';
  const std::string text = cfg.str();

  std::string buf(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic) - 1);
  detail::put_u32(buf, static_cast<std::uint32_t>(text.size()));
  buf += text;
  detail::put_u32(buf, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    detail::put_u32(buf, static_cast<std::uint32_t>(p.tensor.rank()));
    for (int d : p.tensor.shape) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : p.tensor.data) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
  }
  detail::put_u32(buf, detail::crc32_of(buf));
  return buf;
}

inline Checkpoint parse_checkpoint(const std::string& buf) {
  const std::size_t magic_len = sizeof(detail::kCheckpointMagic) - 1;
  if (buf.size() < magic_len + 8 || buf.compare(0, magic_len, detail::kCheckpointMagic) != 0)
    throw CorruptCheckpoint("not a checkpoint (bad magic)");
  std::size_t crc_pos = buf.size() - 4;
  const std::uint32_t stored = detail::get_u32(buf, crc_pos);
  if (stored != detail::crc32_of(buf.substr(0, buf.size() - 4)))
    throw CorruptCheckpoint("checkpoint CRC mismatch");

  std::size_t pos = magic_len;
  const std::uint32_t text_len = detail::get_u32(buf, pos);
  if (pos + text_len > buf.size() - 4) throw CorruptCheckpoint("checkpoint config block truncated");
  std::istringstream text(buf.substr(pos, text_len));
  pos += text_len;

  Checkpoint ck;
  std::string line;
  while (std::getline(text, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    try {
      if (k == "model.depth") ck.config.depth = std::stoi(v);
      else if (k == "model.base_channels") ck.config.base_channels = std::stoi(v);
      else if (k == "model.head_channels") ck.config.head_channels = std::stoi(v);
      else if (k == "model.residual") ck.config.residual = v != "0";
      else if (k == "graph.gamma") ck.config.gamma = std::stod(v);
      else if (k == "seed") ck.config.seed = std::stoull(v);
      else ck.meta.emplace_back(k, v);
    } catch (const std::logic_error&) {
      throw CorruptCheckpoint("bad checkpoint config value for " + k);
    }
  }

  const std::uint32_t count = detail::get_u32(buf, pos);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rank = detail::get_u32(buf, pos);
    if (rank == 0 || rank > 8) throw CorruptCheckpoint("bad tensor rank in checkpoint");
    Shape s;
    for (std::uint32_t r = 0; r < rank; ++r) s.push_back(static_cast<int>(detail::get_u32(buf, pos)));
    Tensor t(s);
    for (float& v : t.data) v = std::bit_cast<float>(detail::get_u32(buf, pos));
    ck.params.push_back(std::move(t));
  }
  if (pos != buf.size() - 4) throw CorruptCheckpoint("trailing bytes in checkpoint");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Model& model,
                            const std::vector<std::pair<std::string, std::string>>& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(model, meta);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

inline Model model_from_checkpoint(const Checkpoint& ck) {
  Model m(ck.config);
  if (ck.params.size() != m.params().size())
    throw CorruptCheckpoint("checkpoint holds " + std::to_string(ck.params.size()) + " tensors, model expects " +
                            std::to_string(m.params().size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    if (ck.params[i].shape != m.params()[i].tensor.shape)
      throw CorruptCheckpoint("checkpoint tensor " + m.params()[i].name + " has shape " + shape_str(ck.params[i].shape));
    m.params()[i].tensor.data = ck.params[i].data;
  }
  return m;
}

}  // namespace gcseg
