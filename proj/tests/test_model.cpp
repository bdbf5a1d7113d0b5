#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gcseg/data.hpp"
#include "gcseg/train.hpp"

using namespace gcseg;

namespace {

ModelConfig small_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.depth = 2;
  c.base_channels = 4;
  c.head_channels = 4;
  c.seed = seed;
  return c;
}

Tensor random_image(std::mt19937_64& rng, int N, int H, int W) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t({N, 1, H, W});
  for (float& v : t.data) v = u(rng);
  return t;
}

Sample small_sample(int size, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.height = spec.width = size;
  spec.overlap = 0.5;
  spec.seed = seed;
  return synthesize(spec, 0);
}

struct PipelineValue {
  double total = 0.0;
  Labeling mincut;
};

// Forward, solve and weighted losses; the quantity the parameter check differentiates.
PipelineValue pipeline(const Model& m, const Sample& s, const std::array<double, 3>& alpha) {
  ImageTerms t = compute_terms(m, s, Mode::gcdlseg);
  return {alpha[0] * t.ce.value + alpha[1] * t.dice.value + alpha[2] * t.rgc->loss, t.mincut->labeling};
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.head_channels = 1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = ModelConfig{};
  c.depth = 0;
  EXPECT_THROW(Model{c}, InvalidArgument);
}

TEST(Forward, DefaultShapes) {
  std::mt19937_64 rng(1);
  const Model m(ModelConfig{});
  const ForwardPass fp = m.forward(random_image(rng, 1, 32, 32));
  EXPECT_EQ(fp.tlinks.value().shape, (Shape{1, 2, 32, 32}));
  EXPECT_EQ(fp.features.value().shape, (Shape{1, 32, 32, 32}));
  const TLinkMap tl = fp.tlink_map(0);
  for (std::size_t p = 0; p < tl.phi_s.size(); ++p) {
    EXPECT_NEAR(tl.phi_s[p] + tl.phi_t[p], 1.0f, 1e-6);
    EXPECT_GT(tl.phi_s[p], 0.0f);
    EXPECT_LT(tl.phi_s[p], 1.0f);
  }
  EXPECT_TRUE(fp.features.value().all_finite());
}

TEST(Forward, IndivisibleDimsThrow) {
  std::mt19937_64 rng(2);
  const Model m(ModelConfig{});
  EXPECT_THROW(m.forward(random_image(rng, 1, 12, 32)), InvalidArgument);
}

TEST(Forward, DeterministicForSeed) {
  std::mt19937_64 rng(3);
  const Tensor img = random_image(rng, 2, 16, 16);
  const Model a(small_config(9)), b(small_config(9));
  EXPECT_EQ(a.forward(img).tlinks.value().data, b.forward(img).tlinks.value().data);
  EXPECT_EQ(a.forward(img).features.value().data, a.forward(img).features.value().data);
}

TEST(Forward, BatchItemsIndependent) {
  std::mt19937_64 rng(4);
  const Tensor two = random_image(rng, 2, 8, 8);
  Tensor one({1, 1, 8, 8}, std::vector<float>(two.data.begin() + 64, two.data.end()));
  const Model m(small_config());
  const TLinkMap a = m.forward(two).tlink_map(1), b = m.forward(one).tlink_map(0);
  for (std::size_t p = 0; p < a.phi_s.size(); ++p) EXPECT_NEAR(a.phi_s[p], b.phi_s[p], 1e-6);
}

TEST(Forward, ResidualWiringMatters) {
  std::mt19937_64 rng(5);
  const Tensor img = random_image(rng, 1, 8, 8);
  ModelConfig with = small_config(), without = small_config();
  without.residual = false;
  EXPECT_NE(Model(with).forward(img).tlinks.value().data, Model(without).forward(img).tlinks.value().data);
}

TEST(Argmax, TiesGoToBackground) {
  const TLinkMap m{1, 3, {0.7f, 0.5f, 0.2f}, {0.3f, 0.5f, 0.8f}};
  const Labeling l = argmax_labeling(m);
  EXPECT_EQ(l[0], 1);
  EXPECT_EQ(l[1], 0);
  EXPECT_EQ(l[2], 0);
}

TEST(Backward, WithoutForwardIsInconsistent) {
  ForwardPass empty;
  EXPECT_THROW(Model::backward_pass(empty, {}, {}), InconsistentState);
  Model m(small_config());
  std::mt19937_64 rng(6);
  ForwardPass fp = m.forward(random_image(rng, 1, 8, 8));
  EXPECT_THROW(m.accumulate(fp), InconsistentState);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  std::mt19937_64 rng(7);
  Model m(small_config());
  ForwardPass fp = m.forward(random_image(rng, 1, 8, 8));
  const std::vector<float> zt(fp.tlinks.value().numel(), 0.0f), zf(fp.features.value().numel(), 0.0f);
  m.zero_grad();
  m.backward(fp, zt, zf);
  for (const auto& p : m.params())
    for (float g : p.tensor.grad) EXPECT_EQ(g, 0.0f);
}

TEST(Backward, RgcOnlyGradientsNonzeroIffCutsDiffer) {
  Model m(small_config(11));
  const Sample s = small_sample(8, 4);
  auto grad_norm = [&](const Sample& sample) {
    ImageTerms t = compute_terms(m, sample, Mode::gcdlseg);
    backward_terms(t, {0.0, 0.0, 1.0}, 1.0);
    m.zero_grad();
    m.accumulate(t.fp);
    double n = 0.0;
    for (const auto& p : m.params())
      for (float g : p.tensor.grad) n += static_cast<double>(g) * g;
    return std::make_pair(n, t.rgc->gt_cut == t.rgc->min_cut);
  };
  const auto [n1, same1] = grad_norm(s);
  EXPECT_FALSE(same1);
  EXPECT_GT(n1, 0.0);
  // relabel the sample with the model's own min cut
  Sample own = s;
  own.mask = predict(m, s, Mode::gcdlseg);
  const auto [n2, same2] = grad_norm(own);
  EXPECT_TRUE(same2);
  EXPECT_EQ(n2, 0.0);
}

// d L_total / d theta for sampled parameters against central differences of
// the full forward + solve + loss pipeline.
TEST(Backward, WholePipelineFiniteDifferences) {
  Model m(small_config(21));
  const Sample s = small_sample(8, 5);
  const std::array<double, 3> alpha{0.3, 0.3, 0.4};
  ImageTerms t = compute_terms(m, s, Mode::gcdlseg);
  backward_terms(t, alpha, 1.0);
  m.zero_grad();
  m.accumulate(t.fp);

  std::mt19937_64 rng(8);
  int checked = 0, passed = 0, cut_changed = 0, kinks = 0;
  const float h = 1e-3f;
  const PipelineValue base = pipeline(m, s, alpha);
  for (int trial = 0; trial < 60; ++trial) {
    auto& p = m.params()[rng() % m.params().size()].tensor;
    const std::size_t i = rng() % p.data.size();
    const float keep = p.data[i];
    p.data[i] = keep + h;
    const PipelineValue up = pipeline(m, s, alpha);
    p.data[i] = keep - h;
    const PipelineValue down = pipeline(m, s, alpha);
    p.data[i] = keep;
    const double numeric = (up.total - down.total) / (2.0 * h);
    const double analytic = p.grad[i];
    ++checked;
    if (std::abs(analytic - numeric) <= 1e-2 * std::max(std::abs(numeric), std::abs(analytic)) + 1e-5) {
      ++passed;
      continue;
    }
    // one-sided slopes disagree when a relu or maxpool kink lies inside the window
    const double fwd = (up.total - base.total) / h, bwd = (base.total - down.total) / h;
    if (up.mincut != base.mincut || down.mincut != base.mincut) {
      ++cut_changed;
    } else if (std::abs(fwd - bwd) > 1e-2 * std::max({std::abs(fwd), std::abs(bwd), 1e-3})) {
      ++kinks;
    } else {
      ADD_FAILURE() << "parameter gradient mismatch: analytic " << analytic << " numeric " << numeric;
    }
  }
  EXPECT_GE(passed, static_cast<int>(0.9 * checked)) << cut_changed << " min-cut changes, " << kinks << " kinks";
}

TEST(Checkpoint, RoundTripRestoresOutputs) {
  std::mt19937_64 rng(9);
  const Model m(small_config(5));
  const std::string bytes = serialize_checkpoint(m, {{"mode", "gcdlseg"}, {"alpha1", "0.25"}});
  ASSERT_EQ(bytes.substr(0, 10), "GCSEGCKPT1");
  const Checkpoint ck = parse_checkpoint(bytes);
  EXPECT_EQ(ck.config, m.config());
  EXPECT_EQ(ck.meta_value("mode"), "gcdlseg");
  EXPECT_EQ(ck.meta_value("alpha1"), "0.25");
  const Model back = model_from_checkpoint(ck);
  const Tensor img = random_image(rng, 1, 8, 8);
  EXPECT_EQ(back.forward(img).tlinks.value().data, m.forward(img).tlinks.value().data);
  EXPECT_EQ(serialize_checkpoint(back, ck.meta), bytes);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const Model m(small_config());
  const std::string bytes = serialize_checkpoint(m, {});
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(parse_checkpoint(flipped), CorruptCheckpoint);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 9)), CorruptCheckpoint);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(magic), CorruptCheckpoint);
  EXPECT_THROW(parse_checkpoint(""), CorruptCheckpoint);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  const Model m(small_config());
  Checkpoint ck = parse_checkpoint(serialize_checkpoint(m, {}));
  ck.config.head_channels = 6;
  EXPECT_THROW(model_from_checkpoint(ck), CorruptCheckpoint);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gcseg_test_model";
  std::filesystem::create_directories(dir);
  const Model m(small_config());
  const std::string path = (dir / "m.ckpt").string();
  save_checkpoint(path, m, {{"epoch", "3"}});
  EXPECT_EQ(load_checkpoint(path).meta_value("epoch"), "3");
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), IoError);
}
