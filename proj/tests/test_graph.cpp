#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gcseg/graph.hpp"

using namespace gcseg;

namespace {

GridGraph two_pixel_graph() {
  GridGraph g(1, 2, 1.0);
  g.phi_s = {0.9, 0.2};
  g.phi_t = {0.1, 0.8};
  g.psi_h = {0.5};
  return g;
}

GridGraph random_graph(std::mt19937_64& rng, int H, int W) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GridGraph g(H, W, 0.1 + 2.0 * u(rng));
  for (std::size_t p = 0; p < g.node_count(); ++p) {
    g.phi_s[p] = u(rng);
    g.phi_t[p] = 1.0 - g.phi_s[p];
  }
  for (double& v : g.psi_h) v = u(rng);
  for (double& v : g.psi_v) v = u(rng);
  return g;
}

Labeling random_labels(std::mt19937_64& rng, int H, int W) {
  Labeling l(H, W);
  for (auto& v : l.labels) v = static_cast<std::uint8_t>(rng() & 1u);
  return l;
}

FeatureMap two_vectors(std::vector<float> a, std::vector<float> b) {
  FeatureMap f{1, 2, static_cast<int>(a.size()), std::vector<float>(2 * a.size())};
  for (std::size_t c = 0; c < a.size(); ++c) {
    f.data[2 * c] = a[c];
    f.data[2 * c + 1] = b[c];
  }
  return f;
}

TLinkMap half_tlinks(int H, int W) {
  const std::size_t n = static_cast<std::size_t>(H) * W;
  return {H, W, std::vector<float>(n, 0.5f), std::vector<float>(n, 0.5f)};
}

// Independent capacity: loop over every node and every 4-neighbour pair.
double oracle_capacity(const GridGraph& g, const Labeling& l) {
  double c = 0.0;
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * g.width + x;
      c += l[p] ? g.phi_t[p] : g.phi_s[p];
      if (x + 1 < g.width && l[p] != l[p + 1]) c += g.gamma * g.psi_h[static_cast<std::size_t>(y) * (g.width - 1) + x];
      if (y + 1 < g.height && l[p] != l[p + g.width]) c += g.gamma * g.psi_v[p];
    }
  return c;
}

}  // namespace

TEST(BuildGraph, CosineAffinityValues) {
  const TLinkMap tl = half_tlinks(1, 2);
  EXPECT_DOUBLE_EQ(build_graph(tl, two_vectors({1, 2}, {1, 2}), 1.0).psi_h[0], 1.0);
  EXPECT_NEAR(build_graph(tl, two_vectors({1, 2}, {-1, -2}), 1.0).psi_h[0], 0.0, 1e-12);
  EXPECT_NEAR(build_graph(tl, two_vectors({1, 0}, {0, 3}), 1.0).psi_h[0], 0.5, 1e-12);
}

TEST(BuildGraph, DegenerateNormGivesHalfAndZeroGradient) {
  const FeatureMap f = two_vectors({0, 0}, {1, 2});
  const GridGraph g = build_graph(half_tlinks(1, 2), f, 1.0);
  EXPECT_EQ(g.psi_h[0], 0.5);
  const auto grad = psi_backward(f, {1.0}, {});
  for (double v : grad) EXPECT_EQ(v, 0.0);
}

TEST(BuildGraph, DimensionMismatchThrows) {
  FeatureMap f{2, 2, 1, std::vector<float>(4, 1.0f)};
  EXPECT_THROW(build_graph(half_tlinks(1, 2), f, 1.0), InvalidArgument);
}

TEST(BuildGraph, SwappingFeaturesKeepsPsi) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> a(4), b(4);
  for (auto& v : a) v = n(rng);
  for (auto& v : b) v = n(rng);
  const TLinkMap tl = half_tlinks(1, 2);
  EXPECT_EQ(build_graph(tl, two_vectors(a, b), 1.0).psi_h, build_graph(tl, two_vectors(b, a), 1.0).psi_h);
}

TEST(BuildGraph, ProducesValidGraph) {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  TLinkMap tl{3, 5, std::vector<float>(15), std::vector<float>(15)};
  for (std::size_t p = 0; p < 15; ++p) {
    tl.phi_s[p] = u(rng);
    tl.phi_t[p] = 1.0f - tl.phi_s[p];
  }
  FeatureMap f{3, 5, 3, std::vector<float>(45)};
  for (auto& v : f.data) v = n(rng);
  const GridGraph g = build_graph(tl, f, 1.0);
  EXPECT_NO_THROW(g.validate());
  EXPECT_EQ(g.psi_h.size(), 3u * 4u);
  EXPECT_EQ(g.psi_v.size(), 2u * 5u);
}

// d psi / d features against central differences, unit and non-unit norms.
TEST(BuildGraph, CosineChainMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int H = 3, W = 3, F = 4;
    FeatureMap f{H, W, F, std::vector<float>(static_cast<std::size_t>(F) * H * W)};
    for (auto& v : f.data) v = static_cast<float>(n(rng) * (trial % 2 ? 3.0 : 1.0));
    if (trial % 4 == 0) {
      // unit-norm feature vectors
      for (int p = 0; p < H * W; ++p) {
        double s = 0.0;
        for (int c = 0; c < F; ++c) s += std::pow(f.data[static_cast<std::size_t>(c * H * W + p)], 2);
        for (int c = 0; c < F; ++c) f.data[static_cast<std::size_t>(c * H * W + p)] /= static_cast<float>(std::sqrt(s));
      }
    }
    std::vector<double> gh(static_cast<std::size_t>(H) * (W - 1)), gv(static_cast<std::size_t>(H - 1) * W);
    for (auto& v : gh) v = n(rng);
    for (auto& v : gv) v = n(rng);
    const auto analytic = psi_backward(f, gh, gv);
    // objective sum(gh * psi_h) + sum(gv * psi_v), evaluated in double
    auto objective = [&](const std::vector<double>& d) {
      auto vec = [&](int p, int c) { return d[static_cast<std::size_t>(c * H * W + p)]; };
      auto psi = [&](int p, int q) {
        double dot = 0, na = 0, nb = 0;
        for (int c = 0; c < F; ++c) {
          dot += vec(p, c) * vec(q, c);
          na += vec(p, c) * vec(p, c);
          nb += vec(q, c) * vec(q, c);
        }
        return 0.5 * (1.0 + dot / std::sqrt(na * nb));
      };
      double s = 0.0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int p = y * W + x;
          if (x + 1 < W) s += gh[static_cast<std::size_t>(y * (W - 1) + x)] * psi(p, p + 1);
          if (y + 1 < H) s += gv[static_cast<std::size_t>(p)] * psi(p, p + W);
        }
      return s;
    };
    std::vector<double> d(f.data.begin(), f.data.end());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double keep = d[i], h = 1e-6;
      d[i] = keep + h;
      const double up = objective(d);
      d[i] = keep - h;
      const double down = objective(d);
      d[i] = keep;
      EXPECT_NEAR(analytic[i], (up - down) / (2 * h), 1e-3);
    }
  }
}

TEST(CutCapacity, SingleNode) {
  GridGraph g(1, 1, 1.0);
  g.phi_s = {0.9};
  g.phi_t = {0.1};
  EXPECT_DOUBLE_EQ(cut_capacity(g, Labeling(1, 1, 1)), 0.1);
  EXPECT_DOUBLE_EQ(cut_capacity(g, Labeling(1, 1, 0)), 0.9);
}

TEST(CutCapacity, TwoPixelExample) {
  const GridGraph g = two_pixel_graph();
  Labeling l(1, 2);
  l[0] = 1;
  EXPECT_NEAR(cut_capacity(g, l), 0.8, 1e-12);
  // 0.8 is the smallest of the four labelings
  double best = 1e9;
  for (int m = 0; m < 4; ++m) {
    Labeling k(1, 2);
    k[0] = m & 1;
    k[1] = (m >> 1) & 1;
    best = std::min(best, cut_capacity(g, k));
  }
  EXPECT_NEAR(best, 0.8, 1e-12);
}

TEST(CutCapacity, AllForegroundIsSumOfSinkLinks) {
  std::mt19937_64 rng(6);
  const GridGraph g = random_graph(rng, 4, 5);
  double s = 0.0;
  for (double v : g.phi_t) s += v;
  EXPECT_NEAR(cut_capacity(g, Labeling(4, 5, 1)), s, 1e-12);
}

TEST(CutEdges, Conventions) {
  const GridGraph g = two_pixel_graph();
  EXPECT_EQ(cut_edges(GridGraph(1, 1), Labeling(1, 1, 1)).edges(), std::vector<EdgeId>{EdgeId::sink(0)});
  Labeling l(1, 2);
  l[0] = 1;
  const CutEdgeSet want(std::vector<EdgeId>{EdgeId::sink(0), EdgeId::source(1), EdgeId::nlink(0, 1)});
  EXPECT_EQ(cut_edges(g, l), want);
}

TEST(CutEdges, UniformLabelingHasOnlyTLinks) {
  std::mt19937_64 rng(7);
  const GridGraph g = random_graph(rng, 3, 4);
  for (std::uint8_t v : {0, 1}) {
    const CutEdgeSet c = cut_edges(g, Labeling(3, 4, v));
    EXPECT_EQ(c.size(), 12u);
    EXPECT_EQ(c.nlink_count(), 0u);
  }
}

TEST(CutEdges, WeightSumEqualsCapacityOnRandomGraphs) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    const int H = 1 + static_cast<int>(rng() % 6), W = 1 + static_cast<int>(rng() % 6);
    const GridGraph g = random_graph(rng, H, W);
    const Labeling l = random_labels(rng, H, W);
    const double cap = cut_capacity(g, l);
    EXPECT_NEAR(edge_weight_sum(g, cut_edges(g, l)), cap, 1e-9 * std::max(1.0, cap));
    EXPECT_NEAR(oracle_capacity(g, l), cap, 1e-9 * std::max(1.0, cap));
  }
}

TEST(CutEdges, NLinksCanonicalAndUnique) {
  EXPECT_EQ(EdgeId::nlink(5, 2), EdgeId::nlink(2, 5));
  const CutEdgeSet c(std::vector<EdgeId>{EdgeId::nlink(3, 1), EdgeId::nlink(1, 3), EdgeId::sink(0)});
  EXPECT_EQ(c.size(), 2u);
  EXPECT_TRUE(c.contains(EdgeId::nlink(1, 3)));
}

TEST(GtCut, Examples) {
  GridGraph g(2, 2, 1.0);
  g.phi_s = {1, 1, 1, 1};
  g.phi_t = {0, 0, 0, 0};
  g.psi_h = {0.3, 0.3};
  g.psi_v = {0.3, 0.3};
  EXPECT_EQ(gt_cut(g, Labeling(2, 2, 1)).capacity, 0.0);
  EXPECT_NEAR(gt_cut(two_pixel_graph(), Labeling(1, 2, 1)).capacity, 0.9, 1e-12);
}

TEST(GtCut, InvariantUnderEquivalentLabelEncoding) {
  // a labeling rebuilt from its own partition gives the same capacity
  std::mt19937_64 rng(9);
  const GridGraph g = random_graph(rng, 4, 4);
  const Labeling l = random_labels(rng, 4, 4);
  Labeling copy(4, 4);
  for (std::size_t p = 0; p < l.size(); ++p) copy[p] = l[p] == 1 ? 1 : 0;
  EXPECT_EQ(cut_capacity(g, l), cut_capacity(g, copy));
}

TEST(GridGraph, ValidateRejectsBadWeights) {
  GridGraph g = two_pixel_graph();
  EXPECT_NO_THROW(g.validate());
  g.phi_s[0] = 0.95;
  EXPECT_THROW(g.validate(), InvalidArgument);
  g = two_pixel_graph();
  g.psi_h[0] = -0.1;
  EXPECT_THROW(g.validate_weights(), InvalidArgument);
  g = two_pixel_graph();
  g.gamma = 0.0;
  EXPECT_THROW(g.validate(), InvalidArgument);
}

TEST(GraphDump, RoundTrip) {
  std::mt19937_64 rng(10);
  const GridGraph g = random_graph(rng, 3, 4);
  std::stringstream ss;
  write_graph(ss, g);
  EXPECT_EQ(ss.str().rfind("GCGRAPH v1 3 4 ", 0), 0u);
  const GridGraph back = read_graph(ss);
  EXPECT_EQ(back.phi_s, g.phi_s);
  EXPECT_EQ(back.phi_t, g.phi_t);
  EXPECT_EQ(back.psi_h, g.psi_h);
  EXPECT_EQ(back.psi_v, g.psi_v);
  EXPECT_EQ(back.gamma, g.gamma);
}
