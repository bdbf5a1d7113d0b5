#pragma once

// Region overlap scores and boundary distance scores for binary masks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "gcseg/errors.hpp"
#include "gcseg/graph.hpp"

namespace gcseg {

struct RegionScores {
  double precision = 0.0;
  double recall = 0.0;
  double dice = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Empty-denominator rule: 1.0 when both masks are empty, 0.0 when exactly one is.
inline RegionScores region_scores(const Labeling& pred, const Labeling& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size())
    throw InvalidArgument("prediction and ground truth sizes differ");
  RegionScores s;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (pred[p] && gt[p]) ++s.tp;
    else if (pred[p]) ++s.fp;
    else if (gt[p]) ++s.fn;
  }
  const std::size_t pred_n = s.tp + s.fp, gt_n = s.tp + s.fn;
  if (pred_n == 0 && gt_n == 0) {
    s.precision = s.recall = s.dice = 1.0;
    return s;
  }
  s.precision = pred_n ? static_cast<double>(s.tp) / static_cast<double>(pred_n) : 0.0;
  s.recall = gt_n ? static_cast<double>(s.tp) / static_cast<double>(gt_n) : 0.0;
  s.dice = 2.0 * static_cast<double>(s.tp) / static_cast<double>(2 * s.tp + s.fp + s.fn);
  return s;
}

struct SurfaceScores {
  double asd = 0.0;
  double hd = 0.0;
  double hd95 = 0.0;
};

struct Point {
  int y, x;
};

// Foreground pixels with a 4-neighbour in the background; outside the image
// counts as background.
inline std::vector<Point> boundary_points(const Labeling& m) {
  std::vector<Point> pts;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == m.height || x + 1 == m.width || !m.at(y - 1, x) ||
                        !m.at(y + 1, x) || !m.at(y, x - 1) || !m.at(y, x + 1);
      if (edge) pts.push_back({y, x});
    }
  return pts;
}

// Percentile with linear interpolation between closest ranks (q in [0,1]).
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace detail {

// Distance from each point of a to its nearest point of b.
inline std::vector<double> directed_distances(const std::vector<Point>& a, const std::vector<Point>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    long best = std::numeric_limits<long>::max();
    for (const auto& q : b) {
      const long dy = a[i].y - q.y, dx = a[i].x - q.x;
      best = std::min(best, dy * dy + dx * dx);
    }
    d[i] = std::sqrt(static_cast<double>(best));
  }
  return d;
}

inline double mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

}  // namespace detail

// Symmetric boundary distances in pixels. Throws UndefinedMetric on an empty mask.
inline SurfaceScores surface_scores(const Labeling& pred, const Labeling& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw InvalidArgument("prediction and ground truth sizes differ");
  const auto bp = boundary_points(pred), bg = boundary_points(gt);
  if (bp.empty() || bg.empty()) throw UndefinedMetric("surface distance undefined for an empty mask");
  const auto d_pg = detail::directed_distances(bp, bg);
  const auto d_gp = detail::directed_distances(bg, bp);
  SurfaceScores s;
  s.asd = 0.5 * (detail::mean(d_pg) + detail::mean(d_gp));
  s.hd = std::max(*std::max_element(d_pg.begin(), d_pg.end()), *std::max_element(d_gp.begin(), d_gp.end()));
  s.hd95 = std::max(percentile(d_pg, 0.95), percentile(d_gp, 0.95));
  return s;
}

}  // namespace gcseg
