#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include "distnav/evalsuite.hpp"
#include "distnav/geometry.hpp"
#include "distnav/nn.hpp"
#include "distnav/simworld.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <queue>

namespace oracle {

using namespace distnav;

/// Fixed-step ray march (default 1 mm) followed by bisection on the boundary.
inline double march_depth(const sim::GridWorld& w, double x, double y, double angle, double max_range,
                          double step = 1e-3) {
  const double dx = std::cos(angle), dy = std::sin(angle);
  auto blocked = [&](double t) {
    double px = x + t * dx, py = y + t * dy;
    int cx = static_cast<int>(std::floor(px / w.cell_size)), cy = static_cast<int>(std::floor(py / w.cell_size));
    return w.blocks_ray(cx, cy);
  };
  double prev = 0.0;
  for (double t = step; t <= max_range + step; t += step) {
    double tt = std::min(t, max_range);
    if (blocked(tt)) {
      double lo = prev, hi = tt;
      for (int k = 0; k < 60; ++k) {
        double mid = 0.5 * (lo + hi);
        (blocked(mid) ? hi : lo) = mid;
      }
      return hi;
    }
    prev = tt;
    if (tt == max_range) break;
  }
  return max_range;
}

/// Plain BFS over the 4-neighbourhood of traversable cells.
inline std::vector<int> bfs(const sim::GridWorld& w, sim::Cell src) {
  std::vector<int> d(static_cast<std::size_t>(w.width * w.height), -1);
  if (!w.traversable(src)) return d;
  std::queue<sim::Cell> q;
  d[w.index(src.x, src.y)] = 0;
  q.push(src);
  const int off[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  while (!q.empty()) {
    sim::Cell c = q.front();
    q.pop();
    for (auto& o : off) {
      sim::Cell n{c.x + o[0], c.y + o[1]};
      if (!w.traversable(n) || d[w.index(n.x, n.y)] >= 0) continue;
      d[w.index(n.x, n.y)] = d[w.index(c.x, c.y)] + 1;
      q.push(n);
    }
  }
  return d;
}

/// Dijkstra with unit edge weights in meters.
inline double dijkstra(const sim::GridWorld& w, sim::Cell a, sim::Cell b) {
  std::vector<double> dist(static_cast<std::size_t>(w.width * w.height), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[w.index(a.x, a.y)] = 0.0;
  pq.push({0.0, w.index(a.x, a.y)});
  while (!pq.empty()) {
    auto [d, i] = pq.top();
    pq.pop();
    if (d > dist[i]) continue;
    int x = static_cast<int>(i % w.width), y = static_cast<int>(i / w.width);
    for (auto [ox, oy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
      if (!w.traversable(x + ox, y + oy)) continue;
      std::size_t j = w.index(x + ox, y + oy);
      if (d + w.cell_size < dist[j]) {
        dist[j] = d + w.cell_size;
        pq.push({dist[j], j});
      }
    }
  }
  return dist[w.index(b.x, b.y)];
}

/// Tau-b by explicit pair enumeration with sign products.
inline double tau_b(const std::vector<double>& a, const std::vector<double>& b) {
  long long s = 0, n0 = 0, n1 = 0, n2 = 0;
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i >= j) continue;
      int sa = (a[i] > a[j]) - (a[i] < a[j]);
      int sb = (b[i] > b[j]) - (b[i] < b[j]);
      s += sa * sb;
      ++n0;
      n1 += sa == 0;
      n2 += sb == 0;
    }
  return static_cast<double>(s) / std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

/// Per-ray unproject / reproject with nearest-ray search over the current bundle.
inline double psr(const sim::Observation& goal, const sim::Observation& cur, double tau = 0.1) {
  const int R = goal.ray_count();
  int valid = 0, ok = 0;
  for (int i = 0; i < R; ++i) {
    if (!(goal.depth[i] < goal.max_range)) continue;
    ++valid;
    double a = goal.pose.heading + sim::ray_offset(i, R, goal.fov);
    double wx = goal.pose.x + goal.depth[i] * std::cos(a);
    double wy = goal.pose.y + goal.depth[i] * std::sin(a);
    double bearing = std::atan2(wy - cur.pose.y, wx - cur.pose.x);
    double rel = sim::angle_diff(bearing, cur.pose.heading);
    if (std::abs(rel) > cur.fov / 2) continue;
    int best = 0;
    double best_err = 1e9;
    for (int j = 0; j < R; ++j) {
      double e = std::abs(rel - sim::ray_offset(j, R, cur.fov));
      if (e < best_err) {
        best_err = e;
        best = j;
      }
    }
    double range = std::sqrt((wx - cur.pose.x) * (wx - cur.pose.x) + (wy - cur.pose.y) * (wy - cur.pose.y));
    if (std::abs(range - cur.depth[best]) < tau) ++ok;
  }
  return valid == 0 ? 0.0 : static_cast<double>(ok) / valid;
}

struct FdReport {
  double max_rel = 0.0;
  std::string worst;
};

/// Central differences on every entry of every tensor in `params`; the
/// relative error of each tensor is ||g - g_fd|| / max(||g|| + ||g_fd||, floor).
inline FdReport fd_check(nn::ParamSet& params, const std::vector<ad::Mat>& grads,
                         const std::function<double()>& loss, double h = 1e-4, double floor = 1e-8,
                         int max_entries_per_tensor = std::numeric_limits<int>::max()) {
  FdReport rep;
  for (int t = 0; t < params.size(); ++t) {
    ad::Mat& p = params[t];
    const long n = p.size();
    const long stride = std::max<long>(1, n / std::min<long>(n, max_entries_per_tensor));
    double num2 = 0.0, den_a = 0.0, den_b = 0.0;
    for (long k = 0; k < n; k += stride) {
      double orig = p.data()[k];
      p.data()[k] = orig + h;
      double fp = loss();
      p.data()[k] = orig - h;
      double fm = loss();
      p.data()[k] = orig;
      double g_fd = (fp - fm) / (2 * h);
      double g = grads[static_cast<std::size_t>(t)].data()[k];
      num2 += (g - g_fd) * (g - g_fd);
      den_a += g * g;
      den_b += g_fd * g_fd;
    }
    double rel = std::sqrt(num2) / std::max(std::sqrt(den_a) + std::sqrt(den_b), floor);
    if (rel > rep.max_rel) {
      rep.max_rel = rel;
      rep.worst = params.name(t);
    }
  }
  return rep;
}

/// Geodesic-distance oracle wrapped as a distance function (steps).
inline eval::DistanceFn geodesic_fn(const sim::GridWorld& w) {
  return [&w](std::span<const sim::Observation* const> obs, std::span<const dm::GoalSpec* const> goals) {
    std::vector<dm::DistPrediction> out;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const sim::Pose& g = goals[i]->view->pose;
      std::vector<int> d = bfs(w, w.cell_of(g.x, g.y));
      const sim::Pose& p = obs[i]->pose;
      out.push_back({static_cast<double>(d[w.index(w.cell_of(p.x, p.y).x, w.cell_of(p.x, p.y).y)]), 1.0});
    }
    return out;
  };
}

// Walled rectangle with an interior free region [1, w-2] x [1, h-2].
inline sim::GridWorld open_box(int w, int h) {
  sim::GridWorld g;
  g.width = w;
  g.height = h;
  g.occupancy.assign(static_cast<std::size_t>(w * h), 1);
  g.room_id.assign(static_cast<std::size_t>(w * h), -1);
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      g.occupancy[g.index(x, y)] = 0;
      g.room_id[g.index(x, y)] = 0;
    }
  g.room_count = 1;
  g.rebuild_object_grid();
  return g;
}

// One-cell-wide corridor along y = 1 from x = 1 to x = len, object at the end.
inline sim::GridWorld corridor(int len) {
  sim::GridWorld g = open_box(len + 2, 3);
  g.objects.push_back({5, sim::Cell{len, 1}, std::numbers::pi});
  g.rebuild_object_grid();
  return g;
}

}  // namespace oracle
