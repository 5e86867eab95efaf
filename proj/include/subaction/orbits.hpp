#pragma once

#include <algorithm>
#include <cmath>
#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <unordered_set>
#include <vector>

#include "charts.hpp"
#include "common.hpp"
#include "laxoleinik.hpp"
#include "shadowing.hpp"
#include "systems.hpp"

namespace subaction {

// Torus points carry exact rational coordinates num / den.
struct PeriodicOrbit {
  int period = 0;
  std::vector<PhasePoint> points;
  std::vector<std::array<std::int64_t, 2>> num;
  std::int64_t den = 1;
  double sum = 0;
  double mean = 0;

  void evaluate(const Observable& phi) {
    sum = 0;
    for (const auto& p : points) sum += phi(p);
    mean = sum / period;
  }
};

using i128 = __int128;

inline std::int64_t mod_floor(i128 a, std::int64_t m) {
  i128 r = a % m;
  if (r < 0) r += m;
  return std::int64_t(r);
}

// A^n for the cat matrix, exact.
inline std::array<std::int64_t, 4> cat_power(int n) {
  if (n < 0 || n > 40) throw ConfigError("period must be in [0, 40] for exact arithmetic");
  std::array<i128, 4> r{1, 0, 0, 1};
  for (int k = 0; k < n; ++k) r = {2 * r[0] + r[2], 2 * r[1] + r[3], r[0] + r[2], r[1] + r[3]};
  return {std::int64_t(r[0]), std::int64_t(r[1]), std::int64_t(r[2]), std::int64_t(r[3])};
}

inline std::int64_t cat_periodic_count(int n) {
  auto p = cat_power(n);
  i128 det = i128(p[0] - 1) * (p[3] - 1) - i128(p[1]) * p[2];
  return std::int64_t(det < 0 ? -det : det);
}

struct SmithForm {
  std::int64_t d1 = 0, d2 = 0;
  // M R = L^{-1} diag(d1, d2) with L, R unimodular; only R is kept.
  std::array<i128, 4> R{1, 0, 0, 1};
};

inline SmithForm smith_2x2(std::array<std::int64_t, 4> M) {
  std::array<i128, 4> m{M[0], M[1], M[2], M[3]};
  SmithForm s;
  auto ext = [](i128 a, i128 b, i128& x, i128& y) {
    i128 x0 = 1, y0 = 0, x1 = 0, y1 = 1;
    while (b != 0) {
      i128 q = a / b, t = a - q * b;
      a = b;
      b = t;
      t = x0 - q * x1;
      x0 = x1;
      x1 = t;
      t = y0 - q * y1;
      y0 = y1;
      y1 = t;
    }
    x = x0;
    y = y0;
    return a;
  };
  for (int guard = 0; guard < 200; ++guard) {
    if (m[1] != 0 && m[0] != 0 && m[1] % m[0] == 0) {
      i128 k = m[1] / m[0];
      m[1] -= k * m[0];
      m[3] -= k * m[2];
      s.R[1] -= k * s.R[0];
      s.R[3] -= k * s.R[2];
      continue;
    }
    if (m[2] != 0 && m[0] != 0 && m[2] % m[0] == 0) {
      i128 k = m[2] / m[0];
      m[2] -= k * m[0];
      m[3] -= k * m[1];
      continue;
    }
    if (m[1] != 0) {
      i128 x, y, g = ext(m[0], m[1], x, y);
      i128 p = m[1] / g, q = m[0] / g;
      // columns: c0' = x c0 + y c1, c1' = -p c0 + q c1
      auto col = [&](std::array<i128, 4>& a) {
        i128 a0 = a[0], a1 = a[1], a2 = a[2], a3 = a[3];
        a[0] = x * a0 + y * a1;
        a[1] = -p * a0 + q * a1;
        a[2] = x * a2 + y * a3;
        a[3] = -p * a2 + q * a3;
      };
      col(m);
      col(s.R);
      continue;
    }
    if (m[2] != 0) {
      i128 x, y, g = ext(m[0], m[2], x, y);
      i128 p = m[2] / g, q = m[0] / g;
      i128 a0 = m[0], a1 = m[1], a2 = m[2], a3 = m[3];
      m[0] = x * a0 + y * a2;
      m[1] = x * a1 + y * a3;
      m[2] = -p * a0 + q * a2;
      m[3] = -p * a1 + q * a3;
      continue;
    }
    if (m[0] != 0 && m[3] % m[0] != 0) {
      m[1] += m[3];  // row0 += row1
      continue;
    }
    break;
  }
  if (m[1] != 0 || m[2] != 0 || m[0] == 0 || m[3] == 0) throw NumericalFailure("Smith form did not reduce");
  s.d1 = std::int64_t(m[0] < 0 ? -m[0] : m[0]);
  s.d2 = std::int64_t(m[3] < 0 ? -m[3] : m[3]);
  return s;
}

// All points with A^n p = p mod 1, grouped into orbits.
inline std::vector<PeriodicOrbit> periodic_points(const DynamicalSystem& sys, int n,
                                                  std::int64_t max_points = 50000000) {
  if (!sys.is_linear()) throw ConfigError("exact periodic points need the linear cat map");
  if (n < 1 || n > 20) throw ConfigError("period must be in [1, 20]");
  auto An = cat_power(n);
  std::array<std::int64_t, 4> M{An[0] - 1, An[1], An[2], An[3] - 1};
  std::int64_t count = cat_periodic_count(n);
  if (count > max_points) throw ConfigError("too many periodic points for period " + std::to_string(n));
  SmithForm s = smith_2x2(M);
  const std::int64_t den = s.d2, scale = s.d2 / s.d1;
  std::vector<std::array<std::int64_t, 2>> pts;
  pts.reserve(std::size_t(count));
  for (std::int64_t i = 0; i < s.d1; ++i)
    for (std::int64_t j = 0; j < s.d2; ++j) {
      i128 a = i128(i) * scale, b = j;
      pts.push_back({mod_floor(s.R[0] * a + s.R[1] * b, den), mod_floor(s.R[2] * a + s.R[3] * b, den)});
    }
  auto key = [den](const std::array<std::int64_t, 2>& p) { return std::uint64_t(p[0]) * std::uint64_t(den) + p[1]; };
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(pts.size() * 2);
  std::sort(pts.begin(), pts.end());
  std::vector<PeriodicOrbit> out;
  for (const auto& p0 : pts) {
    if (seen.count(key(p0))) continue;
    PeriodicOrbit o;
    o.den = den;
    auto p = p0;
    do {
      seen.insert(key(p));
      o.num.push_back(p);
      o.points.push_back(Vec2{double(p[0]) / den, double(p[1]) / den});
      p = {mod_floor(2 * i128(p[0]) + p[1], den), mod_floor(i128(p[0]) + p[1], den)};
    } while (p != p0);
    o.period = int(o.num.size());
    out.push_back(std::move(o));
  }
  return out;
}

// A^n p == p mod 1 in integer arithmetic.
inline bool verify_periodic(const PeriodicOrbit& o, int n) {
  auto An = cat_power(n);
  for (const auto& p : o.num) {
    std::int64_t x = mod_floor(i128(An[0]) * p[0] + i128(An[1]) * p[1], o.den);
    std::int64_t y = mod_floor(i128(An[2]) * p[0] + i128(An[3]) * p[1], o.den);
    if (x != p[0] || y != p[1]) return false;
  }
  return true;
}

// Periodic orbits of the golden-mean shift with minimal period n, each given
// by the words of the system depth read off the periodic sequence.
inline std::vector<PeriodicOrbit> periodic_words(const DynamicalSystem& sys, int n) {
  if (sys.is_torus()) throw ConfigError("periodic words need a shift system");
  if (n < 1 || n > 24) throw ConfigError("word period must be in [1, 24]");
  const int D = sys.depth();
  std::vector<PeriodicOrbit> out;
  auto rot = [n](std::uint32_t m) { return ((m >> 1) | ((m & 1u) << (n - 1))) & ((n == 32 ? 0u : (1u << n)) - 1u); };
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i)
      if (((m >> i) & 1u) && ((m >> ((i + 1) % n)) & 1u)) ok = false;
    if (!ok) continue;
    // Canonical representative: smallest rotation, and minimal period n.
    std::uint32_t r = m;
    bool canonical = true;
    int period = n;
    for (int k = 1; k < n; ++k) {
      r = rot(r);
      if (r < m) canonical = false;
      if (r == m) {
        period = k;
        break;
      }
    }
    if (!canonical || period != n) continue;
    PeriodicOrbit o;
    o.period = n;
    std::uint32_t cur = m;
    for (int k = 0; k < n; ++k) {
      Word w{0, D};
      for (int i = 0; i < D; ++i)
        if ((cur >> (i % n)) & 1u) w.bits |= 1u << i;
      o.points.push_back(w);
      cur = rot(cur);
    }
    out.push_back(std::move(o));
  }
  return out;
}

struct EbarEstimate {
  double value = 0;
  std::string method;
  std::vector<PhasePoint> certificate;
  std::vector<double> per_period;  // best mean over periods <= P, P = 1..P_max
  int orbits_found = 0;
  int orbits_skipped = 0;
};

// Periodic orbits of period <= P_max. On the perturbed cat map they come from
// shadowing the linear map's periodic orbits; orbits whose pseudo-orbit is not
// admissible for the perturbed constants are skipped and counted.
inline std::vector<PeriodicOrbit> enumerate_orbits(const DynamicalSystem& sys, int P_max, int* skipped = nullptr) {
  std::vector<PeriodicOrbit> all;
  if (skipped) *skipped = 0;
  if (!sys.is_torus()) {
    for (int n = 1; n <= P_max; ++n)
      for (auto& o : periodic_words(sys, n)) all.push_back(std::move(o));
    return all;
  }
  std::vector<PeriodicOrbit> lin;
  for (int n = 1; n <= P_max; ++n)
    for (auto& o : periodic_points(DynamicalSystem::cat_map(), n))
      if (o.period == n) lin.push_back(std::move(o));
  if (sys.is_linear()) return lin;
  ChartFamily fam;
  auto c = system_constants(sys, HyperbolicConstants::draft(), &fam);
  for (auto& o : lin) {
    std::vector<Vec2> xs;
    for (const auto& p : o.points) xs.push_back(std::get<Vec2>(p));
    xs.push_back(xs.front());
    try {
      auto po = pseudo_orbit_from_points(sys, xs, true);
      // The extension must span a few dozen steps whatever the period.
      ShadowOptions opt;
      opt.s_start = std::max(1, 24 / o.period);
      opt.s_max = std::max(12, 64 / o.period);
      auto r = shadow_periodic(po, fam, c, opt);
      PeriodicOrbit q;
      q.period = o.period;
      for (int k = 0; k < o.period; ++k) q.points.push_back(r.y[k]);
      all.push_back(std::move(q));
    } catch (const std::exception&) {
      if (skipped) ++*skipped;
    }
  }
  return all;
}

inline EbarEstimate birkhoff_min_periodic(const DynamicalSystem& sys, const Observable& phi, int P_max) {
  if (P_max < 1) throw ConfigError("P_max must be >= 1");
  EbarEstimate e;
  e.method = "periodic-scan:" + std::to_string(P_max);
  auto orbits = enumerate_orbits(sys, P_max, &e.orbits_skipped);
  e.orbits_found = int(orbits.size());
  e.per_period.assign(P_max, std::numeric_limits<double>::infinity());
  e.value = std::numeric_limits<double>::infinity();
  for (auto& o : orbits) {
    o.evaluate(phi);
    for (int P = o.period; P <= P_max; ++P) e.per_period[P - 1] = std::min(e.per_period[P - 1], o.mean);
    if (o.mean < e.value) {
      e.value = o.mean;
      e.certificate = o.points;
    }
  }
  return e;
}

struct Edge {
  int from, to;
  double w;
};

struct CycleMean {
  double mean = std::numeric_limits<double>::infinity();
  std::vector<int> cycle;  // node sequence, first node not repeated
};

// Mean of a cycle summed from its smallest node, so equal cycles give equal
// bits whichever way they were found.
inline double canonical_cycle_mean(const std::vector<int>& cyc, const std::vector<Edge>& edges) {
  auto rot = std::min_element(cyc.begin(), cyc.end()) - cyc.begin();
  double s = 0;
  const std::size_t L = cyc.size();
  for (std::size_t k = 0; k < L; ++k) {
    int a = cyc[(rot + k) % L], b = cyc[(rot + k + 1) % L];
    double w = std::numeric_limits<double>::infinity();
    for (const auto& e : edges)
      if (e.from == a && e.to == b) w = std::min(w, e.w);
    s += w;
  }
  return s / double(L);
}

// Karp's dynamic program; the optimal cycle is read off the minimising walk.
inline CycleMean karp_min_mean_cycle(int nv, const std::vector<Edge>& edges) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> Dk(nv + 1, std::vector<double>(nv, inf));
  std::vector<std::vector<int>> par(nv + 1, std::vector<int>(nv, -1));
  for (int v = 0; v < nv; ++v) Dk[0][v] = 0;  // virtual source joined to every node
  for (int k = 1; k <= nv; ++k)
    for (const auto& e : edges)
      if (Dk[k - 1][e.from] + e.w < Dk[k][e.to]) {
        Dk[k][e.to] = Dk[k - 1][e.from] + e.w;
        par[k][e.to] = e.from;
      }
  double best = inf;
  int bv = -1;
  for (int v = 0; v < nv; ++v) {
    if (Dk[nv][v] == inf) continue;
    double worst = -inf;
    for (int k = 0; k < nv; ++k)
      if (Dk[k][v] < inf) worst = std::max(worst, (Dk[nv][v] - Dk[k][v]) / (nv - k));
    if (worst < best) {
      best = worst;
      bv = v;
    }
  }
  CycleMean r;
  if (bv < 0) return r;
  std::vector<int> walk(nv + 1);
  walk[nv] = bv;
  for (int k = nv; k > 0; --k) walk[k - 1] = par[k][walk[k]];
  // Every cycle on the minimising walk has mean >= best; take the smallest.
  for (int i = 0; i <= nv; ++i)
    for (int j = i + 1; j <= nv; ++j)
      if (walk[i] == walk[j]) {
        std::vector<int> cyc(walk.begin() + i, walk.begin() + j);
        double m = canonical_cycle_mean(cyc, edges);
        if (m < r.mean) {
          r.mean = m;
          r.cycle = cyc;
        }
        break;
      }
  return r;
}

// Exhaustive minimum over all simple cycles (small graphs only).
inline CycleMean exhaustive_min_mean_cycle(int nv, const std::vector<Edge>& edges) {
  CycleMean r;
  std::vector<int> path;
  std::vector<char> on(nv, 0);
  auto has = [&](int a, int b) {
    for (const auto& e : edges)
      if (e.from == a && e.to == b) return true;
    return false;
  };
  std::function<void(int, int)> dfs = [&](int start, int v) {
    for (int w = start; w < nv; ++w) {
      if (!has(v, w)) continue;
      if (w == start) {
        double m = canonical_cycle_mean(path, edges);
        if (m < r.mean) {
          r.mean = m;
          r.cycle = path;
        }
      } else if (!on[w]) {
        on[w] = 1;
        path.push_back(w);
        dfs(start, w);
        path.pop_back();
        on[w] = 0;
      }
    }
  };
  for (int s = 0; s < nv; ++s) {
    path = {s};
    on[s] = 1;
    dfs(s, s);
    on[s] = 0;
  }
  return r;
}

inline std::vector<Edge> golden_mean_edges(const Observable& phi) {
  if (!phi.locally_constant) throw ConfigError("min_mean_cycle needs a locally constant (edge cost) observable");
  return {{0, 0, phi.edge[0]}, {0, 1, phi.edge[1]}, {1, 0, phi.edge[2]}};
}

inline EbarEstimate min_mean_cycle(const DynamicalSystem& sys, const Observable& phi) {
  if (sys.is_torus()) throw ConfigError("min_mean_cycle needs a shift system");
  auto edges = golden_mean_edges(phi);
  auto c = karp_min_mean_cycle(2, edges);
  EbarEstimate e;
  e.method = "exact-karp";
  e.value = c.mean;
  // Certificate: the periodic words of the optimal cycle.
  const int L = int(c.cycle.size()), D = sys.depth();
  for (int k = 0; k < L; ++k) {
    Word w{0, D};
    for (int i = 0; i < D; ++i)
      if (c.cycle[(k + i) % L]) w.bits |= 1u << i;
    e.certificate.push_back(w);
  }
  e.orbits_found = 1;
  return e;
}

// Minimum cycle mean of the grid cost graph E(x, x') with phibar = 0: the
// phibar for which the grid fixed point problem is solvable. Dense Karp, so
// the grid is capped.
inline EbarEstimate grid_min_cycle_mean(LaxOleinikProblem prob, std::size_t max_points = 1024) {
  const auto& g = *prob.grid;
  const std::size_t N = g.size();
  if (N > max_points) throw ConfigError("grid cycle mean needs at most " + std::to_string(max_points) + " grid points");
  prob.phibar = 0;
  LaxOleinikOperator T(prob);
  std::vector<Edge> edges;
  edges.reserve(N * N);
  for (std::size_t x = 0; x < N; ++x)
    for (std::size_t y = 0; y < N; ++y) edges.push_back({int(x), int(y), T.E(x, y)});
  auto c = karp_min_mean_cycle(int(N), edges);
  EbarEstimate e;
  e.method = "grid-karp";
  e.value = c.mean;
  for (int v : c.cycle) e.certificate.push_back(g.point(std::size_t(v)));
  e.orbits_found = 1;
  return e;
}

// Smallest length-n Birkhoff average over the starts: a lattice of about
// `samples` points (which contains the origin) on the torus, seeded random
// words on the shift.
inline EbarEstimate sweep_min(const DynamicalSystem& sys, const Observable& phi, int n, std::size_t samples,
                              std::uint64_t seed) {
  if (n < 1 || samples < 1) throw ConfigError("sweep needs n >= 1 and samples >= 1");
  std::vector<PhasePoint> starts;
  if (sys.is_torus()) {
    int q = std::max(1, int(std::sqrt(double(samples))));
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) starts.push_back(Vec2{double(i) / q, double(j) / q});
  } else {
    auto W = sys.words();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, W.size() - 1);
    for (std::size_t s = 0; s < samples; ++s) starts.push_back(W[pick(rng)]);
  }
  std::vector<double> avg(starts.size());
  parallel_for(starts.size(), [&](std::size_t lo, std::size_t hi, unsigned) {
    for (std::size_t s = lo; s < hi; ++s) {
      PhasePoint x = starts[s];
      double sum = 0;
      for (int k = 0; k < n; ++k) {
        sum += phi(x);
        x = sys.map(x);
      }
      avg[s] = sum / n;
    }
  });
  auto it = std::min_element(avg.begin(), avg.end());
  EbarEstimate e;
  e.method = "sweep:" + std::to_string(n);
  e.value = *it;
  e.certificate = {starts[it - avg.begin()]};
  e.orbits_found = int(starts.size());
  return e;
}

struct LivsicHypothesisReport {
  bool pass = true;
  int orbits_checked = 0;
  double min_sum = std::numeric_limits<double>::infinity();
  std::vector<PeriodicOrbit> violations;
};

inline LivsicHypothesisReport check_positive_livsic_hypothesis(const DynamicalSystem& sys, const Observable& phi,
                                                               int P_max) {
  LivsicHypothesisReport r;
  for (auto& o : enumerate_orbits(sys, P_max)) {
    o.evaluate(phi);
    ++r.orbits_checked;
    r.min_sum = std::min(r.min_sum, o.sum);
    if (o.sum < 0) {
      r.pass = false;
      r.violations.push_back(o);
    }
  }
  return r;
}

}  // namespace subaction
