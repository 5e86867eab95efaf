#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "charts.hpp"
#include "common.hpp"
#include "systems.hpp"

namespace subaction {

// x[0..n]; delta[k] = d(f(x[k-1]), x[k]) for k = 1..n, delta[0] = 0.
struct PseudoOrbit {
  std::vector<Vec2> x;
  std::vector<double> delta;
  bool periodic = false;
  std::uint64_t seed = 0;

  int n() const { return int(x.size()) - 1; }
  double sum_delta() const {
    double s = 0;
    for (std::size_t k = 1; k < delta.size(); ++k) s += delta[k];
    return s;
  }
  double max_delta() const {
    double s = 0;
    for (std::size_t k = 1; k < delta.size(); ++k) s = std::max(s, delta[k]);
    return s;
  }
};

inline void recompute_errors(const DynamicalSystem& sys, PseudoOrbit& po) {
  po.delta.assign(po.x.size(), 0.0);
  for (std::size_t k = 1; k < po.x.size(); ++k) po.delta[k] = sys.distance(sys.map(po.x[k - 1]), po.x[k]);
}

inline PseudoOrbit pseudo_orbit_from_points(const DynamicalSystem& sys, std::vector<Vec2> pts, bool periodic) {
  if (pts.size() < 2) throw ConfigError("pseudo-orbit needs at least two points");
  for (auto& p : pts) p = wrap(p);
  if (periodic && !(pts.front() == pts.back())) pts.push_back(pts.front());
  PseudoOrbit po{std::move(pts), {}, periodic, 0};
  recompute_errors(sys, po);
  return po;
}

// Displacement with sup-metric norm at most `noise`, uniform in eigen-coordinates.
template <class Rng>
Vec2 metric_noise(Rng& rng, double noise) {
  if (noise == 0.0) return {0.0, 0.0};
  std::uniform_real_distribution<double> u(-noise, noise);
  double a = u(rng);
  return torus_metric().basis() * Vec2{a, u(rng)};
}

// x_k = f(x_{k-1}) + xi_k. In periodic mode x_n is reset to x_0 and the
// closing error is recorded as delta_n.
inline PseudoOrbit make_pseudo_orbit(const DynamicalSystem& sys, Vec2 x0, int n, double noise, std::uint64_t seed,
                                     bool periodic = false) {
  if (!sys.is_torus()) throw ConfigError("pseudo-orbits are generated on torus systems");
  if (n < 1) throw ConfigError("pseudo-orbit length must be >= 1");
  std::mt19937_64 rng(seed);
  PseudoOrbit po;
  po.seed = seed;
  po.periodic = periodic;
  po.x.push_back(wrap(x0));
  for (int k = 1; k <= n; ++k) po.x.push_back(wrap(sys.map(po.x.back()) + metric_noise(rng, noise)));
  if (periodic) po.x.back() = po.x.front();
  recompute_errors(sys, po);
  return po;
}

// Periodic pseudo-orbit obtained by displacing every point of a true periodic
// orbit (points p_0..p_{n-1}) by at most `noise`.
inline PseudoOrbit perturb_periodic_orbit(const DynamicalSystem& sys, const std::vector<Vec2>& orbit, double noise,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PseudoOrbit po;
  po.seed = seed;
  po.periodic = true;
  for (const Vec2& p : orbit) po.x.push_back(wrap(p + metric_noise(rng, noise)));
  po.x.push_back(po.x.front());
  recompute_errors(sys, po);
  return po;
}

struct BoundCheck {
  std::string name;
  std::string anchor;
  double lhs = 0;
  double rhs = 0;
  bool pass = false;
  double slack() const { return rhs - lhs; }
};

struct ShadowingGrid {
  int n = 0;
  std::vector<std::vector<PLGraph>> G;                   // G[i][k], k <= i
  std::vector<std::vector<std::vector<Vec2>>> Q;         // Q[i][j][k], j <= n-i, k <= i
  std::vector<std::vector<double>> h;                    // h[i][j] = |P^s(Q_i(j,0) - Q_i(j,i))|
};

struct ShadowResult {
  std::vector<Vec2> x;      // pseudo-orbit
  std::vector<Vec2> y;      // shadow orbit in the ambient torus
  std::vector<Vec2> p;      // shadow orbit in the chart at x_i
  std::vector<double> delta;
  std::vector<double> dist; // d(x_i, y_i)
  bool periodic = false;
  double step_defect = 0;   // max_i |f_i(p_i) - p_{i+1}| in chart units
  double interpolation_slack = 0;
  double period_residual = 0;  // d(f^n(y_0), y_0), periodic mode
  int extension = 0;           // s of the converged window [-sn, sn]
  std::vector<BoundCheck> bounds;
  std::optional<ShadowingGrid> grid;

  bool all_pass() const {
    for (const auto& b : bounds)
      if (!b.pass) return false;
    return true;
  }
};

// Recomputes both sides of the shadowing inequalities from distances alone.
// Torus coordinates live in [0,1); distances below this are rounding.
inline constexpr double kPositionResolution = 4 * std::numeric_limits<double>::epsilon();

inline std::vector<BoundCheck> verify_shadowing_bounds(const PseudoOrbit& po, const std::vector<double>& dist,
                                                       const HyperbolicConstants& c) {
  const double res = kPositionResolution;
  std::vector<BoundCheck> out;
  const int n = po.n();
  if (int(dist.size()) != n + 1) throw std::invalid_argument("distance vector length mismatch");
  if (!po.periodic) {
    BoundCheck local{"exponential_locality", "shadowing exponential locality", 0, 0, true};
    // Reported sides are those of the index with the smallest slack.
    double least = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= n; ++i) {
      double rhs = 0;
      for (int k = 1; k <= n; ++k) rhs += po.delta[k] * std::exp(-c.lambda_as * std::abs(k - i));
      rhs *= c.K_as;
      if (dist[i] > rhs + res) local.pass = false;
      if (rhs - dist[i] < least) {
        least = rhs - dist[i];
        local.lhs = dist[i];
        local.rhs = rhs;
      }
    }
    out.push_back(local);
    double s = 0, m = 0;
    for (double d : dist) {
      s += d;
      m = std::max(m, d);
    }
    const double sr = c.K_as * po.sum_delta(), mr = c.K_as * po.max_delta();
    out.push_back({"sum_bound", "shadowing sum bound", s, sr, s <= sr + (n + 1) * res});
    out.push_back({"max_bound", "shadowing max bound", m, mr, m <= mr + res});
  } else {
    double s = 0, m = 0;
    for (int i = 1; i <= n; ++i) s += dist[i];
    for (int i = 0; i < n; ++i) m = std::max(m, dist[i]);
    const double sr = c.K_aps * po.sum_delta(), mr = c.K_aps * po.max_delta();
    out.push_back({"periodic_sum_bound", "periodic shadowing sum bound", s, sr, s <= sr + n * res});
    out.push_back({"periodic_max_bound", "periodic shadowing max bound", m, mr, m <= mr + res});
  }
  return out;
}

struct ShadowOptions {
  int graph_half = 64;        // node spacing rho/graph_half
  double root_tol = 1e-14;
  bool full_grid = false;     // build every Q_i(j,k); O(n^3) work
  bool measure_slack = false;
  // Periodic mode.
  int s_start = 1;
  int s_step = 1;
  int s_max = 12;
  double window_tol = 1e-12;
};

namespace detail {

inline void check_admissible(const std::vector<LocalMap>& maps, const HyperbolicConstants& c) {
  for (std::size_t i = 0; i < maps.size(); ++i) {
    double off = AdaptedChart::norm(maps[i]({0.0, 0.0}));
    if (off > c.eps_rho)
      throw ConfigError("pseudo-orbit leaves Omega_AS: chart offset " + std::to_string(off) + " at step " +
                        std::to_string(i + 1));
  }
}

struct ChainSolution {
  std::vector<Vec2> p;
  double slack = 0;
};

// Diagonal of the grid: G_{i,i} by successive transforms of the horizontal
// graph through q_0 = 0, then p_n = (0, G_{n,n}(0)) and backward root-solves
// f_{i-1}(p_{i-1}) = p_i along Graph(G_{i-1,i-1}). These are the entries
// p_i = Q_i(n-i, i).
inline ChainSolution solve_chain(const std::vector<LocalMap>& maps, const HyperbolicConstants& c,
                                 const ShadowOptions& opt) {
  const int n = int(maps.size());
  GraphTransformOptions gopt{opt.root_tol, opt.measure_slack, true};
  std::vector<PLGraph> G;
  G.reserve(n + 1);
  G.push_back(PLGraph::constant(c.rho, 0.0, opt.graph_half));
  ChainSolution out;
  for (int i = 1; i <= n; ++i) {
    auto r = graph_transform(G.back(), maps[i - 1], c, gopt);
    out.slack = std::max(out.slack, r.interpolation_slack);
    G.push_back(std::move(r.graph));
  }
  out.p.assign(n + 1, {});
  out.p[n] = {0.0, G[n](0.0)};
  for (int i = n; i >= 1; --i) {
    double v;
    transform_value(G[i - 1], maps[i - 1], out.p[i].x, opt.root_tol, &v);
    out.p[i - 1] = {v, G[i - 1](v)};
  }
  return out;
}

inline ShadowingGrid build_grid(const std::vector<LocalMap>& maps, const HyperbolicConstants& c,
                                const ShadowOptions& opt) {
  const int n = int(maps.size());
  GraphTransformOptions gopt{opt.root_tol, false, true};
  ShadowingGrid g;
  g.n = n;
  g.G.resize(n + 1);
  for (int i = 0; i <= n; ++i) {
    g.G[i].push_back(PLGraph::constant(c.rho, 0.0, opt.graph_half));
    for (int k = 1; k <= i; ++k) g.G[i].push_back(graph_transform(g.G[i - 1][k - 1], maps[i - 1], c, gopt).graph);
  }
  g.Q.resize(n + 1);
  for (int i = 0; i <= n; ++i) {
    g.Q[i].assign(n - i + 1, std::vector<Vec2>(i + 1));
    for (int k = 0; k <= i; ++k) g.Q[i][0][k] = {0.0, g.G[i][k](0.0)};
  }
  for (int j = 1; j <= n; ++j)
    for (int i = n - j; i >= 0; --i)
      for (int k = 0; k <= i; ++k) {
        double v;
        transform_value(g.G[i][k], maps[i], g.Q[i + 1][j - 1][k + 1].x, opt.root_tol, &v);
        g.Q[i][j][k] = {v, g.G[i][k](v)};
      }
  g.h.resize(n + 1);
  for (int i = 0; i <= n; ++i)
    for (int j = 0; j <= n - i; ++j) g.h[i].push_back(std::fabs(g.Q[i][j][0].y - g.Q[i][j][i].y));
  return g;
}

inline double step_defect(const std::vector<LocalMap>& maps, const std::vector<Vec2>& p) {
  double d = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) d = std::max(d, AdaptedChart::norm(maps[i](p[i]) - p[i + 1]));
  return d;
}

}  // namespace detail

inline ShadowResult shadow(const PseudoOrbit& po, const ChartFamily& fam, const HyperbolicConstants& c,
                           const ShadowOptions& opt = {}) {
  const int n = po.n();
  std::vector<AdaptedChart> charts;
  charts.reserve(n + 1);
  for (const Vec2& x : po.x) charts.push_back(fam.chart_at(x));
  std::vector<LocalMap> maps;
  for (int i = 0; i < n; ++i) maps.push_back(fam.local_map(charts[i], charts[i + 1]));
  detail::check_admissible(maps, c);

  ShadowResult r;
  r.x = po.x;
  r.delta = po.delta;
  if (po.max_delta() == 0.0) {
    // A true orbit is its own (unique) shadow; skip the rounding of the chart round trip.
    r.p.assign(n + 1, Vec2{0.0, 0.0});
    r.y = po.x;
    r.dist.assign(n + 1, 0.0);
  } else {
    auto sol = detail::solve_chain(maps, c, opt);
    r.p = sol.p;
    r.interpolation_slack = sol.slack;
    for (int i = 0; i <= n; ++i) {
      r.y.push_back(charts[i].point(r.p[i]));
      r.dist.push_back(fam.system().distance(po.x[i], r.y.back()));
    }
  }
  r.step_defect = detail::step_defect(maps, r.p);
  if (opt.full_grid) r.grid = detail::build_grid(maps, c, opt);
  r.bounds = verify_shadowing_bounds(po, r.dist, c);
  return r;
}

// Shadows the s-fold periodic extension over indices [-sn, sn] and keeps the
// central period once it stops moving as s grows.
inline ShadowResult shadow_periodic(const PseudoOrbit& po, const ChartFamily& fam, const HyperbolicConstants& c,
                                    const ShadowOptions& opt = {}) {
  if (!po.periodic || !(po.x.front() == po.x.back())) throw ConfigError("periodic shadowing needs x_n = x_0");
  const int n = po.n();
  std::vector<AdaptedChart> charts;
  for (int i = 0; i < n; ++i) charts.push_back(fam.chart_at(po.x[i]));
  std::vector<LocalMap> period;
  for (int i = 0; i < n; ++i) period.push_back(fam.local_map(charts[i], charts[(i + 1) % n]));
  detail::check_admissible(period, c);

  std::vector<Vec2> prev;
  int s = opt.s_start;
  bool converged = false;
  std::vector<Vec2> center;
  double slack = 0;
  for (; s <= opt.s_max; s += opt.s_step) {
    std::vector<LocalMap> window;
    for (int t = 0; t < 2 * s * n; ++t) window.push_back(period[t % n]);
    auto sol = detail::solve_chain(window, c, opt);
    slack = sol.slack;
    center.assign(sol.p.begin() + s * n, sol.p.begin() + s * n + n + 1);
    if (!prev.empty()) {
      double change = 0;
      for (int i = 0; i <= n; ++i) change = std::max(change, AdaptedChart::norm(center[i] - prev[i]));
      if (change <= opt.window_tol) {
        converged = true;
        break;
      }
    }
    prev = center;
  }
  if (!converged) throw NumericalFailure("periodic shadowing did not converge within s_max");

  ShadowResult r;
  r.periodic = true;
  r.extension = s;
  r.x = po.x;
  r.delta = po.delta;
  r.p = center;
  r.interpolation_slack = slack;
  std::vector<LocalMap> one(period);
  r.step_defect = detail::step_defect(one, r.p);
  const auto& sys = fam.system();
  for (int i = 0; i <= n; ++i) {
    r.y.push_back(charts[i % n].point(r.p[i]));
    r.dist.push_back(sys.distance(po.x[i], r.y.back()));
  }
  Vec2 z = r.y[0];
  for (int i = 0; i < n; ++i) z = sys.map(z);
  r.period_residual = sys.distance(z, r.y[0]);
  r.bounds = verify_shadowing_bounds(po, r.dist, c);
  return r;
}

// Eigen-coordinate errors e_k = E^{-1}(x_k - f(x_{k-1})), k = 1..n.
inline std::vector<Vec2> linear_errors(const DynamicalSystem& sys, const PseudoOrbit& po) {
  if (!sys.is_linear()) throw ConfigError("exact linear shadowing needs the linear cat map");
  const auto& M = torus_metric();
  std::vector<Vec2> e(po.x.size());
  for (std::size_t k = 1; k < po.x.size(); ++k) e[k] = M.coords(M.displacement(sys.map(po.x[k - 1]), po.x[k]));
  return e;
}

inline ShadowResult finish_exact(const DynamicalSystem& sys, const PseudoOrbit& po, const std::vector<Vec2>& z,
                                 const HyperbolicConstants* c) {
  const auto& M = torus_metric();
  ShadowResult r;
  r.periodic = po.periodic;
  r.x = po.x;
  r.delta = po.delta;
  r.p = z;
  for (std::size_t i = 0; i < po.x.size(); ++i) {
    r.y.push_back(wrap(po.x[i] + M.basis() * z[i]));
    r.dist.push_back(sys.distance(po.x[i], r.y.back()));
  }
  if (c) r.bounds = verify_shadowing_bounds(po, r.dist, *c);
  return r;
}

// Bounded solution of z_i = D z_{i-1} - e_i with z_0 stable-free and z_n
// unstable-free: unstable parts summed forward in time with weights
// lambda_u^{-m}, stable parts backward with weights lambda_s^m.
inline ShadowResult shadow_exact_linear(const PseudoOrbit& po, const DynamicalSystem& sys,
                                        const HyperbolicConstants* c = nullptr) {
  auto e = linear_errors(sys, po);
  const int n = po.n();
  std::vector<Vec2> z(n + 1);
  double acc = 0;
  for (int i = 1; i <= n; ++i) {
    acc = kLambdaS * acc - e[i].y;
    z[i].y = acc;
  }
  acc = 0;
  for (int i = n - 1; i >= 0; --i) {
    acc = (acc + e[i + 1].x) / kLambdaU;
    z[i].x = acc;
  }
  return finish_exact(sys, po, z, c);
}

// Periodic version: the correction is the n-periodic bounded solution, summed
// over one period with the geometric factor 1/(1 - lambda^n).
inline ShadowResult shadow_exact_periodic_linear(const PseudoOrbit& po, const DynamicalSystem& sys,
                                                 const HyperbolicConstants* c = nullptr) {
  if (!po.periodic) throw ConfigError("periodic linear oracle needs a periodic pseudo-orbit");
  auto e = linear_errors(sys, po);
  const int n = po.n();
  auto err = [&](int k) { return e[((k - 1) % n + n) % n + 1]; };
  std::vector<Vec2> z(n + 1);
  double gu = 1.0 / (1.0 - std::pow(kLambdaU, -n)), gs = 1.0 / (1.0 - std::pow(kLambdaS, n));
  for (int i = 0; i <= n; ++i) {
    double u = 0, s = 0;
    for (int k = 1; k <= n; ++k) u += err(i + k).x * std::pow(kLambdaU, -k);
    for (int k = 0; k < n; ++k) s -= err(i - k).y * std::pow(kLambdaS, k);
    z[i] = {u * gu, s * gs};
  }
  return finish_exact(sys, po, z, c);
}

}  // namespace subaction
