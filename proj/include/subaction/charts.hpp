#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "systems.hpp"

namespace subaction {

struct HyperbolicConstants {
  double sigma_u = 2.6;
  double sigma_s = 0.39;
  double eta = 0.01;
  double rho = 0.05;

  double eps_rho = 0;
  double alpha = 0;
  double exp_neg_lambda_gamma = 0;
  double lambda_gamma = 0;
  double K_gamma = 0;

  double lip_f = 0;
  double lip_gamma = 0;
  double eps_as = 0;
  double K_as = 0;
  double lambda_as = 0;
  double K_aps = 0;
  double diam = 0;
  double N_as = 0;
  double delta_as = 0;
  double K_lambda = 0;

  bool symbolic = false;
  bool derived = false;
  // Smallest measured slack per verified inequality (positive means it holds).
  std::map<std::string, double> margins;

  static HyperbolicConstants draft(double su = 2.6, double ss = 0.39, double eta = 0.01, double rho = 0.05) {
    HyperbolicConstants c;
    c.sigma_u = su;
    c.sigma_s = ss;
    c.eta = eta;
    c.rho = rho;
    c.validate();
    c.eps_rho = rho * std::min((su - 1.0) / 2.0, (1.0 - ss) / 8.0);
    c.alpha = 6.0 * eta / (su - ss);
    c.exp_neg_lambda_gamma = std::max((ss + 3.0 * eta) / (1.0 - 3.0 * eta), 1.0 / (su - 3.0 * eta));
    c.lambda_gamma = -std::log(c.exp_neg_lambda_gamma);
    double gap = 1.0 - c.exp_neg_lambda_gamma;
    c.K_gamma = 5.0 / (gap * gap);
    return c;
  }

  void validate() const {
    if (!(sigma_u > 1.0 && 1.0 > sigma_s && sigma_s > 0.0))
      throw ConfigError("hyperbolic constants need sigma_u > 1 > sigma_s > 0");
    if (!(eta >= 0.0 && eta < std::min((sigma_u - 1.0) / 6.0, (1.0 - sigma_s) / 6.0)))
      throw ConfigError("eta must be below min((sigma_u-1)/6, (1-sigma_s)/6)");
    if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  }

  // The stronger eta bound required by the shadowing construction.
  bool shadowing_eta_ok() const {
    return eta < std::min((1.0 - sigma_s) * (1.0 - sigma_s) / 12.0, (sigma_u - 1.0) / 6.0);
  }

  double C_for(double lip_phi) const { return K_lambda * lip_phi; }
};

inline double aps_factor(double exp_neg_lambda) { return (1.0 + exp_neg_lambda) / (1.0 - exp_neg_lambda); }

struct AdaptedChart {
  Vec2 base;
  Mat2 frame;      // columns: unstable and stable frame vectors
  Mat2 frame_inv;

  Vec2 lift_point(const Vec2& c) const { return base + frame * c; }
  Vec2 point(const Vec2& c) const { return wrap(lift_point(c)); }
  Vec2 coords(const Vec2& z) const { return frame_inv * centered(z - base); }
  Vec2 unstable_frame() const { return {frame.a, frame.c}; }
  Vec2 stable_frame() const { return {frame.b, frame.d}; }

  static double norm(const Vec2& c) { return sup_norm(c); }
  static Vec2 proj_u(const Vec2& c) { return {c.x, 0.0}; }
  static Vec2 proj_s(const Vec2& c) { return {0.0, c.y}; }
};

// f_{x,y} = chart_y^{-1} o f o chart_x, in adapted coordinates.
struct LocalMap {
  const DynamicalSystem* sys = nullptr;
  AdaptedChart from, to;

  Vec2 operator()(const Vec2& c) const { return to.frame_inv * centered(sys->lift(from.lift_point(c)) - to.base); }
  Mat2 jacobian(const Vec2& c) const { return to.frame_inv * sys->jacobian(from.lift_point(c)) * from.frame; }
  Mat2 linear() const { return jacobian({0.0, 0.0}); }
  // Blocks of the linearization: A^u, D^u, D^s, A^s.
  double Au() const { return linear().a; }
  double Du() const { return linear().b; }
  double Ds() const { return linear().c; }
  double As() const { return linear().d; }
};

class ChartFamily {
 public:
  ChartFamily() = default;
  ChartFamily(const DynamicalSystem& sys, const HyperbolicConstants& c) : sys_(&sys), c_(c) {
    if (!sys.is_torus()) throw ConfigError("adapted charts need a torus system");
    if (sys.is_linear()) return;
    double ku = std::log(c.sigma_u), ks = std::log(c.sigma_s);
    if (!(sys.lambda_s() < ks)) throw InfeasibleConstants("sigma_s above contraction rate", ks - sys.lambda_s());
    if (!(sys.lambda_u() > ku)) throw InfeasibleConstants("sigma_u above expansion rate", sys.lambda_u() - ku);
    double lg = std::log(2.0 * sys.c_lambda());
    n_s_ = int(std::ceil(lg / (ks - sys.lambda_s())));
    n_u_ = int(std::ceil(lg / (sys.lambda_u() - ku)));
  }

  const DynamicalSystem& system() const { return *sys_; }
  const HyperbolicConstants& constants() const { return c_; }
  int chain_length_u() const { return n_u_; }
  int chain_length_s() const { return n_s_; }

  AdaptedChart chart_at(const Vec2& x) const {
    const auto& M = torus_metric();
    if (sys_->is_linear()) return {x, M.basis(), M.inverse_basis()};
    auto [eu, su] = unstable_direction(x);
    auto [es, ss] = stable_direction(x);
    Vec2 cu = eu * (1.0 / (M.norm(eu) * su));
    Vec2 cs = es * (1.0 / (M.norm(es) * ss));
    Mat2 F = Mat2::columns(cu, cs);
    return {x, F, F.inverse()};
  }

  LocalMap local_map(const AdaptedChart& a, const AdaptedChart& b) const { return {sys_, a, b}; }
  LocalMap local_map(const Vec2& x, const Vec2& y) const { return {sys_, chart_at(x), chart_at(y)}; }

 private:
  static constexpr int kWarmup = 40;

  // Pushes a vector forward along a backward orbit; the one-step expansion
  // factors near x give the chain scale max(1, max_m sigma_u^m / Lambda_m).
  std::pair<Vec2, double> unstable_direction(const Vec2& x) const {
    const auto& M = torus_metric();
    int len = kWarmup + n_u_;
    std::vector<Vec2> back(len + 1);
    back[0] = x;
    for (int m = 1; m <= len; ++m) back[m] = sys_->inverse(back[m - 1]);
    Vec2 v = M.unstable();
    std::vector<double> grow(n_u_ + 1, 1.0);
    for (int m = len; m >= 1; --m) {
      Vec2 w = sys_->jacobian(back[m]) * v;
      double g = M.norm(w) / M.norm(v);
      if (m <= n_u_) grow[m] = g;
      v = w * (1.0 / M.norm(w));
    }
    if (v.x * M.unstable().x + v.y * M.unstable().y < 0) v = v * -1.0;
    double scale = 1.0, lam = 1.0, ku = std::log(c_.sigma_u);
    for (int m = 1; m < n_u_; ++m) {
      lam *= grow[m];
      scale = std::max(scale, std::exp(m * ku) / lam);
    }
    return {v, scale};
  }

  std::pair<Vec2, double> stable_direction(const Vec2& x) const {
    const auto& M = torus_metric();
    int len = kWarmup + n_s_;
    std::vector<Vec2> fwd(len + 1);
    fwd[0] = x;
    for (int m = 1; m <= len; ++m) fwd[m] = sys_->map(fwd[m - 1]);
    Vec2 w = M.stable();
    std::vector<double> shrink(n_s_ + 1, 1.0);
    for (int m = len - 1; m >= 0; --m) {
      w = sys_->jacobian(fwd[m]).inverse() * w;
      w = w * (1.0 / M.norm(w));
      if (m < n_s_) shrink[m] = M.norm(sys_->jacobian(fwd[m]) * w);
    }
    if (w.x * M.stable().x + w.y * M.stable().y < 0) w = w * -1.0;
    double scale = 1.0, lam = 1.0, ks = std::log(c_.sigma_s);
    for (int m = 1; m < n_s_; ++m) {
      lam *= shrink[m - 1];
      scale = std::max(scale, lam / std::exp(m * ks));
    }
    return {w, scale};
  }

  const DynamicalSystem* sys_ = nullptr;
  HyperbolicConstants c_;
  int n_u_ = 0, n_s_ = 0;
};

struct ChartBuild {
  ChartFamily family;
  HyperbolicConstants constants;
};

struct TransitionSample {
  Vec2 x, y;
};

// Pairs x -> y with y = f(x) displaced by at most eps_rho/2 in the metric.
inline std::vector<TransitionSample> sample_transitions(const DynamicalSystem& sys, double eps_rho, int count,
                                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0), d(-0.5 * eps_rho, 0.5 * eps_rho);
  std::vector<TransitionSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    double a = u(rng);
    Vec2 x{a, u(rng)};
    double r1 = d(rng);
    Vec2 xi = torus_metric().basis() * Vec2{r1, d(rng)};
    out.push_back({x, wrap(sys.map(x) + xi)});
  }
  return out;
}

// Checks the one-step hyperbolicity inequalities of the adapted local maps
// on sampled transitions and records the worst margin of each.
inline ChartBuild build_charts(const DynamicalSystem& sys, HyperbolicConstants draft, int samples = 1000,
                               std::uint64_t seed = 1) {
  draft.validate();
  draft = HyperbolicConstants::draft(draft.sigma_u, draft.sigma_s, draft.eta, draft.rho);
  ChartFamily fam(sys, draft);
  const double inf = std::numeric_limits<double>::infinity();
  std::map<std::string, double> m{{"expansion", inf},   {"contraction", inf}, {"offdiag_u", inf},
                                  {"offdiag_s", inf},   {"nonlinearity", inf}, {"chart_offset", inf}};
  const double rho = draft.rho;
  const std::vector<Vec2> probes{{0, 0},          {rho, rho},        {rho, -rho},      {-rho, rho},
                                 {-rho, -rho},    {rho, 0},          {0, rho},         {-rho, 0},
                                 {0, -rho},       {0.5 * rho, -0.3 * rho}};
  for (const auto& t : sample_transitions(sys, draft.eps_rho, samples, seed)) {
    LocalMap lm = fam.local_map(t.x, t.y);
    Mat2 A = lm.linear();
    m["expansion"] = std::min(m["expansion"], std::fabs(A.a) - draft.sigma_u);
    m["contraction"] = std::min(m["contraction"], draft.sigma_s - std::fabs(A.d));
    m["offdiag_u"] = std::min(m["offdiag_u"], draft.eta - std::fabs(A.b));
    m["offdiag_s"] = std::min(m["offdiag_s"], draft.eta - std::fabs(A.c));
    m["chart_offset"] = std::min(m["chart_offset"], draft.eps_rho - AdaptedChart::norm(lm({0, 0})));
    if (!sys.is_linear())
      for (const auto& p : probes)
        m["nonlinearity"] = std::min(m["nonlinearity"], draft.eta - (lm.jacobian(p) - A).norm_inf());
  }
  if (sys.is_linear()) m["nonlinearity"] = draft.eta;
  auto worst = std::min_element(m.begin(), m.end(), [](auto& a, auto& b) { return a.second < b.second; });
  if (worst->second < 0.0) throw InfeasibleConstants(worst->first, worst->second);
  draft.margins = m;
  return {fam, draft};
}

// Exhaustive covering count on the torus: an m x m sub-lattice whose covering
// radius is at most r. Upper bound for the minimal number of r-balls.
inline double torus_covering_count(double r) {
  double m = std::floor(torus_metric().covering_radius() / r) + 1.0;
  return m * m;
}

// Greedy covering of a finite point set by open balls of radius r.
template <class Point, class Dist>
inline std::size_t greedy_covering(const std::vector<Point>& pts, double r, Dist dist) {
  std::vector<char> covered(pts.size(), 0);
  std::size_t balls = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (covered[i]) continue;
    ++balls;
    for (std::size_t j = i; j < pts.size(); ++j)
      if (!covered[j] && dist(pts[i], pts[j]) < r) covered[j] = 1;
  }
  return balls;
}

inline void fill_global_constants(HyperbolicConstants& c) {
  c.K_aps = c.K_as * aps_factor(std::exp(-c.lambda_as));
  c.delta_as = c.N_as * c.diam;
  c.K_lambda = std::max((c.N_as + 1.0) * c.diam / c.eps_as, c.K_aps);
  c.derived = true;
}

inline HyperbolicConstants derive_constants(HyperbolicConstants base, const DynamicalSystem& sys,
                                            const ChartFamily& fam, int samples = 1000, std::uint64_t seed = 2) {
  const auto& M = torus_metric();
  if (sys.is_linear()) {
    base.lip_f = kLambdaU;
    base.lip_gamma = 1.0;
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double lf = 0, lg = 0;
    for (int i = 0; i < samples; ++i) {
      double a = u(rng);
      Vec2 x{a, u(rng)};
      lf = std::max(lf, (M.inverse_basis() * sys.jacobian(x) * M.basis()).norm_inf());
      AdaptedChart ch = fam.chart_at(x);
      lg = std::max({lg, (M.inverse_basis() * ch.frame).norm_inf(), (ch.frame_inv * M.basis()).norm_inf()});
    }
    base.lip_f = lf;
    base.lip_gamma = lg;
  }
  double lg1 = 1.0 + base.lip_gamma;
  base.eps_as = base.eps_rho / (lg1 * lg1 * (1.0 + base.lip_f));
  base.K_as = base.lip_gamma * base.lip_gamma * base.K_gamma;
  base.lambda_as = base.lambda_gamma;
  base.diam = sys.diameter();
  base.N_as = torus_covering_count(0.5 * base.eps_as);
  fill_global_constants(base);
  return base;
}

// Golden-mean shift, computed directly in the word metric. Pseudo-orbit steps
// below 1/2 agree with the image at symbol 0, which makes the pseudo-orbit a
// true orbit on its first symbols; the error of the shadow at index i is then
// bounded by sum_k 2^{-(k-i)} delta_k, giving K_AS = 1 and lambda_AS = log 2.
inline HyperbolicConstants derive_symbolic_constants(const DynamicalSystem& sys) {
  if (sys.is_torus()) throw ConfigError("symbolic constants need a shift system");
  HyperbolicConstants c;
  c.symbolic = true;
  c.sigma_u = 2.0;
  c.sigma_s = 0.5;
  c.eta = 0.0;
  c.rho = 1.0;
  c.eps_rho = 0.5;
  c.lip_f = 2.0;
  c.lip_gamma = 1.0;
  c.eps_as = 0.5;
  c.K_as = 1.0;
  c.lambda_as = std::log(2.0);
  c.exp_neg_lambda_gamma = 0.5;
  c.lambda_gamma = c.lambda_as;
  c.K_gamma = 1.0;
  c.diam = sys.diameter();
  c.N_as = double(greedy_covering(sys.words(), 0.5 * c.eps_as, word_distance));
  fill_global_constants(c);
  return c;
}

// Default chart construction plus constant derivation for any built-in system.
inline HyperbolicConstants system_constants(const DynamicalSystem& sys,
                                            const HyperbolicConstants& draft = HyperbolicConstants::draft(),
                                            ChartFamily* family_out = nullptr) {
  if (!sys.is_torus()) return derive_symbolic_constants(sys);
  ChartBuild b = build_charts(sys, draft);
  if (family_out) *family_out = b.family;
  return derive_constants(b.constants, sys, b.family);
}

// ---- cones ----

enum class ConeSide { unstable, stable };

inline bool cone_membership(const Vec2& w, ConeSide side, double alpha) {
  if (side == ConeSide::unstable) return std::fabs(w.y) <= alpha * std::fabs(w.x);
  return std::fabs(w.x) <= alpha * std::fabs(w.y);
}

inline double cone_beta(double alpha, const HyperbolicConstants& c) {
  return (alpha * c.sigma_s + 3.0 * c.eta) / (c.sigma_u - 3.0 * c.eta);
}

struct ConeReport {
  bool hypothesis = false;     // the pair satisfies the lemma's premise
  bool ok = true;              // conclusion holds (vacuous when hypothesis fails)
  double beta = 0;
  double image_ratio = 0;      // |P^s d'|/|P^u d'| (unstable) or |P^u d|/|P^s d| (stable)
  double factor = 0;           // measured expansion (unstable) or contraction (stable)
  double factor_bound = 0;
};

inline ConeReport cone_propagate(const Vec2& a, const Vec2& b, const LocalMap& lm, double alpha,
                                 const HyperbolicConstants& c, ConeSide side = ConeSide::unstable) {
  ConeReport r;
  r.beta = cone_beta(alpha, c);
  Vec2 d = b - a;
  Vec2 fd = lm(b) - lm(a);
  const double tol = 1e-12;
  if (side == ConeSide::unstable) {
    r.factor_bound = c.sigma_u - 3.0 * c.eta;
    r.hypothesis = cone_membership(d, ConeSide::unstable, alpha) && d.x != 0.0;
    if (!r.hypothesis) return r;
    r.image_ratio = std::fabs(fd.y) / std::fabs(fd.x);
    r.factor = std::fabs(fd.x) / std::fabs(d.x);
    r.ok = r.image_ratio <= r.beta + tol && r.factor >= r.factor_bound - tol;
  } else {
    r.factor_bound = c.sigma_s + 3.0 * c.eta;
    r.hypothesis = cone_membership(fd, ConeSide::stable, alpha) && fd.y != 0.0;
    if (!r.hypothesis) return r;
    r.image_ratio = d.y == 0.0 ? std::numeric_limits<double>::infinity() : std::fabs(d.x) / std::fabs(d.y);
    r.factor = std::fabs(fd.y) / std::fabs(d.y);
    r.ok = r.image_ratio <= r.beta + tol && r.factor <= r.factor_bound + tol;
  }
  return r;
}

// ---- graphs over the unstable direction ----

struct PLGraph {
  double rho = 0.05;
  int half = 64;                // nodes v_j = -rho + j*h, j = 0..2*half
  std::vector<double> values;

  static PLGraph constant(double rho, double c, int half = 64) {
    return {rho, half, std::vector<double>(2 * half + 1, c)};
  }
  double h() const { return rho / half; }
  int nodes() const { return 2 * half + 1; }
  double node(int j) const { return j == half ? 0.0 : -rho + j * h(); }

  double operator()(double v) const {
    double t = (std::clamp(v, -rho, rho) + rho) / h();
    int j = std::min(int(t), 2 * half - 1);
    double s = t - j;
    return values[j] + s * (values[j + 1] - values[j]);
  }
  double slope() const {
    double s = 0;
    for (int j = 0; j + 1 < nodes(); ++j) s = std::max(s, std::fabs(values[j + 1] - values[j]) / h());
    return s;
  }
  double height() const { return std::fabs(values[half]); }
  double sup() const {
    double s = 0;
    for (double v : values) s = std::max(s, std::fabs(v));
    return s;
  }
  double sup_diff(const PLGraph& o) const {
    double s = 0;
    for (int j = 0; j < nodes(); ++j) s = std::max(s, std::fabs(values[j] - o.values[j]));
    return s;
  }
};

// Safeguarded regula falsi (Illinois) on a sign-changing bracket.
template <class F>
double solve_bracketed(F psi, double lo, double hi, double tol) {
  double flo = psi(lo), fhi = psi(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0) == (fhi > 0)) throw NumericalFailure("root-finder non-bracketing");
  int side = 0;
  double x = lo;
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    double xs = (lo * fhi - hi * flo) / (fhi - flo);
    // Fall back to bisection when the secant point is not interior.
    if (!(xs > lo && xs < hi)) xs = 0.5 * (lo + hi);
    double prev = x;
    x = xs;
    double fx = psi(x);
    if (fx == 0.0) return x;
    if ((fx > 0) == (fhi > 0)) {
      hi = x;
      fhi = fx;
      if (side == -1) flo *= 0.5;
      side = -1;
    } else {
      lo = x;
      flo = fx;
      if (side == 1) fhi *= 0.5;
      side = 1;
    }
    if (std::fabs(x - prev) < 0.1 * tol) break;
  }
  return x;
}

struct GraphTransformResult {
  PLGraph graph;
  double slope = 0;
  double height = 0;
  double interpolation_slack = 0;  // sup deviation of the PL image from the exact image at cell midpoints
};

struct GraphTransformOptions {
  double tol = 1e-12;
  bool measure_slack = false;
  bool certify = true;
};

// Exact transform value at target unstable coordinate vt.
inline double transform_value(const PLGraph& G, const LocalMap& lm, double vt, double tol, double* preimage = nullptr) {
  auto psi = [&](double v) { return lm({v, G(v)}).x - vt; };
  double v = solve_bracketed(psi, -G.rho, G.rho, tol);
  if (preimage) *preimage = v;
  return lm({v, G(v)}).y;
}

inline GraphTransformResult graph_transform(const PLGraph& G, const LocalMap& lm, const HyperbolicConstants& c,
                                            const GraphTransformOptions& opt = {}) {
  GraphTransformResult r;
  r.graph = PLGraph::constant(G.rho, 0.0, G.half);
  for (int j = 0; j < G.nodes(); ++j) r.graph.values[j] = transform_value(G, lm, r.graph.node(j), opt.tol);
  r.slope = r.graph.slope();
  r.height = r.graph.height();
  if (opt.measure_slack)
    for (int j = 0; j + 1 < G.nodes(); ++j) {
      double mid = r.graph.node(j) + 0.5 * r.graph.h();
      double exact = transform_value(G, lm, mid, opt.tol);
      r.interpolation_slack = std::max(r.interpolation_slack, std::fabs(exact - r.graph(mid)));
    }
  if (opt.certify) {
    // Node secant slopes of an alpha-Lipschitz graph are at most alpha; the
    // allowance covers the root-finder tolerance divided by the node spacing.
    double allowance = 4.0 * opt.tol / G.h();
    if (r.slope > c.alpha + allowance) throw InfeasibleConstants("graph slope <= alpha", c.alpha - r.slope);
    if (r.height > 0.5 * c.rho) throw InfeasibleConstants("graph height <= rho/2", 0.5 * c.rho - r.height);
    if (r.graph.sup() > c.rho) throw InfeasibleConstants("graph inside stable ball", c.rho - r.graph.sup());
  }
  return r;
}

// G^n at the end of the chain: transforms of the null graph over the last n maps.
inline PLGraph local_unstable_manifold(const std::vector<LocalMap>& chain, const HyperbolicConstants& c, int n,
                                       int half = 64) {
  if (n < 1 || n > int(chain.size())) throw ConfigError("chain shorter than requested depth");
  PLGraph G = PLGraph::constant(c.rho, 0.0, half);
  for (std::size_t k = chain.size() - n; k < chain.size(); ++k) G = graph_transform(G, chain[k], c).graph;
  return G;
}

// Convergence certificate of the iterates G^n_m at the chain end m. Each
// difference G^{n+1}_m - G^n_m is the transform of G^n_{m-1} - G^{n-1}_{m-1}
// under the last map, so their ratio measures the contraction factor.
struct ManifoldConvergence {
  std::vector<double> diffs;   // |G^{n+1}_m - G^n_m|, n = 0 .. n_max-1 (G^0 = 0)
  std::vector<double> ratios;  // diffs[n] / |G^n_{m-1} - G^{n-1}_{m-1}|, n >= 1
  double rate = 0;             // largest ratio whose denominator is above `floor`
};

inline ManifoldConvergence manifold_convergence(const std::vector<LocalMap>& chain, const HyperbolicConstants& c,
                                                int n_max, int half = 64, double floor = 1e-11) {
  if (n_max < 1 || n_max + 1 > int(chain.size())) throw ConfigError("chain shorter than requested depth");
  std::vector<LocalMap> head(chain.begin(), chain.end() - 1);
  auto graphs = [&](const std::vector<LocalMap>& ch, int upto) {
    std::vector<PLGraph> G{PLGraph::constant(c.rho, 0.0, half)};
    for (int n = 1; n <= upto; ++n) G.push_back(local_unstable_manifold(ch, c, n, half));
    return G;
  };
  auto end = graphs(chain, n_max), prev = graphs(head, n_max - 1);
  ManifoldConvergence r;
  for (int n = 0; n < n_max; ++n) r.diffs.push_back(end[n + 1].sup_diff(end[n]));
  for (int n = 1; n < n_max; ++n) {
    double den = prev[n].sup_diff(prev[n - 1]);
    double q = den > 0 ? r.diffs[n] / den : 0.0;
    r.ratios.push_back(q);
    if (den > floor) r.rate = std::max(r.rate, q);
  }
  return r;
}

// Local maps along the true orbit x, f(x), ..., f^n(x) (n transitions).
// Random graph with |G(0)| <= height and slope <= `slope`, grown outward from 0.
inline PLGraph random_graph(std::mt19937_64& rng, double rho, double slope, double height, int half = 64) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PLGraph g = PLGraph::constant(rho, 0.0, half);
  g.values[half] = height * u(rng);
  for (int j = half + 1; j < g.nodes(); ++j) g.values[j] = g.values[j - 1] + slope * g.h() * u(rng);
  for (int j = half - 1; j >= 0; --j) g.values[j] = g.values[j + 1] + slope * g.h() * u(rng);
  return g;
}

// Largest sup-norm ratio |Gamma G1 - Gamma G2| / |G1 - G2| over random graph
// pairs and random transitions x -> f(x).
inline double sampled_graph_contraction(const ChartFamily& fam, const HyperbolicConstants& c, int pairs,
                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  for (int i = 0; i < pairs; ++i) {
    Vec2 x{u(rng), u(rng)};
    LocalMap lm = fam.local_map(x, fam.system().map(x));
    PLGraph g1 = random_graph(rng, c.rho, c.alpha, 0.1 * c.rho);
    PLGraph g2 = random_graph(rng, c.rho, c.alpha, 0.1 * c.rho);
    auto t1 = graph_transform(g1, lm, c).graph, t2 = graph_transform(g2, lm, c).graph;
    worst = std::max(worst, t1.sup_diff(t2) / g1.sup_diff(g2));
  }
  return worst;
}

// Local maps along the orbit x, f(x), ..., f^n(x).
inline std::vector<LocalMap> orbit_chain(const ChartFamily& fam, Vec2 x, int n) {
  std::vector<AdaptedChart> charts;
  for (int i = 0; i <= n; ++i) {
    charts.push_back(fam.chart_at(x));
    x = fam.system().map(x);
  }
  std::vector<LocalMap> out;
  for (int i = 0; i < n; ++i) out.push_back(fam.local_map(charts[i], charts[i + 1]));
  return out;
}

}  // namespace subaction
