#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "charts.hpp"
#include "io.hpp"
#include "laxoleinik.hpp"
#include "orbits.hpp"
#include "shadowing.hpp"
#include "systems.hpp"

namespace subaction {

struct CheckResult {
  int number = 0;  // 0 for supplementary property checks
  std::string name;
  std::string anchor;
  bool pass = false;
  double lhs = 0, rhs = 0;  // measured side and bound it is held to
  double seconds = 0;
  std::string detail;
  double slack() const { return rhs - lhs; }
};

namespace acceptance {

inline CheckResult make_result(int number, std::string name, std::string anchor) {
  CheckResult r;
  r.number = number;
  r.name = std::move(name);
  r.anchor = std::move(anchor);
  return r;
}

inline std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Runs shared between criteria, built on first use.
class Context {
 public:
  struct ShiftRun {
    std::string observable;
    LaxOleinikProblem prob;
    SolveReport rep;
    SubactionReport chk;
    double word_slack = 0;  // over every admissible completion of each shifted word
    double seconds = 0;
  };
  struct CatRun {
    int q = 0;
    LaxOleinikProblem prob;
    SolveReport rep;
    SubactionReport chk;
    double lip_allowed = 0;  // C + (C + Lip) h / d_min
    double seconds = 0;
  };

  const std::vector<ShiftRun>& shift_runs() {
    if (shift_.empty())
      for (std::string obs : {"edgecost:default", "edgecost:0.3,1,-0.2"}) shift_.push_back(run_shift(obs));
    return shift_;
  }

  const CatRun& cat_run(int q) {
    for (const auto& r : cat_)
      if (r.q == q) return r;
    cat_.push_back(run_cat(q));
    return cat_.back();
  }

  const HyperbolicConstants& cat_constants() {
    if (!cat_c_) cat_c_ = system_constants(cat_sys_, HyperbolicConstants::draft());
    return *cat_c_;
  }

  std::size_t offgrid_samples = 100000;

 private:
  ShiftRun run_shift(const std::string& obs) {
    auto t0 = std::chrono::steady_clock::now();
    auto sys = DynamicalSystem::golden_mean_shift(8);
    ShiftRun r;
    r.observable = obs;
    r.prob.grid = Grid::words(sys);
    r.prob.phi = make_observable(obs, sys);
    r.prob.phibar = min_mean_cycle(sys, r.prob.phi).value;
    r.prob.C = system_constants(sys, HyperbolicConstants::draft()).K_lambda * r.prob.phi.lip;
    r.rep = solve_calibrated(r.prob);
    r.chk = subaction_check(r.rep.u, r.prob);
    const auto& g = *r.prob.grid;
    r.word_slack = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < g.size(); ++x) {
      Word w = std::get<Word>(g.point(x));
      for (std::uint32_t last : {0u, 1u}) {
        Word y{(w.bits >> 1) | (last << (w.depth - 1)), w.depth};
        if (!y.admissible()) continue;
        double s = r.prob.phi(g.point(x)) - r.prob.phibar - r.rep.u.values[g.index_of(y)] + r.rep.u.values[x];
        r.word_slack = std::min(r.word_slack, s);
      }
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  CatRun run_cat(int q) {
    auto t0 = std::chrono::steady_clock::now();
    CatRun r;
    r.q = q;
    r.prob.grid = Grid::lattice(cat_sys_, q);
    r.prob.phi = make_observable("coscos", cat_sys_);
    r.prob.phibar = birkhoff_min_periodic(cat_sys_, r.prob.phi, 8).value;
    r.prob.C = cat_constants().K_lambda * r.prob.phi.lip;
    r.rep = solve_calibrated(r.prob);
    SubactionOptions so;
    so.offgrid_samples = offgrid_samples;
    so.constants = &cat_constants();
    r.chk = subaction_check(r.rep.u, r.prob, so);
    const auto& g = *r.prob.grid;
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t y = 1; y < g.size(); ++y) dmin = std::min(dmin, g.distance(0, y));
    r.lip_allowed = r.prob.C + (r.prob.C + r.prob.phi.lip) * g.mesh() / dmin;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
  }

  DynamicalSystem cat_sys_ = DynamicalSystem::cat_map();
  std::optional<HyperbolicConstants> cat_c_;
  std::vector<ShiftRun> shift_;
  std::vector<CatRun> cat_;
};

inline CheckResult calibration(Context& ctx) {
  auto r = make_result(1, "calibration", "calibrated fixed point T[u] = u");
  const auto& runs = ctx.shift_runs();
  bool ok = true;
  double worst = 0, secs = 0;
  std::string d;
  for (const auto& s : runs) {
    worst = std::max(worst, s.rep.residual);
    secs = std::max(secs, s.seconds);
    ok = ok && s.rep.residual <= 1e-10 && s.seconds < 5.0;
    d += s.observable + " phibar " + fmt("%.6g", s.prob.phibar) + " residual " + fmt("%.3g", s.rep.residual) + " in " +
         fmt("%.2f", s.seconds) + " s; ";
  }
  r.pass = ok;
  r.lhs = worst;
  r.rhs = 1e-10;
  r.detail = "gms:8 " + d + "limit 5 s";
  return r;
}

inline CheckResult subaction_inequality(Context& ctx) {
  auto r = make_result(2, "subaction_inequality", "subaction inequality phi - phibar >= u o f - u");
  bool ok = true;
  double word = std::numeric_limits<double>::infinity();
  for (const auto& s : ctx.shift_runs()) word = std::min(word, s.word_slack);
  ok = word >= -1e-12;
  const auto& a = ctx.cat_run(256);
  const auto& b = ctx.cat_run(512);
  ok = ok && a.chk.grid_slack >= a.chk.threshold;
  double ratio = a.chk.offgrid_slack / b.chk.offgrid_slack;
  ok = ok && a.chk.offgrid_slack < 0 && ratio >= 1.8;
  double secs = a.seconds + b.seconds;
  ok = ok && secs < 60.0;
  r.pass = ok;
  r.lhs = -a.chk.grid_slack;
  r.rhs = -a.chk.threshold;
  r.detail = "words min slack " + fmt("%.3g", word) + " (>= -1e-12); cat coscos q=256 grid slack " +
             fmt("%.4g", a.chk.grid_slack) + " vs -(C+Lip)h " + fmt("%.4g", a.chk.threshold) +
             "; off-grid defect q=256 " + fmt("%.4g", a.chk.offgrid_slack) + ", q=512 " +
             fmt("%.4g", b.chk.offgrid_slack) + ", ratio " + fmt("%.3f", ratio) + " (>= 1.8); off-grid slack vs -(C+Lip)h: " +
             (a.chk.offgrid_pass ? "within" : "beyond") + " (informational); " + fmt("%.1f", secs) + " s (< 60 s)";
  return r;
}

inline CheckResult lipschitz(Context& ctx) {
  auto r = make_result(3, "lipschitz", "Lipschitz bound Lip(u) <= C = K_Lambda Lip(phi)");
  bool ok = true;
  double worst_shift = 0;
  for (const auto& s : ctx.shift_runs()) {
    worst_shift = std::max(worst_shift, s.rep.lipschitz / s.prob.C);
    ok = ok && s.rep.lipschitz <= s.prob.C + 1e-9;
  }
  const auto& a = ctx.cat_run(256);
  ok = ok && a.rep.lipschitz <= a.lip_allowed + 1e-9;
  r.pass = ok;
  r.lhs = a.rep.lipschitz;
  r.rhs = a.lip_allowed;
  r.detail = "cat q=256 sampled Lip " + fmt("%.6g", a.rep.lipschitz) + " = " + fmt("%.6f", a.rep.lipschitz / a.prob.C) +
             " C, K_Lambda Lip(phi) " + fmt("%.6g", a.chk.K_lip_phi) + "; shift max Lip/C " + fmt("%.6f", worst_shift) +
             " (strict, tol 1e-9)";
  return r;
}

inline CheckResult shadowing(Context& ctx) {
  auto r = make_result(4, "shadowing", "shadowing exponential locality, sum and max bounds");
  auto t0 = std::chrono::steady_clock::now();
  const auto& sys = DynamicalSystem::cat_map();
  ChartFamily fam;
  auto c = system_constants(sys, HyperbolicConstants::draft(), &fam);
  (void)ctx;
  int pass = 0;
  double oracle = 0, worst_sum = 0;
  for (int s = 0; s < 100; ++s) {
    std::mt19937_64 rng(1000 + s);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec2 x0{U(rng), U(rng)};
    auto po = make_pseudo_orbit(sys, x0, 200, 1e-4, s);
    auto res = shadow(po, fam, c);
    auto ex = shadow_exact_linear(po, sys);
    double d = 0;
    for (std::size_t i = 0; i < res.y.size(); ++i) d = std::max(d, sys.distance(res.y[i], ex.y[i]));
    oracle = std::max(oracle, d);
    worst_sum = std::max(worst_sum, res.bounds[1].lhs / res.bounds[1].rhs);
    pass += res.all_pass() && d <= 1e-8;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.pass = pass == 100 && r.seconds < 30.0;
  r.lhs = oracle;
  r.rhs = 1e-8;
  r.detail = std::to_string(pass) + "/100 pseudo-orbits (n=200, noise 1e-4) pass all three bounds; K_AS " +
             fmt("%.4g", c.K_as) + ", lambda_AS " + fmt("%.4g", c.lambda_as) + "; worst sum ratio " +
             fmt("%.4f", worst_sum) + " of bound; max oracle distance " + fmt("%.3g", oracle) + "; limit 30 s";
  return r;
}

inline CheckResult periodic_shadowing(Context&) {
  auto r = make_result(5, "periodic_shadowing", "periodic shadowing sum bound with K_APS");
  const auto& sys = DynamicalSystem::cat_map();
  ChartFamily fam;
  auto c = system_constants(sys, HyperbolicConstants::draft(), &fam);
  std::vector<PeriodicOrbit> orbits;
  for (auto& o : periodic_points(sys, 12))
    if (o.period == 12) orbits.push_back(std::move(o));
  int pass = 0;
  double resid = 0, oracle = 0, ratio = 0;
  for (int k = 0; k < 20; ++k) {
    const auto& o = orbits[(k * orbits.size()) / 20];
    std::vector<Vec2> pts;
    for (const auto& p : o.points) pts.push_back(std::get<Vec2>(p));
    auto po = perturb_periodic_orbit(sys, pts, 1e-5, 500 + k);
    auto res = shadow_periodic(po, fam, c);
    auto ex = shadow_exact_periodic_linear(po, sys);
    double d = 0;
    for (std::size_t i = 0; i < res.y.size(); ++i) d = std::max(d, sys.distance(res.y[i], ex.y[i]));
    resid = std::max(resid, res.period_residual);
    oracle = std::max(oracle, d);
    ratio = std::max(ratio, res.bounds[0].lhs / res.bounds[0].rhs);
    pass += res.period_residual <= 1e-10 && res.bounds[0].pass && d <= 1e-8;
  }
  r.pass = pass == 20;
  r.lhs = resid;
  r.rhs = 1e-10;
  r.detail = std::to_string(pass) + "/20 period-12 pseudo-orbits (noise 1e-5): max f^n(p) - p " + fmt("%.3g", resid) +
             ", worst sum ratio " + fmt("%.4f", ratio) + " of K_APS bound (K_APS " + fmt("%.4g", c.K_aps) +
             "), max oracle distance " + fmt("%.3g", oracle);
  return r;
}

inline CheckResult graph_transform_check(Context&) {
  auto r = make_result(6, "graph_transform", "graph transform contraction sigma_s + 2 eta");
  auto sys = DynamicalSystem::perturbed_cat_map(1e-3, 7);
  auto b = build_charts(sys, HyperbolicConstants::draft());
  const auto& c = b.constants;
  double worst = sampled_graph_contraction(b.family, c, 100, 11);
  r.lhs = worst;
  r.rhs = c.sigma_s + 2 * c.eta + 1e-3;
  r.pass = worst <= r.rhs;
  r.detail = "pcat:0.001:7, 100 random graph pairs: max ratio " + fmt("%.6f", worst) + " vs sigma_s + 2 eta " +
             fmt("%.6f", c.sigma_s + 2 * c.eta) + " + 1e-3";
  return r;
}

inline CheckResult unstable_manifold(Context&) {
  auto r = make_result(7, "unstable_manifold", "local unstable manifold as limit of graph transforms");
  auto lin = DynamicalSystem::cat_map();
  auto cl = HyperbolicConstants::draft();
  ChartFamily fl(lin, cl);
  double null = local_unstable_manifold(orbit_chain(fl, {0.31, 0.77}, 30), cl, 30).sup();
  auto sys = DynamicalSystem::perturbed_cat_map(1e-3, 7);
  auto b = build_charts(sys, HyperbolicConstants::draft());
  const auto& c = b.constants;
  auto chain = orbit_chain(b.family, {0.31, 0.77}, 61);
  auto conv = manifold_convergence(chain, c, 60);
  double last = conv.diffs[59];
  double bound = c.sigma_s + 2 * c.eta + 1e-3;
  r.pass = null <= 1e-12 && conv.rate <= bound && last <= 1e-9;
  r.lhs = conv.rate;
  r.rhs = bound;
  r.detail = "linear |G| " + fmt("%.3g", null) + " (<= 1e-12); pcat measured rate " + fmt("%.6f", conv.rate) +
             " vs sigma_s + 2 eta + 1e-3 " + fmt("%.6f", bound) + "; |G^60 - G^59| " + fmt("%.3g", last) + " (<= 1e-9)";
  return r;
}

inline CheckResult livsic(Context& ctx) {
  auto r = make_result(8, "livsic", "positive Livsic lower bound -Lip(phi) delta_AS");
  const auto& c = ctx.cat_constants();
  auto sys = DynamicalSystem::cat_map();
  bool ok = true;
  double worst = std::numeric_limits<double>::infinity(), bound = 0;
  for (std::string obs : {"coscos", "cos1"}) {
    LaxOleinikProblem p;
    p.grid = Grid::lattice(sys, 64);
    p.phi = make_observable(obs, sys);
    p.phibar = birkhoff_min_periodic(sys, p.phi, 8).value;
    p.C = c.K_lambda * p.phi.lip;
    bound = -p.phi.lip * c.delta_as;
    auto rep = livsic_lower_bound(p, 50, bound);
    ok = ok && rep.bound_ok;
    worst = std::min(worst, rep.inf);
  }
  // Negative control: C = 0 with min phi < phibar.
  LaxOleinikProblem n;
  n.grid = Grid::lattice(sys, 64);
  n.phi = make_observable("cos1", sys);
  n.phibar = birkhoff_min_periodic(sys, n.phi, 8).value;
  n.C = 0;
  double mn = std::numeric_limits<double>::infinity();
  for (const auto& x : n.grid->points()) mn = std::min(mn, n.phi(x));
  auto neg = livsic_lower_bound(n, 50, bound);
  bool control = neg.criterion_fails && std::fabs(neg.tail_slope - (mn - n.phibar)) <= 1e-12;
  r.pass = ok && control;
  r.lhs = -worst;
  r.rhs = -bound;
  r.detail = "cat q=64, n<=50, C = K_Lambda Lip: min I_n " + fmt("%.4g", worst) + " vs " + fmt("%.4g", bound) +
             "; control cos1 C=0 slope " + fmt("%.6f", neg.tail_slope) + " vs min phi - phibar " +
             fmt("%.6f", mn - n.phibar) + (neg.criterion_fails ? ", flagged" : ", NOT flagged");
  return r;
}

namespace detail {
inline void paths(const std::vector<std::vector<double>>& E, std::size_t x, int left, double acc, double& best) {
  const auto& row = E[x];
  if (left == 1) {
    for (double e : row) best = std::min(best, acc + e);
    return;
  }
  for (std::size_t y = 0; y < row.size(); ++y) paths(E, y, left - 1, acc + row[y], best);
}
}  // namespace detail

inline CheckResult brute_force(Context&) {
  auto r = make_result(9, "brute_force", "value iteration and min mean cycle against exhaustive search");
  int cases = 0, match = 0;
  double table_err = 0;
  auto sys = DynamicalSystem::cat_map();
  for (int q = 2; q <= 8; ++q) {
    LaxOleinikProblem p;
    p.grid = Grid::lattice(sys, q);
    p.phi = make_observable("cos1", sys);
    p.phibar = -0.2;
    p.C = 1.3;
    LaxOleinikOperator T(p);
    const auto& g = *p.grid;
    const std::size_t N = g.size();
    // Search runs over the operator's own table; the table itself is held to the geometric cost.
    std::vector<std::vector<double>> E(N, std::vector<double>(N));
    for (std::size_t x = 0; x < N; ++x) {
      const Vec2& v = std::get<Vec2>(g.point(x));
      long i = std::lround(v.x * q), j = std::lround(v.y * q);
      Vec2 img{double((2 * i + j) % q) / q, double((i + j) % q) / q};
      for (std::size_t y = 0; y < N; ++y) {
        E[x][y] = T.E(x, y);
        double geo = p.phi(g.point(x)) - p.phibar + p.C * sys.distance(img, g.point(y));
        table_err = std::max(table_err, std::fabs(E[x][y] - geo));
      }
    }
    std::vector<double> t(N, 0.0);
    for (int n = 1; n <= 4; ++n) {
      t = T.apply(t);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t x = 0; x < N; ++x) detail::paths(E, x, n, 0.0, best);
      ++cases;
      match += *std::min_element(t.begin(), t.end()) == best;
    }
  }
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> U(-2, 2);
  int mmc = 0;
  for (int k = 0; k < 200; ++k) {
    std::vector<Edge> e{{0, 0, U(rng)}, {0, 1, U(rng)}, {1, 0, U(rng)}};
    mmc += karp_min_mean_cycle(2, e).mean == exhaustive_min_mean_cycle(2, e).mean;
  }
  r.pass = match == cases && mmc == 200 && table_err <= 1e-14;
  r.lhs = double(cases - match + 200 - mmc);
  r.rhs = 0;
  r.detail = "cat q=2..8, n=1..4: " + std::to_string(match) + "/" + std::to_string(cases) +
             " exact matches (cost table vs geometric cost " + fmt("%.2g", table_err) +
             ", <= 1e-14); golden-mean min mean cycle: " + std::to_string(mmc) + "/200 exact matches";
  return r;
}

inline CheckResult census(Context&) {
  auto r = make_result(10, "census", "periodic point census |det(A^n - I)|");
  auto sys = DynamicalSystem::cat_map();
  int ok = 0;
  std::string counts;
  for (int n = 1; n <= 12; ++n) {
    std::int64_t pts = 0;
    bool periodic = true;
    for (const auto& o : periodic_points(sys, n)) {
      pts += std::int64_t(o.points.size());
      periodic = periodic && verify_periodic(o, n);
    }
    auto An = cat_power(n);
    std::int64_t det = std::llabs((An[0] - 1) * (An[3] - 1) - An[1] * An[2]);
    ok += pts == det && periodic;
    counts += (n > 1 ? "," : "") + std::to_string(pts);
  }
  r.pass = ok == 12;
  r.lhs = 12 - ok;
  r.rhs = 0;
  r.detail = "n=1..12 counts " + counts + "; " + std::to_string(ok) + "/12 match";
  return r;
}

inline CheckResult operator_laws(Context&) {
  auto r = make_result(0, "operator_laws", "Lax-Oleinik monotonicity, additivity, inf commutation");
  std::vector<LaxOleinikProblem> probs(3);
  probs[0].grid = Grid::lattice(DynamicalSystem::cat_map(), 16);
  probs[0].phi = make_observable("coscos", probs[0].grid->system());
  probs[0].C = 5.0;
  probs[1].grid = Grid::lattice(DynamicalSystem::perturbed_cat_map(1e-3, 7), 12);
  probs[1].phi = make_observable("cos1", probs[1].grid->system());
  probs[1].phibar = -0.5;
  probs[1].C = 1.0;
  probs[2].grid = Grid::words(DynamicalSystem::golden_mean_shift(7));
  probs[2].phi = make_observable("edgecost:default", probs[2].grid->system());
  probs[2].C = 2.0;
  int pass = 0, total = 0;
  for (const auto& p : probs) {
    auto rep = check_operator_laws(p, 200, 9);
    total += rep.trials;
    pass += std::min({rep.monotone_pass, rep.additive_pass, rep.inf_pass, rep.contraction_pass});
  }
  r.pass = pass == total;
  r.lhs = total - pass;
  r.rhs = 0;
  r.detail = std::to_string(pass) + "/" + std::to_string(total) + " seeded trials (cat, pcat, gms:7)";
  return r;
}

}  // namespace acceptance

struct AcceptanceCheck {
  int number;
  std::string name;
  std::function<CheckResult(acceptance::Context&)> run;
};

inline std::vector<AcceptanceCheck> acceptance_checks() {
  using namespace acceptance;
  return {{1, "calibration", calibration},
          {2, "subaction_inequality", subaction_inequality},
          {3, "lipschitz", lipschitz},
          {4, "shadowing", shadowing},
          {5, "periodic_shadowing", periodic_shadowing},
          {6, "graph_transform", graph_transform_check},
          {7, "unstable_manifold", unstable_manifold},
          {8, "livsic", livsic},
          {9, "brute_force", brute_force},
          {10, "census", census},
          {0, "operator_laws", operator_laws}};
}

// `only` holds check names or criterion numbers; empty selects everything.
inline bool selected(const AcceptanceCheck& c, const std::vector<std::string>& only) {
  if (only.empty()) return true;
  for (const auto& s : only)
    if (s == c.name || (c.number > 0 && s == std::to_string(c.number))) return true;
  return false;
}

inline std::string format_check(const CheckResult& r) {
  char head[96];
  std::snprintf(head, sizeof head, "%s %2s %-21s %8.2fs  ", r.pass ? "PASS" : "FAIL",
                r.number ? std::to_string(r.number).c_str() : "-", r.name.c_str(), r.seconds);
  return head + r.detail;
}

inline std::vector<CheckResult> run_acceptance(const std::vector<std::string>& only, std::ostream* progress = nullptr) {
  auto checks = acceptance_checks();
  for (const auto& s : only) {
    bool known = false;
    for (const auto& c : checks) known = known || selected(c, {s});
    if (!known) throw ConfigError("unknown check: " + s);
  }
  acceptance::Context ctx;
  std::vector<CheckResult> out;
  for (const auto& c : checks) {
    if (!selected(c, only)) continue;
    auto t0 = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = c.run(ctx);
    } catch (const std::exception& e) {
      r.number = c.number;
      r.name = c.name;
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (r.seconds == 0) r.seconds = secs;
    if (progress) *progress << format_check(r) << std::endl;
    out.push_back(std::move(r));
  }
  return out;
}

inline json acceptance_json(const std::vector<CheckResult>& rs) {
  json j = report_header("verify");
  json a = json::array();
  bool all = true;
  for (const auto& r : rs) {
    all = all && r.pass;
    a.push_back({{"criterion", r.number},
                 {"name", r.name},
                 {"anchor", r.anchor},
                 {"pass", r.pass},
                 {"lhs", r.lhs},
                 {"rhs", r.rhs},
                 {"slack", r.slack()},
                 {"runtime_s", r.seconds},
                 {"detail", r.detail}});
  }
  j["checks"] = a;
  j["all_pass"] = all;
  return j;
}

}  // namespace subaction
