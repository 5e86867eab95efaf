// Command-line front end: solve, shadow, periodic, ebar, manifold, verify.
// Exit codes: 0 success, 1 configuration error, 2 divergence, bound violation or failed check.
#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "subaction/acceptance.hpp"
#include "subaction/charts.hpp"
#include "subaction/io.hpp"
#include "subaction/laxoleinik.hpp"
#include "subaction/orbits.hpp"
#include "subaction/shadowing.hpp"
#include "subaction/systems.hpp"

using namespace subaction;

namespace {

// Failure that maps to exit code 2.
struct RunFailure : std::runtime_error {
  std::string kind;
  RunFailure(std::string k, const std::string& what) : std::runtime_error(what), kind(std::move(k)) {}
};

enum class KeyType { string, integer, number, boolean, number_or_string, string_list, point };

struct KeySpec {
  KeyType type;
  std::string help;
};

// Every config key; command-line flags carry the same names.
const std::map<std::string, KeySpec>& schema() {
  static const std::map<std::string, KeySpec> s{
      {"command", {KeyType::string, "subcommand (must match the one invoked)"}},
      {"system", {KeyType::string, "system id: cat, pcat:EPS:SEED, gms:DEPTH"}},
      {"observable", {KeyType::string, "observable id: zero, const:C, coscos, cos1, dist2fix, antifix, edgecost:..."}},
      {"grid", {KeyType::integer, "lattice size q on the torus, word depth on the shift"}},
      {"C", {KeyType::number_or_string, "cost constant: a number or auto (K_Lambda Lip(phi))"}},
      {"phibar", {KeyType::number_or_string, "ergodic minimum: a number, auto, karp, grid, periodic:P or sweep:N:SAMPLES"}},
      {"tol", {KeyType::number, "residual tolerance"}},
      {"max_iter", {KeyType::integer, "iteration cap"}},
      {"seed", {KeyType::integer, "random seed"}},
      {"out", {KeyType::string, "CSV output path"}},
      {"json", {KeyType::string, "JSON report path"}},
      {"threads", {KeyType::integer, "worker cap (0 = hardware)"}},
      {"gnuplot", {KeyType::string, "gnuplot script path (plots the --out CSV)"}},
      {"only", {KeyType::string_list, "verify: check names or criterion numbers"}},
      {"len", {KeyType::integer, "pseudo-orbit length, period bound or manifold depth"}},
      {"noise", {KeyType::number, "pseudo-orbit step noise"}},
      {"periodic", {KeyType::boolean, "shadow a periodic pseudo-orbit"}},
      {"points", {KeyType::string, "shadow: CSV of pseudo-orbit points with header x,y"}},
      {"x0", {KeyType::point, "base point x,y"}},
      {"samples", {KeyType::integer, "random samples for sweeps and off-grid checks"}},
      {"sigma_u", {KeyType::number, "chart expansion constant"}},
      {"sigma_s", {KeyType::number, "chart contraction constant"}},
      {"eta", {KeyType::number, "chart nonlinearity bound"}},
      {"rho", {KeyType::number, "chart radius"}},
  };
  return s;
}

double parse_number(const std::string& key, const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ConfigError(key + " expects a number, got '" + s + "'");
  return v;
}

long long parse_integer(const std::string& key, const std::string& s) {
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw ConfigError(key + " expects an integer, got '" + s + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

json point_from_string(const std::string& key, const std::string& s) {
  auto parts = split_list(s);
  if (parts.size() != 2) throw ConfigError(key + " expects x,y");
  return json::array({parse_number(key, parts[0]), parse_number(key, parts[1])});
}

void check_type(const std::string& key, const json& v) {
  auto it = schema().find(key);
  if (it == schema().end()) throw ConfigError("unknown config key: " + key);
  bool ok = false;
  switch (it->second.type) {
    case KeyType::string:
      ok = v.is_string();
      break;
    case KeyType::integer:
      ok = v.is_number_integer();
      break;
    case KeyType::number:
      ok = v.is_number();
      break;
    case KeyType::boolean:
      ok = v.is_boolean();
      break;
    case KeyType::number_or_string:
      ok = v.is_number() || v.is_string();
      break;
    case KeyType::string_list:
      ok = v.is_string() || (v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); }));
      break;
    case KeyType::point:
      ok = v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number();
      break;
  }
  if (!ok) throw ConfigError("config key " + key + " has the wrong type");
}

json from_flag(const std::string& key, const std::string& s) {
  switch (schema().at(key).type) {
    case KeyType::string:
      return s;
    case KeyType::integer:
      return parse_integer(key, s);
    case KeyType::number:
      return parse_number(key, s);
    case KeyType::boolean:
      return true;
    case KeyType::number_or_string: {
      char* end = nullptr;
      double v = std::strtod(s.c_str(), &end);
      if (!s.empty() && *end == '\0') return v;
      return s;
    }
    case KeyType::string_list:
      return split_list(s);
    case KeyType::point:
      return point_from_string(key, s);
  }
  return s;
}

// Validated configuration: defaults, then the config file, then explicit flags.
class RunConfig {
 public:
  explicit RunConfig(json j) : j_(std::move(j)) {}

  bool has(const std::string& k) const { return j_.contains(k); }
  std::string str(const std::string& k, const std::string& def = "") const {
    return has(k) ? j_.at(k).get<std::string>() : def;
  }
  long long integer(const std::string& k, long long def) const { return has(k) ? j_.at(k).get<long long>() : def; }
  double number(const std::string& k, double def) const { return has(k) ? j_.at(k).get<double>() : def; }
  bool flag(const std::string& k) const { return has(k) && j_.at(k).get<bool>(); }
  const json& raw(const std::string& k) const { return j_.at(k); }
  std::vector<std::string> list(const std::string& k) const {
    if (!has(k)) return {};
    if (j_.at(k).is_string()) return split_list(j_.at(k).get<std::string>());
    return j_.at(k).get<std::vector<std::string>>();
  }
  Vec2 point(const std::string& k, Vec2 def) const {
    if (!has(k)) return def;
    return {j_.at(k)[0].get<double>(), j_.at(k)[1].get<double>()};
  }
  // Config echo for reports; output paths are omitted so reports do not depend on where they were written.
  json echo() const {
    json e = json::object();
    for (const auto& [k, v] : j_.items())
      if (k != "out" && k != "json" && k != "gnuplot" && k != "threads") e[k] = v;
    return e;
  }

 private:
  json j_;
};

json load_config_file(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [k, v] : j.items()) check_type(k, v);
  return j;
}

DynamicalSystem system_of(const RunConfig& cfg) {
  auto sys = DynamicalSystem::parse(cfg.str("system", "cat"));
  if (!sys.is_torus() && cfg.has("grid")) {
    long long depth = cfg.integer("grid", sys.depth());
    if (depth != sys.depth()) sys = DynamicalSystem::golden_mean_shift(int(depth));
  }
  return sys;
}

Observable observable_of(const RunConfig& cfg, const DynamicalSystem& sys) {
  return make_observable(cfg.str("observable", sys.is_torus() ? "coscos" : "edgecost:default"), sys);
}

HyperbolicConstants draft_of(const RunConfig& cfg) {
  auto d = HyperbolicConstants::draft();
  return HyperbolicConstants::draft(cfg.number("sigma_u", d.sigma_u), cfg.number("sigma_s", d.sigma_s),
                                    cfg.number("eta", d.eta), cfg.number("rho", d.rho));
}

json constants_json(const HyperbolicConstants& c) {
  return {{"sigma_u", c.sigma_u}, {"sigma_s", c.sigma_s}, {"eta", c.eta},     {"rho", c.rho},
          {"eps_as", c.eps_as},   {"K_as", c.K_as},       {"lambda_as", c.lambda_as}, {"K_aps", c.K_aps},
          {"N_as", c.N_as},       {"delta_as", c.delta_as}, {"K_lambda", c.K_lambda}};
}

std::shared_ptr<Grid> grid_of(const RunConfig& cfg, const DynamicalSystem& sys) {
  return sys.is_torus() ? Grid::lattice(sys, int(cfg.integer("grid", 64))) : Grid::words(sys);
}

// `prob` supplies the grid and C for the grid policy.
EbarEstimate estimate_phibar(const RunConfig& cfg, const DynamicalSystem& sys, const Observable& phi,
                             const LaxOleinikProblem& prob) {
  std::string policy = "auto";
  if (cfg.has("phibar")) {
    const json& v = cfg.raw("phibar");
    if (v.is_number()) {
      EbarEstimate e;
      e.value = v.get<double>();
      e.method = "given";
      return e;
    }
    policy = v.get<std::string>();
  }
  if (policy == "auto") policy = !sys.is_torus() && phi.locally_constant ? "karp" : "periodic:8";
  if (policy == "karp") return min_mean_cycle(sys, phi);
  if (policy == "grid") return grid_min_cycle_mean(prob);
  if (policy.rfind("periodic:", 0) == 0)
    return birkhoff_min_periodic(sys, phi, int(parse_integer("phibar", policy.substr(9))));
  if (policy.rfind("sweep:", 0) == 0) {
    auto parts = DynamicalSystem::split(policy.substr(6), ':');
    if (parts.size() != 2) throw ConfigError("phibar sweep policy is sweep:N:SAMPLES");
    return sweep_min(sys, phi, int(parse_integer("phibar", parts[0])), std::size_t(parse_integer("phibar", parts[1])),
                     std::uint64_t(cfg.integer("seed", 1)));
  }
  throw ConfigError("unknown phibar policy: " + policy);
}

struct Outputs {
  std::string csv, script_kind, title;
  json report;
};

void write_outputs(const RunConfig& cfg, const Outputs& o) {
  if (cfg.has("gnuplot") && !cfg.has("out")) throw ConfigError("gnuplot needs an out CSV path to plot");
  if (cfg.has("out")) write_text(cfg.str("out"), o.csv);
  if (cfg.has("gnuplot")) write_text(cfg.str("gnuplot"), gnuplot_script(o.script_kind, cfg.str("out"), o.title));
  if (cfg.has("json")) write_text(cfg.str("json"), o.report.dump(2) + "\n");
}

double C_of(const RunConfig& cfg, const HyperbolicConstants& c, const Observable& phi) {
  double C = c.C_for(phi.lip);
  if (cfg.has("C")) {
    const json& v = cfg.raw("C");
    if (v.is_number())
      C = v.get<double>();
    else if (v.get<std::string>() != "auto")
      throw ConfigError("C must be a number or auto");
  }
  if (!(C >= 0)) throw ConfigError("C must be nonnegative");
  return C;
}

int cmd_solve(const RunConfig& cfg) {
  auto sys = system_of(cfg);
  auto phi = observable_of(cfg, sys);
  auto c = system_constants(sys, draft_of(cfg));
  LaxOleinikProblem prob;
  prob.grid = grid_of(cfg, sys);
  prob.phi = phi;
  prob.C = C_of(cfg, c, phi);
  auto ebar = estimate_phibar(cfg, sys, phi, prob);
  prob.phibar = ebar.value;
  prob.tol = cfg.number("tol", 1e-10);
  prob.max_iter = int(cfg.integer("max_iter", 100000));

  Outputs o;
  o.script_kind = sys.is_torus() ? "solve-torus" : "solve-shift";
  o.title = "subaction u: " + sys.id() + ", " + phi.name;
  o.report = report_header("solve");
  o.report["config"] = cfg.echo();
  o.report["system"] = sys.id();
  o.report["observable"] = phi.name;
  o.report["grid_points"] = prob.grid->size();
  o.report["mesh"] = prob.grid->mesh();
  o.report["constants"] = constants_json(c);
  o.report["lip_phi"] = phi.lip;
  o.report["C"] = prob.C;
  o.report["phibar"] = ebar_json(ebar);

  SolveReport rep;
  try {
    rep = solve_calibrated(prob);
  } catch (const DivergenceError& e) {
    o.report["converged"] = false;
    o.report["divergence"] = {{"message", e.what()}, {"slope", e.slope}, {"witness", witness_json(*prob.grid, e.witness)}};
    o.report["pass"] = false;
    if (cfg.has("json")) write_text(cfg.str("json"), o.report.dump(2) + "\n");
    throw RunFailure("divergence", std::string(e.what()).substr(12));
  }
  SubactionOptions so;
  so.constants = &c;
  if (sys.is_torus()) so.offgrid_samples = std::size_t(cfg.integer("samples", 10000));
  so.seed = std::uint64_t(cfg.integer("seed", 23));
  auto chk = subaction_check(rep.u, prob, so);
  bool pass = rep.converged;

  o.csv = grid_function_csv(*prob.grid, rep.u);
  o.report["converged"] = rep.converged;
  o.report["residual"] = rep.residual;
  o.report["resolution"] = rep.resolution;
  o.report["phase1_iterations"] = rep.phase1_iterations;
  o.report["phase2_sweeps"] = rep.phase2_sweeps;
  o.report["lipschitz"] = rep.lipschitz;
  o.report["subaction"] = {{"grid_slack", chk.grid_slack},
                           {"offgrid_slack", chk.offgrid_slack},
                           {"offgrid_samples", chk.offgrid_samples},
                           {"threshold", chk.threshold},
                           {"grid_pass", chk.grid_pass},
                           {"offgrid_pass", chk.offgrid_pass},
                           {"lipschitz_pass", chk.lipschitz_pass}};
  o.report["pass"] = pass;
  write_outputs(cfg, o);
  std::cout << "solve " << sys.id() << " " << phi.name << ": phibar " << num(prob.phibar) << ", C " << num(prob.C)
            << ", residual " << num(rep.residual) << ", grid slack " << num(chk.grid_slack) << ", Lip(u) "
            << num(rep.lipschitz) << "\n";
  if (!pass) throw RunFailure("residual", "residual " + num(rep.residual) + " above tol " + num(prob.tol) + " + resolution " + num(rep.resolution));
  return 0;
}

std::vector<Vec2> read_points_csv(const std::string& path) {
  std::stringstream ss(read_text(path));
  std::string line;
  if (!std::getline(ss, line) || line.rfind("x,y", 0) != 0) throw ConfigError("points CSV needs a header starting x,y");
  std::vector<Vec2> pts;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    auto cells = split_list(line);
    if (cells.size() < 2) throw ConfigError("points CSV row needs x,y: " + line);
    pts.push_back({parse_number("points", cells[0]), parse_number("points", cells[1])});
  }
  return pts;
}

int cmd_shadow(const RunConfig& cfg) {
  auto sys = system_of(cfg);
  if (!sys.is_torus()) throw ConfigError("shadow needs a torus system");
  ChartFamily fam;
  auto c = system_constants(sys, draft_of(cfg), &fam);
  const bool periodic = cfg.flag("periodic");
  const int len = int(cfg.integer("len", periodic ? 12 : 200));
  const double noise = cfg.number("noise", periodic ? 1e-5 : 1e-4);
  const auto seed = std::uint64_t(cfg.integer("seed", 1));
  if (noise < 0) throw ConfigError("noise must be nonnegative");

  PseudoOrbit po;
  ShadowOptions opt;
  if (cfg.has("points")) {
    po = pseudo_orbit_from_points(sys, read_points_csv(cfg.str("points")), periodic);
  } else if (periodic) {
    // A period-len orbit of the linear map, chosen by seed, then perturbed.
    std::vector<PeriodicOrbit> orbits;
    for (auto& o : periodic_points(DynamicalSystem::cat_map(), len))
      if (o.period == len) orbits.push_back(std::move(o));
    if (orbits.empty()) throw ConfigError("no orbit of minimal period " + std::to_string(len));
    std::mt19937_64 rng(seed);
    const auto& o = orbits[std::uniform_int_distribution<std::size_t>(0, orbits.size() - 1)(rng)];
    std::vector<Vec2> pts;
    for (const auto& p : o.points) pts.push_back(std::get<Vec2>(p));
    po = perturb_periodic_orbit(sys, pts, noise, seed);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec2 x0 = cfg.point("x0", Vec2{U(rng), U(rng)});
    po = make_pseudo_orbit(sys, x0, len, noise, seed);
  }
  if (po.periodic) {
    opt.s_start = std::max(1, 24 / po.n());
    opt.s_max = std::max(12, 64 / po.n());
  }
  auto r = po.periodic ? shadow_periodic(po, fam, c, opt) : shadow(po, fam, c, opt);
  const double tol = cfg.number("tol", 1e-10);
  bool pass = r.all_pass() && (!po.periodic || r.period_residual <= tol);
  double max_dist = *std::max_element(r.dist.begin(), r.dist.end());

  Outputs o;
  o.script_kind = "shadow";
  o.title = "shadowing distances: " + sys.id();
  o.csv = shadow_csv(po, r);
  o.report = report_header("shadow");
  o.report["config"] = cfg.echo();
  o.report["system"] = sys.id();
  o.report["periodic"] = po.periodic;
  o.report["n"] = po.n();
  o.report["constants"] = constants_json(c);
  o.report["sum_delta"] = po.sum_delta();
  o.report["max_delta"] = po.max_delta();
  o.report["max_dist"] = max_dist;
  if (po.periodic) {
    o.report["period_residual"] = r.period_residual;
    o.report["extension"] = r.extension;
  }
  o.report["bounds"] = bounds_json(r.bounds);
  o.report["pass"] = pass;
  write_outputs(cfg, o);
  std::cout << "shadow " << sys.id() << " n=" << po.n() << (po.periodic ? " periodic" : "") << ": max distance "
            << num(max_dist);
  if (po.periodic) std::cout << ", period residual " << num(r.period_residual);
  std::cout << "\n";
  for (const auto& b : r.bounds)
    std::cout << "  " << (b.pass ? "ok   " : "FAIL ") << b.anchor << ": " << num(b.lhs) << " <= " << num(b.rhs) << "\n";
  if (!pass) {
    std::string failed;
    for (const auto& b : r.bounds)
      if (!b.pass) failed += (failed.empty() ? "" : "; ") + b.anchor;
    if (po.periodic && r.period_residual > tol) failed += (failed.empty() ? "" : "; ") + std::string("period residual");
    throw RunFailure("bound", "violated: " + failed);
  }
  return 0;
}

int cmd_periodic(const RunConfig& cfg) {
  auto sys = system_of(cfg);
  auto phi = observable_of(cfg, sys);
  const int P = int(cfg.integer("len", 8));
  if (P < 1) throw ConfigError("len must be >= 1");
  int skipped = 0;
  auto orbits = enumerate_orbits(sys, P, &skipped);
  for (auto& o : orbits) o.evaluate(phi);

  Outputs o;
  o.script_kind = "orbits";
  o.title = "periodic orbits: " + sys.id();
  o.csv = orbits_csv(orbits);
  o.report = report_header("periodic");
  o.report["config"] = cfg.echo();
  o.report["system"] = sys.id();
  o.report["observable"] = phi.name;
  o.report["orbits"] = orbits.size();
  o.report["skipped"] = skipped;
  json per = json::array();
  bool census_ok = true;
  for (int n = 1; n <= P; ++n) {
    std::int64_t pts = 0;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& orb : orbits)
      if (n % orb.period == 0) {
        pts += orb.period;
        if (orb.period == n) best = std::min(best, orb.mean);
      }
    json row{{"n", n}, {"fixed_points_of_f^n", pts}};
    if (sys.is_linear()) {
      row["det_count"] = cat_periodic_count(n);
      census_ok = census_ok && pts == cat_periodic_count(n);
    }
    row["min_mean_period_n"] = std::isfinite(best) ? json(best) : json(nullptr);
    per.push_back(row);
  }
  o.report["per_period"] = per;
  if (sys.is_linear()) o.report["census_pass"] = census_ok;
  write_outputs(cfg, o);
  std::cout << "periodic " << sys.id() << " P<=" << P << ": " << orbits.size() << " orbits";
  if (skipped) std::cout << " (" << skipped << " skipped)";
  std::cout << "\n";
  if (sys.is_linear() && !census_ok) throw RunFailure("census", "periodic point counts differ from |det(A^n - I)|");
  return 0;
}

int cmd_ebar(const RunConfig& cfg) {
  auto sys = system_of(cfg);
  auto phi = observable_of(cfg, sys);
  LaxOleinikProblem prob;
  prob.phi = phi;
  if (cfg.has("phibar") && cfg.raw("phibar") == "grid") {
    prob.grid = grid_of(cfg, sys);
    prob.C = C_of(cfg, system_constants(sys, draft_of(cfg)), phi);
  }
  auto e = estimate_phibar(cfg, sys, phi, prob);
  json report = report_header("ebar");
  report["config"] = cfg.echo();
  report["system"] = sys.id();
  report["observable"] = phi.name;
  report["estimate"] = ebar_json(e);
  // Birkhoff sweep: smallest finite-window average over seeded starts.
  const int n = int(cfg.integer("len", 50));
  auto sweep = sweep_min(sys, phi, n, std::size_t(cfg.integer("samples", 10000)), std::uint64_t(cfg.integer("seed", 1)));
  report["sweep"] = {{"n", n}, {"value", sweep.value}, {"method", sweep.method}};
  Outputs o;
  o.report = report;
  if (cfg.has("out") || cfg.has("gnuplot")) throw ConfigError("ebar writes only a JSON report");
  write_outputs(cfg, o);
  std::cout << "ebar " << sys.id() << " " << phi.name << ": " << e.method << " " << num(e.value) << ", sweep n=" << n
            << " " << num(sweep.value) << "\n";
  return 0;
}

int cmd_manifold(const RunConfig& cfg) {
  auto sys = system_of(cfg);
  if (!sys.is_torus()) throw ConfigError("manifold needs a torus system");
  auto b = build_charts(sys, draft_of(cfg));
  const auto& c = b.constants;
  const int n = int(cfg.integer("len", 60));
  if (n < 2) throw ConfigError("len must be >= 2");
  Vec2 x0 = cfg.point("x0", Vec2{0.31, 0.77});
  auto chain = orbit_chain(b.family, x0, n + 1);
  auto G = local_unstable_manifold(chain, c, n);
  auto conv = manifold_convergence(chain, c, n);
  const double bound = c.sigma_s + 2 * c.eta;
  const double tol = cfg.number("tol", 1e-9);
  bool pass = conv.rate <= bound + 1e-3 && conv.diffs.back() <= tol;

  Outputs o;
  o.script_kind = "manifold";
  o.title = "local unstable manifold graph: " + sys.id();
  o.csv = graph_csv(G);
  o.report = report_header("manifold");
  o.report["config"] = cfg.echo();
  o.report["system"] = sys.id();
  o.report["x0"] = json::array({x0.x, x0.y});
  o.report["n"] = n;
  o.report["sup_G"] = G.sup();
  o.report["rate"] = conv.rate;
  o.report["contraction_bound"] = bound;
  o.report["last_diff"] = conv.diffs.back();
  o.report["diffs"] = conv.diffs;
  o.report["pass"] = pass;
  write_outputs(cfg, o);
  std::cout << "manifold " << sys.id() << " n=" << n << ": sup|G| " << num(G.sup()) << ", rate " << num(conv.rate)
            << " (bound " << num(bound) << "), last difference " << num(conv.diffs.back()) << "\n";
  if (!pass) throw RunFailure("bound", "graph transform iterates did not converge within the contraction bound");
  return 0;
}

int cmd_verify(const RunConfig& cfg) {
  auto results = run_acceptance(cfg.list("only"), &std::cout);
  if (cfg.has("out") || cfg.has("gnuplot")) throw ConfigError("verify writes only a JSON report");
  if (cfg.has("json")) write_text(cfg.str("json"), acceptance_json(results).dump(2) + "\n");
  std::string failed;
  for (const auto& r : results)
    if (!r.pass) failed += (failed.empty() ? "" : "; ") + r.anchor;
  if (!failed.empty()) throw RunFailure("verify", "failed: " + failed);
  return 0;
}

int fail(const std::string& kind, std::string msg, int code) {
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::cerr << "error: " << kind << ": " << msg << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subactions, shadowing and periodic orbits for hyperbolic toy systems"};
  app.require_subcommand(1);
  const std::vector<std::pair<std::string, std::string>> commands{
      {"solve", "solve for a calibrated subaction with the Lax-Oleinik operator"},
      {"shadow", "shadow a pseudo-orbit and verify the shadowing bounds"},
      {"periodic", "enumerate periodic orbits and Birkhoff means"},
      {"ebar", "estimate the ergodic minimum phibar"},
      {"manifold", "compute a local unstable manifold by graph transforms"},
      {"verify", "run the acceptance checks"}};
  std::map<std::string, std::string> flag_values;
  std::string config_path;
  bool periodic_flag = false;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file; flags override its keys");
    for (const auto& [key, ks] : schema()) {
      if (key == "command") continue;
      if (ks.type == KeyType::boolean)
        sub->add_flag("--" + key, periodic_flag, ks.help);
      else
        sub->add_option("--" + key, flag_values[key], ks.help);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 1);
  }
  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    json merged = json::object();
    if (!config_path.empty()) merged = load_config_file(config_path);
    if (merged.contains("command") && merged["command"].get<std::string>() != command)
      throw ConfigError("config command " + merged["command"].get<std::string>() + " does not match " + command);
    for (const auto& [key, ks] : schema()) {
      if (key == "command") continue;
      if (sub->count("--" + key) == 0) continue;
      merged[key] = ks.type == KeyType::boolean ? json(true) : from_flag(key, flag_values[key]);
    }
    RunConfig cfg(merged);
    if (cfg.has("threads")) {
      long long t = cfg.integer("threads", 0);
      if (t < 0) throw ConfigError("threads must be >= 0");
      if (t > 0) thread_cap() = unsigned(t);
    }
    if (command == "solve") return cmd_solve(cfg);
    if (command == "shadow") return cmd_shadow(cfg);
    if (command == "periodic") return cmd_periodic(cfg);
    if (command == "ebar") return cmd_ebar(cfg);
    if (command == "manifold") return cmd_manifold(cfg);
    return cmd_verify(cfg);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 1);
  } catch (const InfeasibleConstants& e) {
    return fail("config", e.what(), 1);
  } catch (const RunFailure& e) {
    return fail(e.kind, e.what(), 2);
  } catch (const DivergenceError& e) {
    return fail("divergence", e.what(), 2);
  } catch (const NumericalFailure& e) {
    return fail("numerical", e.what(), 2);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}
