#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "subaction/charts.hpp"
#include "subaction/laxoleinik.hpp"
#include "subaction/orbits.hpp"

using namespace subaction;

namespace {

LaxOleinikProblem problem(std::shared_ptr<const Grid> g, const std::string& obs, double phibar, double C) {
  LaxOleinikProblem p;
  p.grid = g;
  p.phi = make_observable(obs, g->system());
  p.phibar = phibar;
  p.C = C;
  return p;
}

std::vector<double> random_function(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-scale, scale);
  std::vector<double> u(n);
  for (auto& x : u) x = U(rng);
  return u;
}

// Edge cost E(x, x') computed from scratch, independent of the grid's tables.
// q > 0 marks a cat-map lattice point, whose image is taken in integers.
double oracle_cost(const DynamicalSystem& sys, const Observable& phi, double phibar, double C, const PhasePoint& x,
                   const PhasePoint& xp, int q = 0) {
  double d;
  if (q > 0) {
    const Vec2& v = std::get<Vec2>(x);
    long i = std::lround(v.x * q), j = std::lround(v.y * q);
    d = sys.distance(Vec2{double((2 * i + j) % q) / q, double((i + j) % q) / q}, xp);
  } else if (sys.is_torus()) {
    d = sys.distance(sys.map(x), xp);
  } else {
    // Cylinder of the shifted word: every admissible choice of the last symbol.
    const Word& w = std::get<Word>(x);
    d = std::numeric_limits<double>::infinity();
    for (std::uint32_t last : {0u, 1u}) {
      Word y{(w.bits >> 1) | (last << (w.depth - 1)), w.depth};
      if (y.admissible()) d = std::min(d, word_distance(y, std::get<Word>(xp)));
    }
  }
  return phi(x) - phibar + C * d;
}

// Minimum of the path sum over every grid path x_0 .. x_n, summed left to right.
void paths(const std::vector<std::vector<double>>& E, std::size_t x, int left, double acc, double& best) {
  const auto& row = E[x];
  if (left == 1) {
    for (double e : row) best = std::min(best, acc + e);
    return;
  }
  for (std::size_t y = 0; y < row.size(); ++y) paths(E, y, left - 1, acc + row[y], best);
}

double exhaustive_min(const std::vector<std::vector<double>>& E, int n) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < E.size(); ++x) paths(E, x, n, 0.0, best);
  return best;
}

}  // namespace

TEST(Grid, CatLatticeIsInvariantAndMeshScales) {
  auto sys = DynamicalSystem::cat_map();
  auto g = Grid::lattice(sys, 16);
  EXPECT_EQ(g->size(), 256u);
  EXPECT_TRUE(g->exact_images());
  std::vector<int> hit(g->size(), 0);
  for (std::size_t x = 0; x < g->size(); ++x) {
    ++hit[g->image(x)];
    EXPECT_LE(sys.distance(sys.map(g->point(x)), g->point(g->image(x))), 1e-12);
  }
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_NEAR(Grid::lattice(sys, 32)->mesh() * 2, g->mesh(), 1e-15);
  // Sampled distance to the nearest lattice point never exceeds the mesh.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0, 1);
  for (int s = 0; s < 2000; ++s) {
    double err;
    g->nearest({U(rng), U(rng)}, &err);
    EXPECT_LE(err, g->mesh() + 1e-15);
  }
  EXPECT_THROW(Grid::lattice(sys, 1), ConfigError);
  EXPECT_THROW(Grid::words(sys), ConfigError);
}

TEST(Grid, CyclesPartitionLattice) {
  auto g = Grid::lattice(DynamicalSystem::cat_map(), 10);
  std::size_t total = 0;
  for (const auto& c : g->cycles()) {
    total += c.size();
    for (std::size_t k = 0; k < c.size(); ++k) EXPECT_EQ(g->image(c[k]), c[(k + 1) % c.size()]);
  }
  EXPECT_EQ(total, g->size());
  EXPECT_TRUE(Grid::lattice(DynamicalSystem::perturbed_cat_map(1e-3, 7), 10)->cycles().empty());
}

TEST(Grid, WordsCostIsCylinderDistance) {
  auto sys = DynamicalSystem::golden_mean_shift(6);
  auto g = Grid::words(sys);
  EXPECT_EQ(g->size(), 21u);  // Fibonacci count of admissible words of length 6
  auto zero = make_observable("zero", sys);
  for (std::size_t x = 0; x < g->size(); ++x)
    for (std::size_t y = 0; y < g->size(); ++y)
      EXPECT_EQ(g->cost_distance(x, y), oracle_cost(sys, zero, 0, 1, g->point(x), g->point(y)));
}

TEST(ApplyT, ConstantObservableFixesZero) {
  auto g = Grid::lattice(DynamicalSystem::cat_map(), 24);
  auto p = problem(g, "const:0.75", 0.75, 3.0);
  LaxOleinikOperator T(p);
  for (double v : T.apply(std::vector<double>(g->size(), 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(ApplyT, AdditiveEquivariance) {
  for (auto sys : {DynamicalSystem::cat_map(), DynamicalSystem::perturbed_cat_map(1e-3, 7)}) {
    auto p = problem(Grid::lattice(sys, 20), "coscos", 0.0, 2.5);
    LaxOleinikOperator T(p);
    auto u = random_function(p.grid->size(), 11);
    auto v = u;
    for (auto& x : v) x += 3.7;
    auto Tu = T.apply(u), Tv = T.apply(v);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(Tv[i], Tu[i] + 3.7, 1e-12);
  }
}

TEST(ApplyT, ThreePointToyTable) {
  // gms:2 has the three words 00, 10, 01 (symbol 0 first).
  auto sys = DynamicalSystem::golden_mean_shift(2);
  auto g = Grid::words(sys);
  ASSERT_EQ(g->size(), 3u);
  const double w00 = 0.3, w01 = -1.25, w10 = 0.8, C = 2.0, phibar = 0.1;
  auto p = problem(g, "edgecost:0.3,-1.25,0.8", phibar, C);
  // Hand table. The image of 00 and of 10 is the cylinder 0? = {00, 01};
  // the image of 01 is 1? = {10}. Cylinder misses are at distance 1.
  auto idx = [&](const char* s) { return g->index_of(Word::parse(s)); };
  const std::size_t a = idx("00"), b = idx("10"), c = idx("01");
  double E[3][3];
  E[a][a] = w00 - phibar, E[a][c] = w00 - phibar, E[a][b] = w00 - phibar + C;
  E[b][a] = w10 - phibar, E[b][c] = w10 - phibar, E[b][b] = w10 - phibar + C;
  E[c][b] = w01 - phibar, E[c][a] = w01 - phibar + C, E[c][c] = w01 - phibar + C;
  LaxOleinikOperator T(p);
  for (std::size_t x = 0; x < 3; ++x)
    for (std::size_t y = 0; y < 3; ++y) EXPECT_DOUBLE_EQ(T.E(x, y), E[x][y]);
  std::vector<double> u(3);
  u[a] = 0.5, u[b] = -2.0, u[c] = 1.0;
  auto Tu = T.apply(u);
  for (std::size_t y = 0; y < 3; ++y) {
    double m = std::min({u[a] + E[a][y], u[b] + E[b][y], u[c] + E[c][y]});
    EXPECT_DOUBLE_EQ(Tu[y], m);
  }
}

TEST(ApplyT, MatchesDenseMinimum) {
  // Pruned evaluation against the plain O(N^2) definition.
  for (auto sys : {DynamicalSystem::cat_map(), DynamicalSystem::perturbed_cat_map(1e-3, 7)})
    for (double C : {0.0, 0.7, 40.0}) {
      auto p = problem(Grid::lattice(sys, 12), "cos1", -0.3, C);
      LaxOleinikOperator T(p);
      auto u = random_function(p.grid->size(), 4, 5.0);
      auto Tu = T.apply(u);
      for (std::size_t y = 0; y < u.size(); ++y) {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t x = 0; x < u.size(); ++x) m = std::min(m, u[x] + T.E(x, y));
        EXPECT_EQ(Tu[y], m);
      }
    }
}

TEST(ApplyT, ValueIterationEqualsExhaustivePaths) {
  std::vector<LaxOleinikProblem> probs;
  for (int q : {2, 3, 5, 8}) probs.push_back(problem(Grid::lattice(DynamicalSystem::cat_map(), q), "cos1", -0.2, 1.3));
  probs.push_back(problem(Grid::lattice(DynamicalSystem::perturbed_cat_map(1e-3, 7), 4), "coscos", 0.1, 0.9));
  probs.push_back(problem(Grid::words(DynamicalSystem::golden_mean_shift(5)), "edgecost:0.3,1,-0.2", 0.05, 0.4));
  for (const auto& p : probs) {
    const auto& g = *p.grid;
    const std::size_t N = g.size();
    std::vector<std::vector<double>> E(N, std::vector<double>(N));
    for (std::size_t x = 0; x < N; ++x)
      for (std::size_t y = 0; y < N; ++y)
        E[x][y] = oracle_cost(g.system(), p.phi, p.phibar, p.C, g.point(x), g.point(y), g.exact_images() && !g.is_words() ? g.q() : 0);
    LaxOleinikOperator T(p);
    std::vector<double> t(N, 0.0);
    for (int n = 1; n <= 4; ++n) {
      t = T.apply(t);
      double vi = *std::min_element(t.begin(), t.end());
      EXPECT_EQ(vi, exhaustive_min(E, n)) << g.system().id() << " n=" << n;
    }
  }
}

TEST(OperatorLaws, SeededTrialsAllPass) {
  std::vector<LaxOleinikProblem> probs{
      problem(Grid::lattice(DynamicalSystem::cat_map(), 16), "coscos", 0.0, 5.0),
      problem(Grid::lattice(DynamicalSystem::perturbed_cat_map(1e-3, 7), 12), "cos1", -0.5, 1.0),
      problem(Grid::words(DynamicalSystem::golden_mean_shift(7)), "edgecost:default", 0.0, 2.0)};
  for (const auto& p : probs) {
    auto r = check_operator_laws(p, 200, 9);
    EXPECT_EQ(r.trials, 200);
    EXPECT_TRUE(r.all_pass()) << p.grid->system().id();
  }
}

TEST(OperatorLaws, SupNormContraction) {
  auto p = problem(Grid::lattice(DynamicalSystem::perturbed_cat_map(1e-3, 7), 16), "coscos", 0.0, 3.0);
  LaxOleinikOperator T(p);
  for (int s = 0; s < 20; ++s) {
    auto a = random_function(p.grid->size(), 2 * s, 4.0), b = random_function(p.grid->size(), 2 * s + 1, 4.0);
    EXPECT_LE(sup_diff(T.apply(a), T.apply(b)), sup_diff(a, b) + 1e-12);
  }
}

TEST(OperatorLaws, ImageIsLipschitzUpToMesh) {
  for (auto sys : {DynamicalSystem::cat_map(), DynamicalSystem::perturbed_cat_map(1e-3, 7)}) {
    auto p = problem(Grid::lattice(sys, 24), "coscos", 0.0, 2.0);
    LaxOleinikOperator T(p);
    const auto& g = *p.grid;
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t y = 1; y < g.size(); ++y) dmin = std::min(dmin, g.distance(0, y));
    double allowed = p.C + (p.C + p.phi.lip) * g.mesh() / dmin;
    for (int s = 0; s < 5; ++s) {
      auto Tu = T.apply(random_function(g.size(), s, 10.0));
      EXPECT_LE(lipschitz_estimate(g, Tu, 1u << 20), allowed);
    }
  }
}

TEST(Solve, ConstantObservableGivesZero) {
  auto p = problem(Grid::lattice(DynamicalSystem::cat_map(), 32), "const:2", 2.0, 1.0);
  auto r = solve_calibrated(p);
  for (double v : r.u.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.residual, 0.0);
  EXPECT_TRUE(r.converged);
}

TEST(Solve, ShiftWithKarpValue) {
  auto sys = DynamicalSystem::golden_mean_shift(8);
  for (std::string obs : {"edgecost:default", "edgecost:0.3,1,-0.2", "edgecost:2,-1,0.5"}) {
    auto phi = make_observable(obs, sys);
    auto ebar = min_mean_cycle(sys, phi);
    auto c = system_constants(sys, HyperbolicConstants::draft());
    auto p = problem(Grid::words(sys), obs, ebar.value, c.K_lambda * phi.lip);
    auto r = solve_calibrated(p);
    EXPECT_LE(r.residual, 1e-10) << obs;
    auto chk = subaction_check(r.u, p);
    // Exhaustive over every word and every admissible completion of its shift.
    double slack = std::numeric_limits<double>::infinity();
    const auto& g = *p.grid;
    for (std::size_t x = 0; x < g.size(); ++x) {
      Word w = std::get<Word>(g.point(x));
      for (std::uint32_t last : {0u, 1u}) {
        Word y{(w.bits >> 1) | (last << (w.depth - 1)), w.depth};
        if (y.admissible()) slack = std::min(slack, phi(g.point(x)) - ebar.value - r.u.values[g.index_of(y)] + r.u.values[x]);
      }
    }
    EXPECT_GE(slack, -1e-12) << obs;
    EXPECT_GE(chk.grid_slack, -1e-12);
    EXPECT_TRUE(chk.grid_pass);
    EXPECT_LE(r.lipschitz, p.C + 1e-9);
    EXPECT_TRUE(chk.lipschitz_pass);
  }
}

TEST(Solve, DefaultEdgeCostIsTriviallyCalibrated) {
  auto sys = DynamicalSystem::golden_mean_shift(8);
  auto p = problem(Grid::words(sys), "edgecost:default", 0.0, 24.0);
  auto r = solve_calibrated(p);
  for (double v : r.u.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.phase1_iterations, 1);
}

TEST(Solve, PhibarTooLargeDiverges) {
  auto sys = DynamicalSystem::golden_mean_shift(8);
  auto phi = make_observable("edgecost:0.3,1,-0.2", sys);
  auto ebar = min_mean_cycle(sys, phi);
  auto p = problem(Grid::words(sys), "edgecost:0.3,1,-0.2", ebar.value + 0.01, 12 * phi.lip);
  try {
    solve_calibrated(p);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("divergence: inf_n T^n[0] unbounded below", 0), 0u);
    EXPECT_NEAR(e.slope, -0.01, 1e-9);
    ASSERT_GE(e.witness.nodes.size(), 2u);
    EXPECT_EQ(e.witness.step_costs.size() + 1, e.witness.nodes.size());
    double s = 0;
    for (double c : e.witness.step_costs) s += c;
    EXPECT_NEAR(s, e.witness.total, 1e-9);
    EXPECT_LT(e.witness.total, 0.0);
  }
}

TEST(Solve, CatCoscosAcrossRefinement) {
  auto sys = DynamicalSystem::cat_map();
  auto c = system_constants(sys, HyperbolicConstants::draft());
  auto phi = make_observable("coscos", sys);
  const double C = c.K_lambda * phi.lip;
  std::vector<double> off;
  for (int q : {64, 128}) {
    auto p = problem(Grid::lattice(sys, q), "coscos", 0.0, C);
    auto r = solve_calibrated(p);
    EXPECT_LE(r.residual, p.tol);
    EXPECT_EQ(r.u.values[0], 0.0);
    SubactionOptions so;
    so.offgrid_samples = 20000;
    so.constants = &c;
    auto chk = subaction_check(r.u, p, so);
    EXPECT_TRUE(chk.grid_pass);
    EXPECT_GE(chk.grid_slack, chk.threshold);
    EXPECT_NEAR(chk.threshold, -(C + phi.lip) * p.grid->mesh(), 1e-6);
    EXPECT_LE(r.lipschitz, C * (1 + 1e-9));
    EXPECT_DOUBLE_EQ(chk.K_lip_phi, C);
    off.push_back(chk.offgrid_slack);
  }
  EXPECT_LT(off[0], 0.0);
  EXPECT_GE(off[0] / off[1], 1.8);
}

TEST(Solve, UZeroSlackIsMinPhi) {
  auto g = Grid::lattice(DynamicalSystem::cat_map(), 40);
  auto p = problem(g, "coscos", 0.0, 1.0);
  GridFunction u{std::vector<double>(g->size(), 0.0), "coscos", 1.0, 0.0, 0};
  auto chk = subaction_check(u, p);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < g->size(); ++x) m = std::min(m, p.phi(g->point(x)));
  EXPECT_EQ(chk.grid_slack, m);
  EXPECT_GE(chk.grid_slack, 0.0);
}

TEST(Solve, GridCycleMeanDecidesConvergence) {
  // On a snapped grid the solvable phibar is the min cycle mean of E itself.
  auto p = problem(Grid::lattice(DynamicalSystem::perturbed_cat_map(1e-3, 7), 12), "coscos", 0.0, 3.0);
  LaxOleinikOperator T(p);
  const int N = int(p.grid->size());
  std::vector<Edge> edges;
  for (int x = 0; x < N; ++x)
    for (int y = 0; y < N; ++y) edges.push_back({x, y, T.E(x, y)});
  double mean = karp_min_mean_cycle(N, edges).mean;
  EXPECT_GT(mean, 0.0);
  EXPECT_THROW(solve_calibrated(p), DivergenceError);
  p.phibar = mean;
  auto r = solve_calibrated(p);
  EXPECT_LE(r.residual, p.tol);
  EXPECT_GE(r.subaction_slack, -(p.C + p.phi.lip) * p.grid->mesh());
}

TEST(Solve, JacobiAndGaussSeidelAgree) {
  auto p = problem(Grid::lattice(DynamicalSystem::cat_map(), 24), "coscos", 0.0, 3.0);
  auto a = solve_calibrated(p);
  p.sweep = SweepMode::jacobi;
  auto b = solve_calibrated(p);
  EXPECT_LE(a.residual, p.tol);
  EXPECT_LE(b.residual, p.tol);
  EXPECT_LE(sup_diff(a.u.values, b.u.values), 1e-8);
}

TEST(Livsic, ZeroObservableIsNonnegative) {
  auto p = problem(Grid::lattice(DynamicalSystem::cat_map(), 16), "zero", 0.0, 1.0);
  auto r = livsic_lower_bound(p, 30, 0.0);
  for (double v : r.I) EXPECT_GE(v, 0.0);
  EXPECT_TRUE(r.bound_ok);
  EXPECT_FALSE(r.criterion_fails);
}

TEST(Livsic, CatBoundWithDerivedConstant) {
  auto sys = DynamicalSystem::cat_map();
  auto c = system_constants(sys, HyperbolicConstants::draft());
  for (std::string obs : {"coscos", "cos1"}) {
    auto phi = make_observable(obs, sys);
    double phibar = birkhoff_min_periodic(sys, phi, 6).value;
    auto p = problem(Grid::lattice(sys, 48), obs, phibar, c.K_lambda * phi.lip);
    auto r = livsic_lower_bound(p, 50, -phi.lip * c.delta_as);
    EXPECT_TRUE(r.bound_ok) << obs << " inf " << r.inf;
    for (int n = 1; n <= 50; ++n) EXPECT_GE(r.I[n], -phi.lip * c.delta_as);
  }
}

TEST(Livsic, ZeroConstantSlopeIsMinPhiMinusPhibar) {
  auto sys = DynamicalSystem::cat_map();
  auto phi = make_observable("cos1", sys);
  double phibar = birkhoff_min_periodic(sys, phi, 6).value;
  auto p = problem(Grid::lattice(sys, 32), "cos1", phibar, 0.0);
  double mn = std::numeric_limits<double>::infinity();
  for (const auto& x : p.grid->points()) mn = std::min(mn, phi(x));
  ASSERT_LT(mn, phibar);
  auto r = livsic_lower_bound(p, 50, -1.0);
  EXPECT_NEAR(r.tail_slope, mn - phibar, 1e-12);
  EXPECT_TRUE(r.criterion_fails);
  EXPECT_FALSE(r.bound_ok);
  EXPECT_EQ(r.witness.nodes.size(), 51u);
  // With coscos the minimum equals phibar and nothing decreases.
  auto q = problem(Grid::lattice(sys, 32), "coscos", 0.0, 0.0);
  auto rq = livsic_lower_bound(q, 50, 0.0);
  EXPECT_EQ(rq.tail_slope, 0.0);
  EXPECT_FALSE(rq.criterion_fails);
}

TEST(Livsic, SmallestBoundedConstant) {
  auto sys = DynamicalSystem::golden_mean_shift(6);
  auto phi = make_observable("edgecost:0.3,1,-0.2", sys);
  auto p = problem(Grid::words(sys), "edgecost:0.3,1,-0.2", min_mean_cycle(sys, phi).value, 0.0);
  double Cs = smallest_bounded_C(p, 50.0);
  ASSERT_TRUE(std::isfinite(Cs));
  EXPECT_GT(Cs, 0.0);
  auto at = [&](double C) {
    p.C = C;
    return livsic_lower_bound(p, 60, -std::numeric_limits<double>::infinity()).criterion_fails;
  };
  EXPECT_FALSE(at(Cs));
  EXPECT_FALSE(at(2 * Cs));
  EXPECT_TRUE(at(0.9 * Cs));
}

TEST(Returns, SeparatedPoints) {
  auto d = [](double a, double b) { return std::fabs(a - b); };
  auto r = decompose_returns(std::vector<double>{0.0, 1.0, 2.0}, 0.5, d);
  EXPECT_EQ(r.tau, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(r.r, 2);
  EXPECT_TRUE(r.all_ok());
}

TEST(Returns, ReturnIsDetected) {
  // (a, b, a', c) with a' close to a.
  auto d = [](double a, double b) { return std::fabs(a - b); };
  auto r = decompose_returns(std::vector<double>{0.0, 5.0, 0.1, 9.0}, 0.5, d);
  EXPECT_EQ(r.tau, (std::vector<int>{0, 3}));
  EXPECT_TRUE(r.closes_before_return);
  EXPECT_TRUE(r.all_ok());
}

TEST(Returns, RandomSequencesSatisfyConclusions) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(0, 1);
  auto sys = DynamicalSystem::cat_map();
  auto d = [&](const Vec2& a, const Vec2& b) { return sys.distance(a, b); };
  for (int s = 0; s < 50; ++s) {
    std::vector<Vec2> x;
    for (int i = 0; i < 40; ++i) x.push_back({U(rng), U(rng)});
    auto r = decompose_returns(x, 0.2, d);
    EXPECT_TRUE(r.all_ok()) << s;
    EXPECT_EQ(r.tau.front(), 0);
    EXPECT_EQ(r.tau.back(), 39);
    for (int a = 0; a < r.r; ++a)
      for (int b = a + 1; b < r.r; ++b) EXPECT_GE(d(x[r.tau[a]], x[r.tau[b]]), 0.2);
  }
}

TEST(Segments, TrueOrbitIsOneThirdKind) {
  auto sys = DynamicalSystem::cat_map();
  auto c = system_constants(sys, HyperbolicConstants::draft());
  auto phi = make_observable("coscos", sys);
  std::vector<PhasePoint> x{Vec2{0.2, 0.3}};
  for (int i = 0; i < 30; ++i) x.push_back(sys.map(x.back()));
  auto rep = classify_segments(x, sys, c, phi, 0.0, c.K_lambda * phi.lip);
  ASSERT_EQ(rep.segments.size(), 1u);
  EXPECT_EQ(rep.segments[0].kind, SegmentKind::third);
  EXPECT_DOUBLE_EQ(rep.segments[0].bound, -phi.lip * c.delta_as);
  EXPECT_TRUE(rep.all_ok());
}

TEST(Segments, HugeErrorsAreFirstKind) {
  auto sys = DynamicalSystem::cat_map();
  auto c = system_constants(sys, HyperbolicConstants::draft());
  auto phi = make_observable("cos1", sys);
  std::vector<PhasePoint> x;
  for (int i = 0; i <= 20; ++i) x.push_back(Vec2{i % 2 ? 0.5 : 0.1, i % 2 ? 0.5 : 0.7});
  double C = phi.lip * sys.diameter() / c.eps_as;
  // phibar = 1 makes every phi - phibar <= 0, so only the jump pays.
  auto rep = classify_segments(x, sys, c, phi, 1.0, C);
  ASSERT_EQ(rep.segments.size(), 20u);
  for (const auto& s : rep.segments) {
    EXPECT_EQ(s.kind, SegmentKind::first);
    EXPECT_GE(s.sum, 0.0);
  }
  EXPECT_TRUE(rep.all_ok());
}

TEST(Segments, MixedSequenceAgainstValueIteration) {
  auto sys = DynamicalSystem::cat_map();
  auto c = system_constants(sys, HyperbolicConstants::draft());
  auto phi = make_observable("coscos", sys);
  const double C = c.K_lambda * phi.lip;
  auto g = Grid::lattice(sys, 32);
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> pick(0, g->size() - 1);
  const int n = 24;
  std::vector<PhasePoint> x{g->point(pick(rng))};
  std::size_t at = g->nearest(std::get<Vec2>(x[0]));
  for (int i = 1; i <= n; ++i) {
    at = i % 7 == 0 ? pick(rng) : g->image(at);
    x.push_back(g->point(at));
  }
  auto rep = classify_segments(x, sys, c, phi, 0.0, C);
  int kinds[3] = {0, 0, 0};
  for (const auto& s : rep.segments) ++kinds[int(s.kind)];
  EXPECT_GT(kinds[1], 0);
  EXPECT_EQ(kinds[2], 1);
  EXPECT_TRUE(rep.all_ok());
  EXPECT_GE(rep.total, rep.bound_total);
  EXPECT_GE(rep.bound_total, -phi.lip * c.delta_as);
  auto lv = livsic_lower_bound(problem(g, "coscos", 0.0, C), n, -phi.lip * c.delta_as);
  EXPECT_GE(rep.total, lv.I[n] - 1e-9 * std::max(1.0, rep.total));
}

TEST(Solve, LargeCostConstantNormalizesWithinResolution) {
  // C = K_Lambda Lip puts |u| near 1e11; the normalised fixed point is verified to float resolution.
  auto sys = DynamicalSystem::cat_map();
  auto p = problem(Grid::lattice(sys, 40), "cos1", 0.0, 0.0);
  p.phibar = birkhoff_min_periodic(sys, p.phi, 8).value;
  p.C = system_constants(sys).K_lambda * p.phi.lip;
  auto r = solve_calibrated(p);
  EXPECT_EQ(r.u.values[0], 0.0);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.residual, p.tol + r.resolution);
  EXPECT_LT(r.resolution, 1e-3);
  EXPECT_GT(r.resolution, 0.0);
}
