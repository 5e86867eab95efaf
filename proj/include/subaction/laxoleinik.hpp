#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "charts.hpp"
#include "common.hpp"
#include "systems.hpp"

namespace subaction {

// Finite net of the phase space. Torus: the q x q lattice (i/q, j/q), index
// i*q + j. Shift: every admissible word of the system's depth.
//
// On the shift the image of a depth-D word is the cylinder of its shift: the
// last symbol is unknown, so d(f(x), x') is the smallest distance over the
// admissible completions. This is the exact quotient of the full shift.
class Grid {
 public:
  static std::shared_ptr<Grid> lattice(const DynamicalSystem& sys, int q) {
    if (!sys.is_torus()) throw ConfigError("lattice grids need a torus system");
    if (q < 2 || q > 4096) throw ConfigError("grid_q must be in [2, 4096]");
    auto g = std::shared_ptr<Grid>(new Grid);
    g->sys_ = sys;
    g->q_ = q;
    const std::size_t N = std::size_t(q) * q;
    g->mesh_ = torus_metric().covering_radius() / q;
    // Offset distances, symmetrised so that D(o) = D(-o) bitwise.
    g->D_.assign(N, 0.0);
    for (int di = 0; di < q; ++di)
      for (int dj = 0; dj < q; ++dj) {
        double d = torus_metric().distance({0, 0}, {double(di) / q, double(dj) / q});
        std::size_t o = std::size_t(di) * q + dj, m = std::size_t((q - di) % q) * q + (q - dj) % q;
        g->D_[o] = o <= m ? d : std::min(d, g->D_[m]);
        if (m < o) g->D_[m] = g->D_[o];
      }
    g->order_.resize(N);
    std::iota(g->order_.begin(), g->order_.end(), 0u);
    std::stable_sort(g->order_.begin(), g->order_.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return g->D_[a] < g->D_[b]; });
    g->Dsorted_.resize(N);
    for (std::size_t k = 0; k < N; ++k) g->Dsorted_[k] = g->D_[g->order_[k]];

    g->points_.resize(N);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) g->points_[std::size_t(i) * q + j] = Vec2{double(i) / q, double(j) / q};

    g->exact_ = sys.is_linear();
    g->img_.resize(N);
    g->fimg_.resize(N);
    g->snap_err_.assign(N, 0.0);
    for (int i = 0; i < q; ++i)
      for (int j = 0; j < q; ++j) {
        std::size_t x = std::size_t(i) * q + j;
        if (g->exact_) {
          int ii = (2 * i + j) % q, jj = (i + j) % q;
          g->img_[x] = std::uint32_t(ii) * q + jj;
          g->fimg_[x] = Vec2{double(ii) / q, double(jj) / q};
        } else {
          g->fimg_[x] = sys.map(std::get<Vec2>(g->points_[x]));
          g->img_[x] = std::uint32_t(g->nearest(g->fimg_[x], &g->snap_err_[x]));
        }
      }
    g->smax_ = *std::max_element(g->snap_err_.begin(), g->snap_err_.end());
    g->build_buckets();
    return g;
  }

  static std::shared_ptr<Grid> words(const DynamicalSystem& sys) {
    if (sys.is_torus()) throw ConfigError("word grids need a shift system");
    auto g = std::shared_ptr<Grid>(new Grid);
    g->sys_ = sys;
    g->is_words_ = true;
    g->exact_ = true;
    g->mesh_ = 0.0;
    auto W = sys.words();
    const std::size_t N = W.size();
    g->word_index_.assign(std::size_t(1) << sys.depth(), -1);
    for (std::size_t k = 0; k < N; ++k) {
      g->points_.push_back(W[k]);
      g->word_index_[W[k].bits] = int(k);
    }
    g->img_.resize(N);
    g->cost_.resize(N * N);
    const int D = sys.depth();
    for (std::size_t x = 0; x < N; ++x) {
      Word e0 = sys.shift(W[x]);
      g->img_[x] = std::uint32_t(g->word_index_[e0.bits]);
      Word e1{e0.bits | (1u << (D - 1)), D};
      bool two = e1.admissible();
      for (std::size_t y = 0; y < N; ++y) {
        double d = word_distance(e0, W[y]);
        if (two) d = std::min(d, word_distance(e1, W[y]));
        g->cost_[x * N + y] = d;
      }
    }
    g->build_buckets();
    return g;
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<PhasePoint>& points() const { return points_; }
  const PhasePoint& point(std::size_t i) const { return points_[i]; }
  const DynamicalSystem& system() const { return sys_; }
  bool is_words() const { return is_words_; }
  bool exact_images() const { return exact_; }
  int q() const { return q_; }
  double mesh() const { return mesh_; }
  double max_snap_error() const { return smax_; }
  // Grid point of the evaluator image f(x) (nearest lattice point if off-grid).
  std::size_t image(std::size_t x) const { return img_[x]; }

  double distance(std::size_t a, std::size_t b) const {
    if (is_words_) return word_distance(std::get<Word>(points_[a]), std::get<Word>(points_[b]));
    return D_[offset(a, b)];
  }

  // d(f(x), x') as used by the operator.
  double cost_distance(std::size_t x, std::size_t xp) const {
    if (is_words_) return cost_[x * size() + xp];
    if (exact_) return D_[offset(img_[x], xp)];
    return torus_metric().distance(fimg_[x], std::get<Vec2>(points_[xp]));
  }

  // Nearest lattice point to z in the torus metric.
  std::size_t nearest(const Vec2& z, double* err = nullptr) const {
    int i0 = int(std::lround(z.x * q_)), j0 = int(std::lround(z.y * q_));
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int di = -2; di <= 2; ++di)
      for (int dj = -2; dj <= 2; ++dj) {
        int i = ((i0 + di) % q_ + q_) % q_, j = ((j0 + dj) % q_ + q_) % q_;
        std::size_t k = std::size_t(i) * q_ + j;
        double d = torus_metric().distance(z, std::get<Vec2>(points_[k]));
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
    if (err) *err = bd;
    return best;
  }

  std::size_t index_of(const Word& w) const {
    int k = w.bits < word_index_.size() ? word_index_[w.bits] : -1;
    if (k < 0 || w.depth != sys_.depth()) throw ConfigError("word not in grid: " + w.str());
    return std::size_t(k);
  }

  // Lattice order along the cycles of the image permutation (cat map), so a
  // sweep updates f(x) right after x. Index order otherwise.
  std::vector<std::uint32_t> sweep_order() const {
    std::vector<std::uint32_t> out;
    out.reserve(size());
    if (!exact_ || is_words_) {
      for (std::uint32_t k = 0; k < size(); ++k) out.push_back(k);
      return out;
    }
    std::vector<char> seen(size(), 0);
    for (std::uint32_t s = 0; s < size(); ++s) {
      for (std::uint32_t x = s; !seen[x]; x = img_[x]) {
        seen[x] = 1;
        out.push_back(x);
      }
    }
    return out;
  }

  // Cycles of the image permutation, each listed in orbit order. Empty unless
  // the grid is mapped onto itself exactly.
  std::vector<std::vector<std::uint32_t>> cycles() const {
    std::vector<std::vector<std::uint32_t>> out;
    if (!exact_ || is_words_) return out;
    std::vector<char> seen(size(), 0);
    for (std::uint32_t s = 0; s < size(); ++s) {
      if (seen[s]) continue;
      out.emplace_back();
      for (std::uint32_t x = s; !seen[x]; x = img_[x]) {
        seen[x] = 1;
        out.back().push_back(x);
      }
    }
    return out;
  }

  // ---- internals shared with the operator ----
  std::size_t offset(std::size_t a, std::size_t b) const {
    std::size_t ai = a / q_, aj = a % q_, bi = b / q_, bj = b % q_;
    return ((bi + q_ - ai) % q_) * q_ + (bj + q_ - aj) % q_;
  }
  std::size_t translate(std::size_t p, std::uint32_t o) const {
    std::size_t pi = p / q_, pj = p % q_, oi = o / q_, oj = o % q_;
    return ((pi + oi) % q_) * q_ + (pj + oj) % q_;
  }
  const std::vector<std::uint32_t>& sorted_offsets() const { return order_; }
  const std::vector<double>& sorted_distances() const { return Dsorted_; }
  const Vec2& exact_image(std::size_t x) const { return fimg_[x]; }
  // Sources whose snapped image is y: src_[bucket_[y] .. bucket_[y+1]).
  const std::uint32_t* bucket_begin(std::size_t y) const { return src_.data() + bucket_[y]; }
  const std::uint32_t* bucket_end(std::size_t y) const { return src_.data() + bucket_[y + 1]; }

 private:
  Grid() = default;

  void build_buckets() {
    const std::size_t N = size();
    bucket_.assign(N + 1, 0);
    for (std::size_t x = 0; x < N; ++x) ++bucket_[img_[x] + 1];
    for (std::size_t y = 0; y < N; ++y) bucket_[y + 1] += bucket_[y];
    src_.resize(N);
    std::vector<std::size_t> fill(bucket_.begin(), bucket_.end() - 1);
    for (std::size_t x = 0; x < N; ++x) src_[fill[img_[x]]++] = std::uint32_t(x);
  }

  DynamicalSystem sys_;
  bool is_words_ = false;
  bool exact_ = true;
  int q_ = 1;
  double mesh_ = 0;
  double smax_ = 0;
  std::vector<PhasePoint> points_;
  std::vector<std::uint32_t> img_;
  std::vector<Vec2> fimg_;
  std::vector<double> snap_err_;
  std::vector<double> D_, Dsorted_;
  std::vector<std::uint32_t> order_;
  std::vector<std::size_t> bucket_;
  std::vector<std::uint32_t> src_;
  std::vector<double> cost_;
  std::vector<int> word_index_;
};

inline std::string point_label(const PhasePoint& p) {
  if (auto w = std::get_if<Word>(&p)) return w->str();
  const Vec2& v = std::get<Vec2>(p);
  char buf[64];
  std::snprintf(buf, sizeof buf, "(%.9g,%.9g)", v.x, v.y);
  return buf;
}

struct GridFunction {
  std::vector<double> values;
  std::string observable;
  double C = 0;
  double phibar = 0;
  int iterations = 0;
};

enum class SweepMode { gauss_seidel, jacobi };

struct LaxOleinikProblem {
  std::shared_ptr<const Grid> grid;
  Observable phi;
  double phibar = 0;
  double C = 0;
  double tol = 1e-10;
  int max_iter = 100000;
  SweepMode sweep = SweepMode::gauss_seidel;
};

struct WitnessPath {
  std::vector<std::size_t> nodes;
  std::vector<double> step_costs;  // E(x_k, x_{k+1})
  double total = 0;
};

struct DivergenceError : std::runtime_error {
  WitnessPath witness;
  double slope;
  DivergenceError(const std::string& what, WitnessPath w, double s)
      : std::runtime_error("divergence: " + what), witness(std::move(w)), slope(s) {}
};

// T[u](x') = min_x u(x) + E(x, x'), E(x, x') = (phi(x) - phibar) + C d(f(x), x').
class LaxOleinikOperator {
 public:
  explicit LaxOleinikOperator(const LaxOleinikProblem& prob) : prob_(prob), g_(*prob.grid) {
    if (!(prob.C >= 0.0) || !std::isfinite(prob.C)) throw ConfigError("C must be a finite number >= 0");
    if (!std::isfinite(prob.phibar)) throw ConfigError("phibar must be finite");
    a_.resize(g_.size());
    phi_.resize(g_.size());
    for (std::size_t x = 0; x < g_.size(); ++x) {
      phi_[x] = prob.phi(g_.point(x));
      a_[x] = phi_[x] - prob.phibar;
    }
    amax_ = 0;
    for (double v : a_) amax_ = std::max(amax_, std::fabs(v));
  }

  const LaxOleinikProblem& problem() const { return prob_; }
  const Grid& grid() const { return g_; }
  const std::vector<double>& shifted_phi() const { return a_; }
  const std::vector<double>& phi_values() const { return phi_; }

  double E(std::size_t x, std::size_t xp) const { return a_[x] + prob_.C * g_.cost_distance(x, xp); }

  struct Bounds {
    double gmin;
    double umax;
  };
  Bounds bounds(const std::vector<double>& u) const {
    Bounds b{std::numeric_limits<double>::infinity(), 0.0};
    for (std::size_t x = 0; x < u.size(); ++x) {
      b.gmin = std::min(b.gmin, u[x] + a_[x]);
      b.umax = std::max(b.umax, std::fabs(u[x]));
    }
    return b;
  }

  // Exact minimum at one target; the scan over lattice offsets stops once no
  // remaining candidate can beat the incumbent.
  // `skip` excludes one source from the minimum.
  double value_at(const std::vector<double>& u, std::size_t xp, const Bounds& bd, std::uint32_t* arg = nullptr,
                  std::uint32_t skip = std::numeric_limits<std::uint32_t>::max()) const {
    const double C = prob_.C;
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t who = 0;
    if (g_.is_words() || C == 0.0) {
      for (std::size_t x = 0; x < g_.size(); ++x) {
        if (x == skip) continue;
        double v = u[x] + (a_[x] + C * g_.cost_distance(x, xp));
        if (v < best) {
          best = v;
          who = std::uint32_t(x);
        }
      }
    } else {
      const auto& offs = g_.sorted_offsets();
      const auto& ds = g_.sorted_distances();
      const double smax = g_.max_snap_error();
      const double eps = 4.0 * std::numeric_limits<double>::epsilon();
      const bool exact = g_.exact_images();
      for (std::size_t k = 0; k < offs.size(); ++k) {
        double reach = C * std::max(0.0, ds[k] - smax);
        double slack = eps * (bd.umax + amax_ + reach + std::fabs(best)) + 1e-300;
        if (bd.gmin + reach - slack > best) break;
        std::size_t y = g_.translate(xp, offs[k]);
        for (const std::uint32_t* s = g_.bucket_begin(y); s != g_.bucket_end(y); ++s) {
          if (*s == skip) continue;
          double d = exact ? ds[k] : g_.cost_distance(*s, xp);
          double v = u[*s] + (a_[*s] + C * d);
          if (v < best || (v == best && *s < who)) {
            best = v;
            who = *s;
          }
        }
      }
    }
    if (arg) *arg = who;
    return best;
  }

  std::vector<double> apply(const std::vector<double>& u, std::vector<std::uint32_t>* argmin = nullptr) const {
    if (u.size() != g_.size()) throw std::invalid_argument("grid function size mismatch");
    std::vector<double> out(u.size());
    if (argmin) argmin->resize(u.size());
    Bounds bd = bounds(u);
    parallel_for(u.size(), [&](std::size_t lo, std::size_t hi, unsigned) {
      for (std::size_t xp = lo; xp < hi; ++xp) out[xp] = value_at(u, xp, bd, argmin ? &(*argmin)[xp] : nullptr);
    });
    return out;
  }

  // In-place sweep in grid sweep order; returns the largest change. The
  // bounds stay valid because values only increase in the solver's second phase.
  // Returns the largest change and the smallest rise over the sweep.
  std::pair<double, double> gauss_seidel(std::vector<double>& u, const std::vector<std::uint32_t>& order) const {
    Bounds bd = bounds(u);
    double change = 0, rise = std::numeric_limits<double>::infinity();
    for (std::uint32_t xp : order) {
      double v = value_at(u, xp, bd);
      change = std::max(change, std::fabs(v - u[xp]));
      rise = std::min(rise, v - u[xp]);
      u[xp] = v;
      bd.gmin = std::min(bd.gmin, u[xp] + a_[xp]);
      bd.umax = std::max(bd.umax, std::fabs(u[xp]));
    }
    return {change, rise};
  }

  // Block sweep over the cycles of an exact image permutation. Along a cycle
  // the zero-distance edge x -> f(x) is resolved exactly: with outside values
  // e(x') the block equations u(c_{k+1}) = min(e(c_{k+1}), u(c_k) + a(c_k))
  // are solved in two laps. A cycle of positive Birkhoff sum has a unique
  // solution; on a zero-sum cycle the iteration from u keeps u as a bound.
  std::pair<double, double> cycle_sweep(std::vector<double>& u,
                                        const std::vector<std::vector<std::uint32_t>>& cycles) const {
    Bounds bd = bounds(u);
    double change = 0, rise = std::numeric_limits<double>::infinity();
    std::vector<double> e, next;
    for (const auto& cyc : cycles) {
      const std::size_t P = cyc.size();
      e.resize(P);
      next.resize(P);
      double S = 0, scale = 0;
      for (std::size_t k = 0; k < P; ++k) {
        std::uint32_t pred = cyc[(k + P - 1) % P];
        e[k] = P == 1 ? value_at(u, cyc[k], bd, nullptr, cyc[k]) : value_at(u, cyc[k], bd, nullptr, pred);
        S += a_[cyc[k]];
        scale += std::fabs(a_[cyc[k]]);
      }
      double ztol = prob_.tol + 8 * std::numeric_limits<double>::epsilon() * scale;
      if (S < -ztol) {
        WitnessPath w;
        for (std::uint32_t x : cyc) w.nodes.push_back(x);
        w.nodes.push_back(cyc[0]);
        for (std::size_t k = 0; k < P; ++k) w.step_costs.push_back(a_[cyc[k]]);
        w.total = S;
        throw DivergenceError("inf_n T^n[0] unbounded below (negative cycle mean " + std::to_string(S / P) + ")",
                              std::move(w), S / P);
      }
      const bool critical = S <= ztol;
      double cur = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < 2 * P; ++t) {
        std::size_t k = t % P;
        double via = cur + a_[cyc[(k + P - 1) % P]];
        cur = std::min(e[k], via);
        if (critical) cur = std::min(cur, u[cyc[k]]);
        next[k] = cur;
      }
      for (std::size_t k = 0; k < P; ++k) {
        std::uint32_t x = cyc[k];
        change = std::max(change, std::fabs(next[k] - u[x]));
        rise = std::min(rise, next[k] - u[x]);
        u[x] = next[k];
        bd.gmin = std::min(bd.gmin, u[x] + a_[x]);
        bd.umax = std::max(bd.umax, std::fabs(u[x]));
      }
    }
    return {change, rise};
  }

  // The operator evaluated at an arbitrary torus point z (extension of a
  // grid function off the lattice).
  double extend(const std::vector<double>& u, const Vec2& z, const Bounds& bd) const {
    if (g_.is_words()) throw ConfigError("off-grid extension needs a lattice grid");
    const double C = prob_.C;
    double e;
    std::size_t y0 = g_.nearest(z, &e);
    const auto& offs = g_.sorted_offsets();
    const auto& ds = g_.sorted_distances();
    const double smax = g_.max_snap_error();
    const double eps = 4.0 * std::numeric_limits<double>::epsilon();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < offs.size(); ++k) {
      double reach = C * std::max(0.0, ds[k] - smax - e);
      double slack = eps * (bd.umax + amax_ + reach + std::fabs(best)) + 1e-300;
      if (bd.gmin + reach - slack > best) break;
      std::size_t y = g_.translate(y0, offs[k]);
      for (const std::uint32_t* s = g_.bucket_begin(y); s != g_.bucket_end(y); ++s) {
        double d = torus_metric().distance(g_.exact_image(*s), z);
        best = std::min(best, u[*s] + (a_[*s] + C * d));
      }
    }
    return best;
  }

 private:
  LaxOleinikProblem prob_;
  const Grid& g_;
  std::vector<double> a_, phi_;
  double amax_ = 0;
};

inline double sup_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::fabs(a[i] - b[i]));
  return s;
}

inline GridFunction apply_T(const GridFunction& u, const LaxOleinikProblem& prob) {
  LaxOleinikOperator T(prob);
  GridFunction out = u;
  out.values = T.apply(u.values);
  out.observable = prob.phi.name;
  out.C = prob.C;
  out.phibar = prob.phibar;
  out.iterations = u.iterations + 1;
  return out;
}

// Largest |u(x) - u(y)| / d(x, y): all pairs on small grids, otherwise random
// pairs mixed with lattice neighbours.
inline double lipschitz_estimate(const Grid& g, const std::vector<double>& u, std::size_t pairs = 100000,
                                 std::uint64_t seed = 17) {
  const std::size_t N = g.size();
  double best = 0;
  auto consider = [&](std::size_t a, std::size_t b) {
    double d = g.distance(a, b);
    if (d > 0) best = std::max(best, std::fabs(u[a] - u[b]) / d);
  };
  if (N * (N - 1) / 2 <= pairs) {
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t b = a + 1; b < N; ++b) consider(a, b);
    return best;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  std::uniform_int_distribution<int> near(-3, 3);
  for (std::size_t t = 0; t < pairs; ++t) {
    std::size_t a = pick(rng), b;
    if (t % 2 == 0 || g.is_words()) {
      b = pick(rng);
    } else {
      int q = g.q();
      std::size_t i = a / q, j = a % q;
      b = ((i + q + near(rng)) % q) * q + (j + q + near(rng)) % q;
    }
    consider(a, b);
  }
  return best;
}

struct SolveReport {
  GridFunction u;
  double residual = 0;           // |T[u] - u|_inf after normalisation
  double resolution = 0;         // floating resolution of T[u] at the scale of u, phi and C diam
  double subaction_slack = 0;    // min_x phi(x) - phibar - u(f(x)) + u(x) on the grid
  double lipschitz = 0;
  int phase1_iterations = 0;
  int phase2_sweeps = 0;
  int residual_checks = 0;
  bool converged = false;
};

struct SolveOptions {
  int divergence_window = 10;
  std::size_t lipschitz_pairs = 100000;
  bool normalize = true;
};

namespace detail {

// Linear drift over the window: every coordinate moved by more than tol at
// each step and the moves are not shrinking. When the iteration is bounded the
// nodes of a critical cycle eventually stop moving.
inline bool drifting(const std::vector<double>& steps, int window, double tol) {
  if (int(steps.size()) < window) return false;
  double first = 0, second = 0;
  for (int k = 0; k < window; ++k) {
    double s = steps[steps.size() - window + k];
    if (!(s > tol)) return false;
    (k < window / 2 ? first : second) += s;
  }
  return second >= 0.5 * first;
}

inline WitnessPath trace_witness(const LaxOleinikOperator& T, const std::vector<std::vector<std::uint32_t>>& preds,
                                 std::size_t end) {
  WitnessPath w;
  std::vector<std::size_t> rev{end};
  for (auto it = preds.rbegin(); it != preds.rend(); ++it) rev.push_back((*it)[rev.back()]);
  w.nodes.assign(rev.rbegin(), rev.rend());
  for (std::size_t k = 0; k + 1 < w.nodes.size(); ++k) {
    w.step_costs.push_back(T.E(w.nodes[k], w.nodes[k + 1]));
    w.total += w.step_costs.back();
  }
  return w;
}

}  // namespace detail

// v = inf_n T^n[0] by Jacobi iteration, then u = sup_n T^n[v] by sweeps,
// stopping on the full residual |T[u] - u|_inf <= tol.
inline SolveReport solve_calibrated(const LaxOleinikProblem& prob, const SolveOptions& opt = {}) {
  LaxOleinikOperator T(prob);
  const Grid& g = *prob.grid;
  const std::size_t N = g.size();
  SolveReport rep;

  std::vector<double> t(N, 0.0), v(N, 0.0), prev(N, 0.0);
  std::vector<double> mins{0.0}, drops;
  std::vector<std::vector<std::uint32_t>> preds;
  int it = 0;
  for (;;) {
    if (++it > prob.max_iter) throw NumericalFailure("max iterations exceeded while computing inf_n T^n[0]");
    std::vector<std::uint32_t> arg;
    t = T.apply(t, &arg);
    preds.push_back(std::move(arg));
    if (int(preds.size()) > opt.divergence_window) preds.erase(preds.begin());
    double dec = 0, drop = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < N; ++x) {
      dec = std::max(dec, v[x] - t[x]);
      drop = std::min(drop, prev[x] - t[x]);
      v[x] = std::min(v[x], t[x]);
    }
    prev = t;
    double m = *std::min_element(t.begin(), t.end());
    drops.push_back(drop);
    mins.push_back(m);
    if (dec <= prob.tol / 10) break;
    if (detail::drifting(drops, opt.divergence_window, prob.tol)) {
      std::size_t end = std::min_element(t.begin(), t.end()) - t.begin();
      double slope = (mins.back() - mins[mins.size() - 1 - opt.divergence_window]) / opt.divergence_window;
      throw DivergenceError("inf_n T^n[0] unbounded below (slope " + std::to_string(slope) + ")",
                            detail::trace_witness(T, preds, end), slope);
    }
  }
  rep.phase1_iterations = it;

  std::vector<double> u = v;
  const auto order = g.sweep_order();
  const auto cycles = g.cycles();
  int sweeps = 0;
  auto settle = [&] {
    std::vector<double> rises;
    for (;;) {
      if (++sweeps > prob.max_iter) throw NumericalFailure("max iterations exceeded while computing sup_n T^n[v]");
      double change, rise;
      if (prob.sweep == SweepMode::gauss_seidel) {
        std::tie(change, rise) = cycles.empty() ? T.gauss_seidel(u, order) : T.cycle_sweep(u, cycles);
        if (change <= prob.tol) {
          ++rep.residual_checks;
          if (sup_diff(T.apply(u), u) <= prob.tol) break;
        }
      } else {
        std::vector<double> next = T.apply(u);
        change = sup_diff(next, u);
        rise = std::numeric_limits<double>::infinity();
        for (std::size_t x = 0; x < N; ++x) rise = std::min(rise, next[x] - u[x]);
        ++rep.residual_checks;
        if (change <= prob.tol) break;
        u = std::move(next);
      }
      rises.push_back(rise);
      if (detail::drifting(rises, opt.divergence_window, prob.tol))
        throw DivergenceError("sup_n T^n[v] unbounded above", {}, rise);
    }
  };
  settle();
  if (opt.normalize) {
    double c = u[0];
    for (double& x : u) x -= c;
    // The shift is exact only in exact arithmetic; at large |u| it costs ulps.
    // Plain T iterations land on a floating fixed point of T itself.
    for (int k = 0; k < 20; ++k) {
      auto next = T.apply(u);
      if (sup_diff(next, u) <= prob.tol) break;
      u = std::move(next);
    }
  }
  rep.phase2_sweeps = sweeps;
  rep.residual = sup_diff(T.apply(u), u);
  double umax = 0, amax = 0;
  for (std::size_t x = 0; x < N; ++x) {
    umax = std::max(umax, std::fabs(u[x]));
    amax = std::max(amax, std::fabs(T.shifted_phi()[x]));
  }
  rep.resolution = 4 * std::numeric_limits<double>::epsilon() * (umax + amax + prob.C * g.system().diameter());
  rep.converged = rep.residual <= prob.tol + rep.resolution;
  double slack = std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < N; ++x) slack = std::min(slack, T.shifted_phi()[x] - u[g.image(x)] + u[x]);
  rep.subaction_slack = slack;
  rep.lipschitz = lipschitz_estimate(g, u, opt.lipschitz_pairs);
  rep.u = {u, prob.phi.name, prob.C, prob.phibar, it + sweeps};
  return rep;
}

struct OperatorLawReport {
  int trials = 0;
  int monotone_pass = 0;
  int additive_pass = 0;
  int inf_pass = 0;
  int contraction_pass = 0;
  double worst_additive = 0;
  bool all_pass() const {
    return monotone_pass == trials && additive_pass == trials && inf_pass == trials && contraction_pass == trials;
  }
};

// Monotonicity, T[u + c] = T[u] + c, inf-commutation over a finite family and
// sup-norm non-expansion, on seeded random grid functions.
inline OperatorLawReport check_operator_laws(const LaxOleinikProblem& prob, int trials, std::uint64_t seed = 5) {
  LaxOleinikOperator T(prob);
  const std::size_t N = prob.grid->size();
  std::mt19937_64 rng(seed);
  double scale = std::max(1.0, prob.C * prob.grid->system().diameter());
  std::uniform_real_distribution<double> val(-scale, scale), gap(0.0, 1.0), cst(-10.0, 10.0);
  OperatorLawReport r;
  r.trials = trials;
  auto random_fn = [&] {
    std::vector<double> u(N);
    for (auto& x : u) x = val(rng);
    return u;
  };
  for (int t = 0; t < trials; ++t) {
    auto u1 = random_fn(), u2 = u1;
    for (auto& x : u2) x += gap(rng);
    auto t1 = T.apply(u1), t2 = T.apply(u2);
    bool mono = true;
    for (std::size_t x = 0; x < N; ++x) mono &= t1[x] <= t2[x];
    r.monotone_pass += mono;

    double c = t == 0 ? 3.7 : cst(rng);
    auto uc = u1;
    for (auto& x : uc) x += c;
    auto tc = T.apply(uc);
    double dev = 0;
    for (std::size_t x = 0; x < N; ++x) dev = std::max(dev, std::fabs(tc[x] - (t1[x] + c)));
    // Exact in real arithmetic; floating sums are reassociated.
    double allow = 8 * std::numeric_limits<double>::epsilon() * (2 * scale + std::fabs(c) + 4 * prob.C);
    r.worst_additive = std::max(r.worst_additive, dev);
    r.additive_pass += dev <= allow;

    std::vector<std::vector<double>> fam{u1, random_fn(), random_fn()};
    if (t % 2 == 0) {
      fam = {u1, u1, u1};
      for (auto& x : fam[1]) x -= 1.0;
      for (auto& x : fam[2]) x += 2.0;
    }
    std::vector<double> m(N, std::numeric_limits<double>::infinity());
    std::vector<double> mt(N, std::numeric_limits<double>::infinity());
    for (auto& f : fam) {
      auto tf = T.apply(f);
      for (std::size_t x = 0; x < N; ++x) {
        m[x] = std::min(m[x], f[x]);
        mt[x] = std::min(mt[x], tf[x]);
      }
    }
    r.inf_pass += T.apply(m) == mt;

    auto t3 = T.apply(fam[1]);
    r.contraction_pass += sup_diff(t1, t3) <= sup_diff(u1, fam[1]) * (1 + 1e-15);
  }
  return r;
}

struct SubactionReport {
  double grid_slack = 0;        // min over grid points
  double offgrid_slack = 0;     // min over sampled torus points (T-extension)
  std::size_t offgrid_samples = 0;
  double threshold = 0;         // -(C + Lip(phi)) h
  double lipschitz = 0;
  double C = 0;
  double K_lip_phi = 0;         // K_Lambda Lip(phi), if constants were supplied
  bool grid_pass = false;
  bool offgrid_pass = true;
  bool lipschitz_pass = false;
};

struct SubactionOptions {
  std::size_t offgrid_samples = 0;
  std::uint64_t seed = 23;
  std::size_t lipschitz_pairs = 100000;
  const HyperbolicConstants* constants = nullptr;
  double exact_tol = 1e-12;
};

inline SubactionReport subaction_check(const GridFunction& u, const LaxOleinikProblem& prob,
                                       const SubactionOptions& opt = {}) {
  LaxOleinikOperator T(prob);
  const Grid& g = *prob.grid;
  SubactionReport r;
  r.C = prob.C;
  r.threshold = g.mesh() > 0 ? -(prob.C + prob.phi.lip) * g.mesh() : -opt.exact_tol;
  r.grid_slack = std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < g.size(); ++x)
    r.grid_slack = std::min(r.grid_slack, T.shifted_phi()[x] - u.values[g.image(x)] + u.values[x]);
  r.grid_pass = r.grid_slack >= r.threshold;
  if (opt.offgrid_samples > 0 && !g.is_words()) {
    const auto& sys = g.system();
    auto bd = T.bounds(u.values);
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    r.offgrid_slack = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < opt.offgrid_samples; ++s) {
      double zx = U(rng);
      Vec2 z{zx, U(rng)};
      double slack = (prob.phi(z) - prob.phibar) - T.extend(u.values, sys.map(z), bd) + T.extend(u.values, z, bd);
      r.offgrid_slack = std::min(r.offgrid_slack, slack);
    }
    r.offgrid_samples = opt.offgrid_samples;
    r.offgrid_pass = r.offgrid_slack >= r.threshold;
  }
  r.lipschitz = lipschitz_estimate(g, u.values, opt.lipschitz_pairs);
  r.lipschitz_pass = r.lipschitz <= prob.C * (1 + 1e-9) + 1e-9;
  if (opt.constants) r.K_lip_phi = opt.constants->K_lambda * prob.phi.lip;
  return r;
}

struct LivsicReport {
  std::vector<double> I;       // I_0 .. I_nmax, I_n = min_x T^n[0](x)
  double inf = 0;              // min over n >= 1
  double bound = 0;            // lower bound tested against
  bool bound_ok = false;
  bool stabilized = false;
  double tail_slope = 0;       // (I_n - I_{n-w}) / w over the last window
  bool criterion_fails = false;
  WitnessPath witness;         // minimising path of length n_max
};

inline LivsicReport livsic_lower_bound(const LaxOleinikProblem& prob, int n_max, double bound, int window = 10) {
  if (n_max < 1) throw ConfigError("n_max must be >= 1");
  LaxOleinikOperator T(prob);
  const std::size_t N = prob.grid->size();
  LivsicReport r;
  r.bound = bound;
  std::vector<double> t(N, 0.0);
  r.I.push_back(0.0);
  std::vector<std::vector<std::uint32_t>> preds;
  for (int n = 1; n <= n_max; ++n) {
    std::vector<std::uint32_t> arg;
    t = T.apply(t, &arg);
    preds.push_back(std::move(arg));
    r.I.push_back(*std::min_element(t.begin(), t.end()));
  }
  r.inf = *std::min_element(r.I.begin() + 1, r.I.end());
  r.bound_ok = r.inf >= bound;
  int w = std::min(window, n_max);
  r.tail_slope = (r.I[n_max] - r.I[n_max - w]) / w;
  double scale = std::max(1.0, std::fabs(r.I[n_max]));
  r.stabilized = std::fabs(r.I[n_max] - r.I[n_max - 1]) <= prob.tol * scale;
  r.criterion_fails = !r.stabilized && r.tail_slope < -prob.tol * scale;
  std::size_t end = std::min_element(t.begin(), t.end()) - t.begin();
  r.witness = detail::trace_witness(T, preds, end);
  return r;
}

// Bisection for the smallest C whose value iteration stays bounded below
// (tail slope within tolerance) over n_max steps.
inline double smallest_bounded_C(LaxOleinikProblem prob, double hi, int n_max = 60, int steps = 40) {
  double lo = 0.0;
  auto bounded = [&](double C) {
    prob.C = C;
    return !livsic_lower_bound(prob, n_max, -std::numeric_limits<double>::infinity()).criterion_fails;
  };
  if (!bounded(hi)) return std::numeric_limits<double>::infinity();
  if (bounded(lo)) return 0.0;
  for (int s = 0; s < steps; ++s) {
    double mid = 0.5 * (lo + hi);
    (bounded(mid) ? hi : lo) = mid;
  }
  return hi;
}

// ---- return-time decomposition and segment classification ----

struct ReturnDecomposition {
  std::vector<int> tau;
  int r = 0;
  bool far_from_earlier_returns = true;  // d(x_j, x_{tau_l}) >= eps for j >= tau_k > tau_l, k < r
  bool closes_before_return = true;      // d(x_{tau_k - 1}, x_{tau_{k-1}}) < eps when tau_k >= tau_{k-1} + 2
  bool last_segment_closes = true;
  bool separated = true;                 // x_{tau_0..tau_{r-1}} pairwise >= eps
  std::size_t covering = 0;              // greedy eps/2 covering count of the points
  bool count_ok = true;                  // r <= covering
  bool all_ok() const {
    return far_from_earlier_returns && closes_before_return && last_segment_closes && separated && count_ok;
  }
};

template <class Point, class Dist>
ReturnDecomposition decompose_returns(const std::vector<Point>& x, double eps, Dist dist) {
  if (x.empty()) throw ConfigError("decompose_returns needs a nonempty sequence");
  const int n = int(x.size()) - 1;
  ReturnDecomposition d;
  d.tau.push_back(0);
  while (d.tau.back() < n) {
    int tk = d.tau.back(), last = -1;
    for (int j = tk + 1; j <= n; ++j)
      if (dist(x[j], x[tk]) < eps) last = j;
    if (last < 0)
      d.tau.push_back(tk + 1);
    else if (last < n)
      d.tau.push_back(last + 1);
    else
      d.tau.push_back(n);
  }
  d.r = int(d.tau.size()) - 1;
  const auto& tau = d.tau;
  for (int k = 1; k <= d.r - 1; ++k) {
    for (int l = 0; l < k; ++l)
      for (int j = tau[k]; j <= n - 1; ++j)
        if (dist(x[j], x[tau[l]]) < eps) d.far_from_earlier_returns = false;
    if (tau[k] >= tau[k - 1] + 2 && !(dist(x[tau[k] - 1], x[tau[k - 1]]) < eps)) d.closes_before_return = false;
  }
  if (d.r >= 1)
    d.last_segment_closes =
        dist(x[tau[d.r] - 1], x[tau[d.r - 1]]) < eps || dist(x[tau[d.r]], x[tau[d.r - 1]]) < eps;
  for (int a = 0; a < d.r; ++a)
    for (int b = a + 1; b < d.r; ++b)
      if (dist(x[tau[a]], x[tau[b]]) < eps) d.separated = false;
  d.covering = greedy_covering(x, 0.5 * eps, dist);
  d.count_ok = std::size_t(d.r) <= d.covering;
  return d;
}

enum class SegmentKind { first, second, third };

inline const char* kind_name(SegmentKind k) {
  return k == SegmentKind::first ? "first" : k == SegmentKind::second ? "second" : "third";
}

struct Segment {
  int begin = 0;     // tau_k
  int end = 0;       // tau_{k+1}
  SegmentKind kind = SegmentKind::third;
  double sum = 0;    // sum_{i=begin}^{end-1} phi(x_i) - phibar + C d(f(x_i), x_{i+1})
  double bound = 0;  // proof's lower bound for this kind
  bool ok = false;
};

struct SegmentReport {
  std::vector<Segment> segments;
  double total = 0;
  double bound_total = 0;
  bool all_ok() const {
    for (const auto& s : segments)
      if (!s.ok) return false;
    return true;
  }
};

// Cuts after every step with d(f(x_i), x_{i+1}) >= eps_AS. A cut segment of
// length one is of the first kind, a longer one of the second kind, and the
// trailing run of small steps is of the third kind.
inline SegmentReport classify_segments(const std::vector<PhasePoint>& x, const DynamicalSystem& sys,
                                       const HyperbolicConstants& c, const Observable& phi, double phibar, double C) {
  SegmentReport rep;
  const int n = int(x.size()) - 1;
  int start = 0;
  auto term = [&](int i, double& step) {
    step = sys.distance(sys.map(x[i]), x[i + 1]);
    return phi(x[i]) - phibar + C * step;
  };
  Segment cur{0, 0, SegmentKind::third, 0, 0, false};
  for (int i = 0; i < n; ++i) {
    double step;
    cur.sum += term(i, step);
    if (step >= c.eps_as) {
      cur.begin = start;
      cur.end = i + 1;
      cur.kind = cur.end - cur.begin == 1 ? SegmentKind::first : SegmentKind::second;
      cur.bound = 0.0;
      rep.segments.push_back(cur);
      start = i + 1;
      cur = Segment{start, start, SegmentKind::third, 0, 0, false};
    }
  }
  if (start < n || rep.segments.empty()) {
    cur.begin = start;
    cur.end = n;
    cur.kind = SegmentKind::third;
    cur.bound = -phi.lip * c.delta_as;
    rep.segments.push_back(cur);
  }
  for (auto& s : rep.segments) {
    s.ok = s.sum >= s.bound;
    rep.total += s.sum;
    rep.bound_total += s.bound;
  }
  return rep;
}

}  // namespace subaction
