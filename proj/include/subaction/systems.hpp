#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "common.hpp"

namespace subaction {

inline constexpr double kGolden = std::numbers::phi;               // (1+sqrt5)/2
inline constexpr double kLambdaU = kGolden * kGolden;              // (3+sqrt5)/2
inline constexpr double kLambdaS = 1.0 / (kGolden * kGolden);      // (3-sqrt5)/2
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline const Mat2 kCatMatrix{2.0, 1.0, 1.0, 1.0};

inline double wrap01(double t) {
  double r = t - std::floor(t);
  return r >= 1.0 ? 0.0 : r;
}
inline Vec2 wrap(const Vec2& p) { return {wrap01(p.x), wrap01(p.y)}; }
// Representative of t modulo 1 in [-1/2, 1/2].
inline double centered(double t) { return t - std::nearbyint(t); }
inline Vec2 centered(const Vec2& v) { return {centered(v.x), centered(v.y)}; }

// Sup norm over the two eigen-coordinates of the cat matrix. The basis vectors
// are scaled so both have first component 1/2; then |dx1| <= |v|.
class TorusMetric {
 public:
  TorusMetric() {
    eu_ = {0.5, 0.5 / kGolden};
    es_ = {0.5, -0.5 * kGolden};
    basis_ = Mat2::columns(eu_, es_);
    inv_ = basis_.inverse();
  }

  const Mat2& basis() const { return basis_; }
  const Mat2& inverse_basis() const { return inv_; }
  Vec2 unstable() const { return eu_; }
  Vec2 stable() const { return es_; }

  Vec2 coords(const Vec2& displacement) const { return inv_ * displacement; }
  double norm(const Vec2& displacement) const { return sup_norm(inv_ * displacement); }

  // Shortest lift of b - a. The unit ball is the parallelogram basis*[-1,1]^2,
  // so for a centered difference only the translates k in {-1,0,1}^2 can win.
  Vec2 displacement(const Vec2& a, const Vec2& b) const {
    Vec2 d = centered(b - a);
    Vec2 best = d;
    double bn = norm(d);
    for (int i = -1; i <= 1; ++i)
      for (int j = -1; j <= 1; ++j) {
        if (i == 0 && j == 0) continue;
        Vec2 c{d.x + i, d.y + j};
        double n = norm(c);
        if (n < bn) {
          bn = n;
          best = c;
        }
      }
    return best;
  }

  double distance(const Vec2& a, const Vec2& b) const { return norm(displacement(a, b)); }

  // Upper bound for max_x d(x, Z^2): sampled maximum plus the largest norm of
  // a half-cell offset.
  double covering_radius() const {
    static const double r = [this] {
      const int m = 800;
      double best = 0.0;
      for (int i = 0; i <= m / 2; ++i)
        for (int j = 0; j < m; ++j) best = std::max(best, distance({0.0, 0.0}, {double(i) / m, double(j) / m}));
      double h = 0.5 / m;
      return best + std::max(norm({h, h}), norm({h, -h}));
    }();
    return r;
  }

 private:
  Vec2 eu_, es_;
  Mat2 basis_, inv_;
};

inline const TorusMetric& torus_metric() {
  static const TorusMetric m;
  return m;
}

// Symbol i of the word is bit i of `bits`.
struct Word {
  std::uint32_t bits = 0;
  int depth = 0;

  int symbol(int i) const { return int((bits >> i) & 1u); }
  bool admissible() const {
    if (depth < 1 || depth > 30) return false;
    if (bits >> depth) return false;
    return (bits & (bits >> 1)) == 0;
  }
  std::string str() const {
    std::string s;
    for (int i = 0; i < depth; ++i) s += char('0' + symbol(i));
    return s;
  }
  static Word parse(const std::string& s) {
    Word w{0, int(s.size())};
    for (int i = 0; i < w.depth; ++i) {
      if (s[i] != '0' && s[i] != '1') throw ConfigError("word symbols must be 0 or 1: " + s);
      if (s[i] == '1') w.bits |= 1u << i;
    }
    if (!w.admissible()) throw ConfigError("word contains forbidden factor 11: " + s);
    return w;
  }
  bool operator==(const Word&) const = default;
};

inline double word_distance(const Word& a, const Word& b) {
  std::uint32_t diff = a.bits ^ b.bits;
  if (diff == 0) return 0.0;
  return std::ldexp(1.0, -std::countr_zero(diff));
}

using PhasePoint = std::variant<Vec2, Word>;

enum class SpaceKind { torus, shift };

// g(x) = sum over modes k of (a_k sin(2 pi k.x + t_k), b_k sin(2 pi k.x + s_k)).
struct TrigField {
  static constexpr std::array<std::array<int, 2>, 3> modes{{{1, 0}, {0, 1}, {1, 1}}};
  std::array<double, 3> amp1{}, amp2{}, phase1{}, phase2{};

  static TrigField from_seed(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(-0.1, 0.1), ph(0.0, kTwoPi);
    TrigField g;
    for (int m = 0; m < 3; ++m) {
      g.amp1[m] = amp(rng);
      g.amp2[m] = amp(rng);
      g.phase1[m] = ph(rng);
      g.phase2[m] = ph(rng);
    }
    return g;
  }

  Vec2 operator()(const Vec2& x) const {
    Vec2 r;
    for (int m = 0; m < 3; ++m) {
      double t = kTwoPi * (modes[m][0] * x.x + modes[m][1] * x.y);
      r.x += amp1[m] * std::sin(t + phase1[m]);
      r.y += amp2[m] * std::sin(t + phase2[m]);
    }
    return r;
  }

  Mat2 jacobian(const Vec2& x) const {
    Mat2 J{0, 0, 0, 0};
    for (int m = 0; m < 3; ++m) {
      double t = kTwoPi * (modes[m][0] * x.x + modes[m][1] * x.y);
      double c1 = kTwoPi * amp1[m] * std::cos(t + phase1[m]);
      double c2 = kTwoPi * amp2[m] * std::cos(t + phase2[m]);
      J.a += c1 * modes[m][0];
      J.b += c1 * modes[m][1];
      J.c += c2 * modes[m][0];
      J.d += c2 * modes[m][1];
    }
    return J;
  }

  double sup_bound() const {
    double s1 = 0, s2 = 0;
    for (int m = 0; m < 3; ++m) {
      s1 += std::fabs(amp1[m]);
      s2 += std::fabs(amp2[m]);
    }
    return std::max(s1, s2);
  }

  // Bound on the sup-operator norm of Dg: 2 pi sum |a_k| (|k1|+|k2|) per row.
  double jacobian_bound() const {
    double s1 = 0, s2 = 0;
    for (int m = 0; m < 3; ++m) {
      double w = modes[m][0] + modes[m][1];
      s1 += std::fabs(amp1[m]) * w;
      s2 += std::fabs(amp2[m]) * w;
    }
    return kTwoPi * std::max(s1, s2);
  }
};

class DynamicalSystem {
 public:
  static DynamicalSystem cat_map() { return perturbed_cat_map(0.0, 0); }

  static DynamicalSystem perturbed_cat_map(double eps_p, std::uint64_t seed) {
    if (!(eps_p >= 0.0) || !std::isfinite(eps_p)) throw ConfigError("perturbation size must be >= 0");
    DynamicalSystem s;
    s.kind_ = SpaceKind::torus;
    s.eps_ = eps_p;
    s.seed_ = seed;
    s.field_ = TrigField::from_seed(seed);
    if (eps_p == 0.0) {
      s.id_ = "cat";
      s.lambda_u_ = std::log(kLambdaU);
      s.lambda_s_ = std::log(kLambdaS);
    } else {
      std::ostringstream os;
      os << "pcat:" << eps_p << ":" << seed;
      s.id_ = os.str();
      const auto& M = torus_metric();
      double dev = eps_p * M.inverse_basis().norm_inf() * s.field_.jacobian_bound() * M.basis().norm_inf();
      if (dev >= kLambdaU - 1.0 || kLambdaS + dev >= 1.0)
        throw ConfigError("perturbation too large for a hyperbolicity estimate");
      s.lambda_u_ = std::log(kLambdaU - dev);
      s.lambda_s_ = std::log(kLambdaS + dev);
    }
    s.c_lambda_ = 1.0;
    return s;
  }

  static DynamicalSystem golden_mean_shift(int depth) {
    if (depth < 2) throw ConfigError("shift depth must be >= 2");
    if (depth > 24) throw ConfigError("shift depth must be <= 24");
    DynamicalSystem s;
    s.kind_ = SpaceKind::shift;
    s.depth_ = depth;
    s.id_ = "gms:" + std::to_string(depth);
    s.lambda_u_ = std::log(2.0);
    s.lambda_s_ = -std::log(2.0);
    s.c_lambda_ = 1.0;
    return s;
  }

  // "cat", "pcat:<eps>:<seed>", "gms:<depth>".
  static DynamicalSystem parse(const std::string& id) {
    auto parts = split(id, ':');
    try {
      if (parts.size() == 1 && parts[0] == "cat") return cat_map();
      if (parts.size() == 3 && parts[0] == "pcat")
        return perturbed_cat_map(std::stod(parts[1]), std::stoull(parts[2]));
      if (parts.size() == 2 && parts[0] == "gms") return golden_mean_shift(std::stoi(parts[1]));
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("malformed system id: " + id);
    }
    throw ConfigError("unknown system id: " + id);
  }

  SpaceKind kind() const { return kind_; }
  bool is_torus() const { return kind_ == SpaceKind::torus; }
  bool is_linear() const { return is_torus() && eps_ == 0.0; }
  const std::string& id() const { return id_; }
  double perturbation() const { return eps_; }
  const TrigField& field() const { return field_; }
  int depth() const { return depth_; }
  double lambda_u() const { return lambda_u_; }
  double lambda_s() const { return lambda_s_; }
  double c_lambda() const { return c_lambda_; }
  int unstable_dim() const { return is_torus() ? 1 : 0; }
  int stable_dim() const { return is_torus() ? 1 : 0; }

  // Torus map without reduction modulo 1 (integer matrix, periodic field).
  Vec2 lift(const Vec2& p) const {
    Vec2 r = kCatMatrix * p;
    if (eps_ != 0.0) r += field_(p) * eps_;
    return r;
  }
  Vec2 map(const Vec2& p) const { return wrap(lift(p)); }

  Mat2 jacobian(const Vec2& p) const {
    if (eps_ == 0.0) return kCatMatrix;
    Mat2 g = field_.jacobian(p);
    return {2.0 + eps_ * g.a, 1.0 + eps_ * g.b, 1.0 + eps_ * g.c, 1.0 + eps_ * g.d};
  }

  // Newton solve of f(y) = p modulo 1, started from the linear preimage.
  Vec2 inverse(const Vec2& p) const {
    Vec2 y = kCatMatrix.inverse() * p;
    if (eps_ == 0.0) return wrap(y);
    for (int it = 0; it < 50; ++it) {
      Vec2 r = centered(lift(y) - p);
      Vec2 step = jacobian(y).inverse() * r;
      y = y - step;
      if (sup_norm(step) < 1e-16) break;
    }
    return wrap(y);
  }

  // Drops the head symbol; the vacated last slot receives 0.
  Word shift(const Word& w) const { return {w.bits >> 1, w.depth}; }

  PhasePoint map(const PhasePoint& p) const {
    if (auto t = std::get_if<Vec2>(&p)) return map(*t);
    return shift(std::get<Word>(p));
  }

  double distance(const Vec2& a, const Vec2& b) const { return torus_metric().distance(a, b); }
  double distance(const Word& a, const Word& b) const { return word_distance(a, b); }
  double distance(const PhasePoint& a, const PhasePoint& b) const {
    if (a.index() != b.index()) throw std::invalid_argument("points from different phase spaces");
    if (auto t = std::get_if<Vec2>(&a)) return distance(*t, std::get<Vec2>(b));
    return distance(std::get<Word>(a), std::get<Word>(b));
  }

  double diameter() const { return is_torus() ? torus_metric().covering_radius() : 1.0; }

  // All admissible words, ordered by integer value of the bit pattern.
  std::vector<Word> words() const {
    std::vector<Word> out;
    for (std::uint32_t b = 0; b < (1u << depth_); ++b)
      if ((b & (b >> 1)) == 0) out.push_back({b, depth_});
    return out;
  }

  PhasePoint origin() const {
    if (is_torus()) return Vec2{0.0, 0.0};
    return Word{0, depth_};
  }

  template <class Rng>
  PhasePoint sample(Rng& rng) const {
    if (is_torus()) {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      double x = u(rng);
      return Vec2{x, u(rng)};
    }
    // Uniform over admissible words is unnecessary; a Markov draw suffices.
    Word w{0, depth_};
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < depth_; ++i)
      if ((i == 0 || !w.symbol(i - 1)) && coin(rng)) w.bits |= 1u << i;
    return w;
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == sep) {
        out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  }

 private:
  SpaceKind kind_ = SpaceKind::torus;
  std::string id_;
  double eps_ = 0.0;
  std::uint64_t seed_ = 0;
  TrigField field_;
  int depth_ = 0;
  double lambda_u_ = 0, lambda_s_ = 0, c_lambda_ = 1;
};

struct Observable {
  std::string name;
  double lip = 0.0;
  std::function<double(const PhasePoint&)> eval;
  // Set for edge costs: weights of the transitions 00, 01, 10.
  bool locally_constant = false;
  std::array<double, 3> edge{};

  double operator()(const PhasePoint& p) const { return eval(p); }
};

inline double edge_weight(const std::array<double, 3>& w, int a, int b) {
  if (a == 0) return b == 0 ? w[0] : w[1];
  return w[2];
}

// Catalogue:
//   zero, const:<c>                     any space
//   coscos   1 - cos(2 pi x1)           torus, Lip 2 pi
//   cos1     cos(2 pi x1)               torus, Lip 2 pi
//   dist2fix d(x, 0)                    any space, Lip 1
//   antifix  diam - d(x, 0)             any space, Lip 1
//   edgecost:default | edgecost:w00,w01,w10     shift
inline Observable make_observable(const std::string& name, const DynamicalSystem& sys) {
  Observable o;
  o.name = name;
  auto torus_only = [&] {
    if (!sys.is_torus()) throw ConfigError("observable " + name + " needs a torus system");
  };
  if (name == "zero") {
    o.eval = [](const PhasePoint&) { return 0.0; };
    o.lip = 0.0;
  } else if (name.rfind("const:", 0) == 0) {
    double c;
    try {
      c = std::stod(name.substr(6));
    } catch (const std::logic_error&) {
      throw ConfigError("malformed constant observable: " + name);
    }
    o.eval = [c](const PhasePoint&) { return c; };
  } else if (name == "coscos") {
    torus_only();
    o.eval = [](const PhasePoint& p) { return 1.0 - std::cos(kTwoPi * std::get<Vec2>(p).x); };
    o.lip = kTwoPi;
  } else if (name == "cos1") {
    torus_only();
    o.eval = [](const PhasePoint& p) { return std::cos(kTwoPi * std::get<Vec2>(p).x); };
    o.lip = kTwoPi;
  } else if (name == "dist2fix" || name == "antifix") {
    PhasePoint zero = sys.origin();
    double shift = name == "antifix" ? sys.diameter() : 0.0;
    double sign = name == "antifix" ? -1.0 : 1.0;
    o.eval = [sys, zero, shift, sign](const PhasePoint& p) { return shift + sign * sys.distance(p, zero); };
    o.lip = 1.0;
  } else if (name.rfind("edgecost:", 0) == 0) {
    if (sys.is_torus()) throw ConfigError("edgecost needs a shift system");
    std::string table = name.substr(9);
    std::array<double, 3> w{1.0, 0.0, 0.0};
    if (table != "default") {
      auto parts = DynamicalSystem::split(table, ',');
      if (parts.size() != 3) throw ConfigError("edgecost table needs three weights w00,w01,w10");
      try {
        for (int i = 0; i < 3; ++i) w[i] = std::stod(parts[i]);
      } catch (const std::logic_error&) {
        throw ConfigError("malformed edgecost table: " + table);
      }
    }
    o.locally_constant = true;
    o.edge = w;
    o.eval = [w](const PhasePoint& p) {
      const Word& x = std::get<Word>(p);
      return edge_weight(w, x.symbol(0), x.symbol(1));
    };
    // Words differing first at index 1 are 1/2 apart and share symbol 0.
    o.lip = std::max({2.0 * std::fabs(w[0] - w[1]), std::fabs(w[0] - w[2]), std::fabs(w[1] - w[2])});
  } else {
    throw ConfigError("unknown observable: " + name);
  }
  return o;
}

}  // namespace subaction
