#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace subaction {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2&) const = default;
};

inline double sup_norm(const Vec2& v) { return std::max(std::fabs(v.x), std::fabs(v.y)); }

// Row-major 2x2 matrix [[a, b], [c, d]].
struct Mat2 {
  double a = 1.0, b = 0.0, c = 0.0, d = 1.0;

  Vec2 operator*(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
  Mat2 operator*(const Mat2& m) const {
    return {a * m.a + b * m.c, a * m.b + b * m.d, c * m.a + d * m.c, c * m.b + d * m.d};
  }
  Mat2 operator-(const Mat2& m) const { return {a - m.a, b - m.b, c - m.c, d - m.d}; }
  double det() const { return a * d - b * c; }
  Mat2 inverse() const {
    double k = 1.0 / det();
    return {d * k, -b * k, -c * k, a * k};
  }
  // Operator norm induced by the sup norm: max absolute row sum.
  double norm_inf() const {
    return std::max(std::fabs(a) + std::fabs(b), std::fabs(c) + std::fabs(d));
  }
  static Mat2 columns(const Vec2& c0, const Vec2& c1) { return {c0.x, c1.x, c0.y, c1.y}; }
};

// Bad user input: unknown identifiers, out-of-range parameters.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A hyperbolicity inequality failed on a sampled transition.
struct InfeasibleConstants : std::runtime_error {
  std::string inequality;
  double margin;
  InfeasibleConstants(std::string which, double m)
      : std::runtime_error("infeasible constants: " + which + " violated, margin " +
                           std::to_string(m)),
        inequality(std::move(which)),
        margin(m) {}
};

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline unsigned& thread_cap() {
  static unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  return cap;
}

// Static block partition of [0, n) over at most thread_cap() workers.
// fn(begin, end, worker) must only write to disjoint state.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t, unsigned)>& fn) {
  unsigned workers = std::min<std::size_t>(thread_cap(), std::max<std::size_t>(1, n / 4096));
  if (workers <= 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(fn, lo, hi, w);
  }
  for (auto& t : pool) t.join();
}

inline unsigned worker_count(std::size_t n) {
  return std::min<std::size_t>(thread_cap(), std::max<std::size_t>(1, n / 4096));
}

}  // namespace subaction
