#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "laxoleinik.hpp"
#include "orbits.hpp"
#include "shadowing.hpp"
#include "systems.hpp"

namespace subaction {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

inline json report_header(const std::string& kind) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = kind;
  return j;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open output file: " + path);
  f << text;
  if (!f) throw ConfigError("cannot write output file: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open file: " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// Round-trip precision, same text on every run.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json point_json(const PhasePoint& p) {
  if (const auto* v = std::get_if<Vec2>(&p)) return json::array({v->x, v->y});
  return std::get<Word>(p).str();
}

inline json points_json(const std::vector<PhasePoint>& ps) {
  json a = json::array();
  for (const auto& p : ps) a.push_back(point_json(p));
  return a;
}

inline json bounds_json(const std::vector<BoundCheck>& bs) {
  json a = json::array();
  for (const auto& b : bs)
    a.push_back({{"name", b.name}, {"anchor", b.anchor}, {"lhs", b.lhs}, {"rhs", b.rhs}, {"slack", b.slack()},
                 {"pass", b.pass}});
  return a;
}

inline json witness_json(const Grid& g, const WitnessPath& w) {
  json nodes = json::array(), costs = json::array();
  for (auto n : w.nodes) nodes.push_back(point_json(g.point(n)));
  for (double c : w.step_costs) costs.push_back(c);
  return {{"points", nodes}, {"step_costs", costs}, {"total", w.total}};
}

inline json ebar_json(const EbarEstimate& e) {
  json j{{"value", e.value}, {"method", e.method}, {"certificate", points_json(e.certificate)}};
  if (!e.per_period.empty()) j["per_period"] = e.per_period;
  j["orbits_found"] = e.orbits_found;
  j["orbits_skipped"] = e.orbits_skipped;
  return j;
}

// CSV with a header row; every column named.
class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : cols_(header.size()) { row(header); }
  void row(const std::vector<std::string>& cells) {
    if (cells.size() != cols_) throw std::logic_error("csv row width mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  std::string str() const { return out_.str(); }

 private:
  std::size_t cols_;
  std::ostringstream out_;
};

inline std::string grid_function_csv(const Grid& g, const GridFunction& u) {
  if (g.is_words()) {
    Csv c({"word", "value"});
    for (std::size_t i = 0; i < g.size(); ++i) c.row({std::get<Word>(g.point(i)).str(), num(u.values[i])});
    return c.str();
  }
  Csv c({"x", "y", "value"});
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec2& v = std::get<Vec2>(g.point(i));
    c.row({num(v.x), num(v.y), num(u.values[i])});
  }
  return c.str();
}

inline std::string orbits_csv(const std::vector<PeriodicOrbit>& orbits) {
  Csv c({"orbit", "period", "index", "point", "x", "y", "birkhoff_mean"});
  for (std::size_t k = 0; k < orbits.size(); ++k) {
    const auto& o = orbits[k];
    for (std::size_t i = 0; i < o.points.size(); ++i) {
      const auto& p = o.points[i];
      if (const auto* v = std::get_if<Vec2>(&p))
        c.row({std::to_string(k), std::to_string(o.period), std::to_string(i), "", num(v->x), num(v->y), num(o.mean)});
      else
        c.row({std::to_string(k), std::to_string(o.period), std::to_string(i), std::get<Word>(p).str(), "", "",
               num(o.mean)});
    }
  }
  return c.str();
}

inline std::string shadow_csv(const PseudoOrbit& po, const ShadowResult& r) {
  Csv c({"i", "x", "y", "shadow_x", "shadow_y", "delta", "dist"});
  for (std::size_t i = 0; i < r.x.size(); ++i)
    c.row({std::to_string(i), num(r.x[i].x), num(r.x[i].y), num(r.y[i].x), num(r.y[i].y), num(po.delta[i]),
           num(r.dist[i])});
  return c.str();
}

inline std::string graph_csv(const PLGraph& g) {
  Csv c({"v", "G"});
  for (int k = 0; k < g.nodes(); ++k) c.row({num(g.node(k)), num(g.values[k])});
  return c.str();
}

// Plot script for a CSV written by one of the commands above.
inline std::string gnuplot_script(const std::string& kind, const std::string& csv, const std::string& title) {
  std::ostringstream s;
  s << "set datafile separator ','\n"
    << "set key autotitle columnhead\n"
    << "set title '" << title << "'\n";
  if (kind == "solve-torus") {
    s << "set view map\nset size ratio 1\nset xlabel 'x'\nset ylabel 'y'\n"
      << "splot '" << csv << "' using 1:2:3 with points pointtype 5 pointsize 0.3 palette\n";
  } else if (kind == "solve-shift") {
    s << "set xlabel 'word index'\nset ylabel 'u'\n"
      << "plot '" << csv << "' using 0:2 with linespoints\n";
  } else if (kind == "shadow") {
    s << "set logscale y\nset xlabel 'i'\nset ylabel 'distance'\n"
      << "plot '" << csv << "' using 1:7 with linespoints title 'd(x_i, f^i(p))', '' using 1:6 with points title 'delta_i'\n";
  } else if (kind == "manifold") {
    s << "set xlabel 'v'\nset ylabel 'G(v)'\n"
      << "plot '" << csv << "' using 1:2 with lines\n";
  } else {
    s << "set xlabel 'x'\nset ylabel 'y'\n"
      << "plot '" << csv << "' using 5:6 with points pointtype 7 pointsize 0.4\n";
  }
  return s.str();
}

}  // namespace subaction
