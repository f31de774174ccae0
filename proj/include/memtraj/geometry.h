#pragma once

#include <cmath>
#include <vector>

namespace memtraj {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) { return a.x == b.x && a.y == b.y; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
};

inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline double squared_norm(Vec2 a) { return a.x * a.x + a.y * a.y; }

/// Ordered sequence of positions, one per time step.
using Trajectory = std::vector<Vec2>;

/// Row-major flattening: (x0, y0, x1, y1, ...).
inline std::vector<double> flatten(const Trajectory& t) {
  std::vector<double> out;
  out.reserve(2 * t.size());
  for (const auto& p : t) {
    out.push_back(p.x);
    out.push_back(p.y);
  }
  return out;
}

}  // namespace memtraj
