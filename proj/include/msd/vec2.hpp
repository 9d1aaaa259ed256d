#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>

namespace msd {

/// Point or vector in the plane.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  constexpr Vec2& operator*=(double s) {
    x *= s;
    y *= s;
    return *this;
  }
  constexpr Vec2& operator/=(double s) {
    x /= s;
    y /= s;
    return *this;
  }
  friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
constexpr Vec2 operator-(const Vec2& a) { return {-a.x, -a.y}; }
constexpr Vec2 operator*(Vec2 a, double s) { return a *= s; }
constexpr Vec2 operator*(double s, Vec2 a) { return a *= s; }
constexpr Vec2 operator/(Vec2 a, double s) { return a /= s; }

constexpr double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
constexpr double norm2(const Vec2& a) { return dot(a, a); }
inline double norm(const Vec2& a) { return std::hypot(a.x, a.y); }
inline bool is_finite(const Vec2& a) { return std::isfinite(a.x) && std::isfinite(a.y); }

/// Cosine of the angle between two vectors; 0 when either is zero.
inline double cosine(const Vec2& a, const Vec2& b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

inline std::ostream& operator<<(std::ostream& os, const Vec2& v) {
  return os << '(' << v.x << ", " << v.y << ')';
}

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Sym2 {
  double xx = 1.0;
  double xy = 0.0;
  double yy = 1.0;

  static constexpr Sym2 identity(double s = 1.0) { return {s, 0.0, s}; }

  constexpr double det() const { return xx * yy - xy * xy; }
  constexpr double trace() const { return xx + yy; }
  constexpr Sym2 inverse() const {
    const double d = det();
    return {yy / d, -xy / d, xx / d};
  }
  constexpr Vec2 apply(const Vec2& v) const { return {xx * v.x + xy * v.y, xy * v.x + yy * v.y}; }
  constexpr double quad(const Vec2& v) const { return dot(v, apply(v)); }

  /// Eigenvalues in ascending order.
  void eigenvalues(double& lo, double& hi) const {
    const double half_tr = 0.5 * trace();
    const double disc = std::sqrt(std::max(0.0, half_tr * half_tr - det()));
    lo = half_tr - disc;
    hi = half_tr + disc;
  }

  friend constexpr bool operator==(const Sym2&, const Sym2&) = default;
};

constexpr Sym2 operator+(const Sym2& a, const Sym2& b) { return {a.xx + b.xx, a.xy + b.xy, a.yy + b.yy}; }
constexpr Sym2 operator*(double s, const Sym2& a) { return {s * a.xx, s * a.xy, s * a.yy}; }

/// Covariance with standard deviation `along` in direction `angle` and `across` orthogonal to it.
inline Sym2 oriented_covariance(double angle, double along, double across) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double a2 = along * along;
  const double b2 = across * across;
  return {a2 * c * c + b2 * s * s, (a2 - b2) * c * s, a2 * s * s + b2 * c * c};
}

}  // namespace msd
