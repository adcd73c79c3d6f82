#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace aos {

/// Forward-mode scalar carrying a gradient against N seed variables.
/// Comparisons act on the value part, so branch-based code paths stay
/// consistent between plain-double and dual evaluation.
template <int N>
struct Dual {
  double v = 0.0;
  Eigen::Matrix<double, N, 1> g = Eigen::Matrix<double, N, 1>::Zero();

  Dual() = default;
  Dual(double value) : v{value} {}  // NOLINT: implicit by design

  static Dual seeded(double value, int slot) {
    Dual d{value};
    d.g[slot] = 1.0;
    return d;
  }
};

template <int N>
inline Dual<N> operator+(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r{a.v + b.v};
  r.g = a.g + b.g;
  return r;
}
template <int N>
inline Dual<N> operator-(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r{a.v - b.v};
  r.g = a.g - b.g;
  return r;
}
template <int N>
inline Dual<N> operator-(const Dual<N>& a) {
  Dual<N> r{-a.v};
  r.g = -a.g;
  return r;
}
template <int N>
inline Dual<N> operator*(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r{a.v * b.v};
  r.g = a.v * b.g + b.v * a.g;
  return r;
}
template <int N>
inline Dual<N> operator/(const Dual<N>& a, const Dual<N>& b) {
  Dual<N> r{a.v / b.v};
  r.g = (a.g - r.v * b.g) / b.v;
  return r;
}

template <int N>
inline Dual<N> operator+(const Dual<N>& a, double b) {
  Dual<N> r = a;
  r.v += b;
  return r;
}
template <int N>
inline Dual<N> operator+(double a, const Dual<N>& b) {
  return b + a;
}
template <int N>
inline Dual<N> operator-(const Dual<N>& a, double b) {
  return a + (-b);
}
template <int N>
inline Dual<N> operator-(double a, const Dual<N>& b) {
  return (-b) + a;
}
template <int N>
inline Dual<N> operator*(const Dual<N>& a, double b) {
  Dual<N> r{a.v * b};
  r.g = a.g * b;
  return r;
}
template <int N>
inline Dual<N> operator*(double a, const Dual<N>& b) {
  return b * a;
}
template <int N>
inline Dual<N> operator/(const Dual<N>& a, double b) {
  return a * (1.0 / b);
}
template <int N>
inline Dual<N> operator/(double a, const Dual<N>& b) {
  Dual<N> r{a / b.v};
  r.g = -(a / (b.v * b.v)) * b.g;
  return r;
}

template <int N>
inline bool operator<(const Dual<N>& a, const Dual<N>& b) {
  return a.v < b.v;
}
template <int N>
inline bool operator<(const Dual<N>& a, double b) {
  return a.v < b;
}
template <int N>
inline bool operator<(double a, const Dual<N>& b) {
  return a < b.v;
}
template <int N>
inline bool operator>(const Dual<N>& a, double b) {
  return a.v > b;
}

template <int N>
inline Dual<N> sqrt(const Dual<N>& a) {
  Dual<N> r{std::sqrt(a.v)};
  r.g = a.g / (2.0 * r.v);
  return r;
}
template <int N>
inline Dual<N> sin(const Dual<N>& a) {
  Dual<N> r{std::sin(a.v)};
  r.g = std::cos(a.v) * a.g;
  return r;
}
template <int N>
inline Dual<N> cos(const Dual<N>& a) {
  Dual<N> r{std::cos(a.v)};
  r.g = -std::sin(a.v) * a.g;
  return r;
}

/// Subgradient convention at zero: treated as the positive branch.
template <int N>
inline Dual<N> abs(const Dual<N>& a) {
  return a.v < 0.0 ? -a : a;
}
template <int N>
inline Dual<N> max(const Dual<N>& a, double b) {
  return a.v >= b ? a : Dual<N>{b};
}

inline double value(double x) { return x; }
template <int N>
inline double value(const Dual<N>& d) {
  return d.v;
}

}  // namespace aos
