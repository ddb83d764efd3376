#pragma once

// a + b e1 + c e2 + d e1 e2 with e1^2 = e2^2 = 0: exact first and mixed second
// derivatives through any composition of the supported functions.

#include <cmath>

namespace nhflow {

struct HyperDual {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;

  HyperDual() = default;
  HyperDual(double v) : a(v) {}  // NOLINT(google-explicit-constructor)
  HyperDual(double a_, double b_, double c_, double d_) : a(a_), b(b_), c(c_), d(d_) {}

  static HyperDual variable(double v, bool first, bool second) {
    return {v, first ? 1.0 : 0.0, second ? 1.0 : 0.0, 0.0};
  }
};

// f(a), f'(a), f''(a) lifted onto a hyper-dual argument.
inline HyperDual lift(const HyperDual& x, double f0, double f1, double f2) {
  return {f0, f1 * x.b, f1 * x.c, f1 * x.d + f2 * x.b * x.c};
}

inline HyperDual operator+(const HyperDual& x, const HyperDual& y) { return {x.a + y.a, x.b + y.b, x.c + y.c, x.d + y.d}; }
inline HyperDual operator-(const HyperDual& x, const HyperDual& y) { return {x.a - y.a, x.b - y.b, x.c - y.c, x.d - y.d}; }
inline HyperDual operator-(const HyperDual& x) { return {-x.a, -x.b, -x.c, -x.d}; }
inline HyperDual operator*(const HyperDual& x, const HyperDual& y) {
  return {x.a * y.a, x.a * y.b + x.b * y.a, x.a * y.c + x.c * y.a, x.a * y.d + x.b * y.c + x.c * y.b + x.d * y.a};
}
inline HyperDual operator/(const HyperDual& x, const HyperDual& y) {
  const double r = 1.0 / y.a;
  return x * lift(y, r, -r * r, 2.0 * r * r * r);
}

inline HyperDual sin(const HyperDual& x) { return lift(x, std::sin(x.a), std::cos(x.a), -std::sin(x.a)); }
inline HyperDual cos(const HyperDual& x) { return lift(x, std::cos(x.a), -std::sin(x.a), -std::cos(x.a)); }
inline HyperDual exp(const HyperDual& x) {
  const double e = std::exp(x.a);
  return lift(x, e, e, e);
}
inline HyperDual log(const HyperDual& x) { return lift(x, std::log(x.a), 1.0 / x.a, -1.0 / (x.a * x.a)); }
inline HyperDual sqrt(const HyperDual& x) {
  const double s = std::sqrt(x.a);
  return lift(x, s, 0.5 / s, -0.25 / (s * x.a));
}
inline HyperDual atan(const HyperDual& x) {
  const double q = 1.0 / (1.0 + x.a * x.a);
  return lift(x, std::atan(x.a), q, -2.0 * x.a * q * q);
}
inline HyperDual abs(const HyperDual& x) { return x.a < 0.0 ? -x : x; }
// Real exponent y.a; exponent derivatives are carried through exp(y log x) when y varies.
inline HyperDual pow(const HyperDual& x, const HyperDual& y) {
  if (y.b == 0.0 && y.c == 0.0 && y.d == 0.0) {
    const double p = y.a;
    if (p == 0.0) return HyperDual(1.0);
    if (p == 1.0) return x;
    if (p == 2.0) return x * x;
    return lift(x, std::pow(x.a, p), p * std::pow(x.a, p - 1.0), p * (p - 1.0) * std::pow(x.a, p - 2.0));
  }
  return exp(y * log(x));
}

}  // namespace nhflow
