#include "cavsim/angular.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "cavsim/error.hpp"

namespace cavsim {

namespace {

constexpr int kMaxFactorial = 200;

const std::array<long double, kMaxFactorial + 1>& factorials() {
  static const auto table = [] {
    std::array<long double, kMaxFactorial + 1> t{};
    t[0] = 1.0L;
    for (int i = 1; i <= kMaxFactorial; ++i) t[i] = t[i - 1] * static_cast<long double>(i);
    return t;
  }();
  return table;
}

// n! for a doubled argument that is known to be even.
long double fact2(int two_n) {
  const int n = two_n / 2;
  if (n < 0 || n > kMaxFactorial) fail(ErrorCode::InvalidArgument, "factorial argument out of range");
  return factorials()[n];
}

bool is_even(int v) { return (v & 1) == 0; }

long double triangle_coefficient(int a, int b, int c) {
  return fact2(a + b - c) * fact2(a - b + c) * fact2(-a + b + c) / fact2(a + b + c + 2);
}

}  // namespace

int twice(double half_integer) {
  const double t = 2.0 * half_integer;
  const double r = std::round(t);
  if (!std::isfinite(t) || std::abs(t - r) > 1e-9) {
    std::ostringstream msg;
    msg << "value " << half_integer << " is not a multiple of 1/2";
    fail(ErrorCode::InvalidArgument, msg.str());
  }
  return static_cast<int>(r);
}

bool triangle_ok(int a, int b, int c) {
  return c >= std::abs(a - b) && c <= a + b && is_even(a + b + c);
}

void AngularState::validate() const {
  const int tj = twice(J), ti = twice(I), tf = twice(F), tm = twice(mF);
  if (tj < 0 || ti < 0 || tf < 0) fail(ErrorCode::InvalidArgument, "angular momenta must be non-negative");
  if (!triangle_ok(tj, ti, tf)) fail(ErrorCode::InvalidArgument, "F is not reachable from J and I");
  if (std::abs(tm) > tf || !is_even(tf + tm)) fail(ErrorCode::InvalidArgument, "|mF| must not exceed F");
}

double wigner_3j_2(int j1, int j2, int j3, int m1, int m2, int m3) {
  if (j1 < 0 || j2 < 0 || j3 < 0) fail(ErrorCode::InvalidArgument, "negative angular momentum");
  if (m1 + m2 + m3 != 0) return 0.0;
  if (!triangle_ok(j1, j2, j3)) return 0.0;
  if (std::abs(m1) > j1 || std::abs(m2) > j2 || std::abs(m3) > j3) return 0.0;
  if (!is_even(j1 + m1) || !is_even(j2 + m2) || !is_even(j3 + m3)) return 0.0;

  // Racah's closed form; every argument below is a doubled integer.
  const long double pre = std::sqrt(triangle_coefficient(j1, j2, j3) * fact2(j1 + m1) * fact2(j1 - m1) *
                                    fact2(j2 + m2) * fact2(j2 - m2) * fact2(j3 + m3) * fact2(j3 - m3));
  const int kmin = std::max({0, j2 - j3 - m1, j1 - j3 + m2});
  const int kmax = std::min({j1 + j2 - j3, j1 - m1, j2 + m2});
  long double sum = 0.0L;
  for (int k = kmin; k <= kmax; k += 2) {
    const long double den = fact2(k) * fact2(j3 - j2 + k + m1) * fact2(j3 - j1 + k - m2) * fact2(j1 + j2 - j3 - k) *
                            fact2(j1 - k - m1) * fact2(j2 - k + m2);
    sum += ((k / 2) % 2 == 0 ? 1.0L : -1.0L) / den;
  }
  const int phase = (j1 - j2 - m3) / 2;
  const long double sign = (phase % 2 == 0) ? 1.0L : -1.0L;
  return static_cast<double>(sign * pre * sum);
}

double wigner_6j_2(int j1, int j2, int j3, int j4, int j5, int j6) {
  if (j1 < 0 || j2 < 0 || j3 < 0 || j4 < 0 || j5 < 0 || j6 < 0)
    fail(ErrorCode::InvalidArgument, "negative angular momentum");
  if (!triangle_ok(j1, j2, j3) || !triangle_ok(j1, j5, j6) || !triangle_ok(j4, j2, j6) || !triangle_ok(j4, j5, j3))
    return 0.0;

  const long double pre = std::sqrt(triangle_coefficient(j1, j2, j3) * triangle_coefficient(j1, j5, j6) *
                                    triangle_coefficient(j4, j2, j6) * triangle_coefficient(j4, j5, j3));
  const int a1 = j1 + j2 + j3, a2 = j1 + j5 + j6, a3 = j4 + j2 + j6, a4 = j4 + j5 + j3;
  const int b1 = j1 + j2 + j4 + j5, b2 = j2 + j3 + j5 + j6, b3 = j3 + j1 + j6 + j4;
  const int tmin = std::max({a1, a2, a3, a4});
  const int tmax = std::min({b1, b2, b3});
  long double sum = 0.0L;
  for (int t = tmin; t <= tmax; t += 2) {
    const long double den = fact2(t - a1) * fact2(t - a2) * fact2(t - a3) * fact2(t - a4) * fact2(b1 - t) *
                            fact2(b2 - t) * fact2(b3 - t);
    sum += ((t / 2) % 2 == 0 ? 1.0L : -1.0L) * fact2(t + 2) / den;
  }
  return static_cast<double>(pre * sum);
}

double wigner_3j(double j1, double j2, double j3, double m1, double m2, double m3) {
  return wigner_3j_2(twice(j1), twice(j2), twice(j3), twice(m1), twice(m2), twice(m3));
}

double wigner_6j(double j1, double j2, double j3, double j4, double j5, double j6) {
  return wigner_6j_2(twice(j1), twice(j2), twice(j3), twice(j4), twice(j5), twice(j6));
}

double clebsch_gordan(double j1, double m1, double j2, double m2, double J, double M) {
  const int tj1 = twice(j1), tm1 = twice(m1), tj2 = twice(j2), tm2 = twice(m2), tJ = twice(J), tM = twice(M);
  const int phase = (tj1 - tj2 + tM) / 2;
  const double sign = (phase % 2 == 0) ? 1.0 : -1.0;
  return sign * std::sqrt(static_cast<double>(tJ + 1)) * wigner_3j_2(tj1, tj2, tJ, tm1, tm2, -tM);
}

}  // namespace cavsim
