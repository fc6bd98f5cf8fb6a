#include "cavsim/lineshape.hpp"

#include <cmath>
#include <numbers>

#include "cavsim/error.hpp"

namespace cavsim {

// Algorithm of Poppe and Wijers (ACM TOMS 680).
std::complex<double> faddeeva(std::complex<double> z) {
  constexpr double factor = 1.12837916709551257388;  // 2 / sqrt(pi)
  constexpr double rmaxreal = 0.5e154;
  const double xi = z.real(), yi = z.imag();
  const double xabs = std::abs(xi), yabs = std::abs(yi);
  if (xabs > rmaxreal || yabs > rmaxreal) fail(ErrorCode::InvalidArgument, "faddeeva argument overflows");
  const double x = xabs / 6.3, y = yabs / 4.4;
  double qrho = x * x + y * y;
  const double xabsq = xabs * xabs;
  double xquad = xabsq - yabs * yabs;
  const double yquad = 2.0 * xabs * yabs;
  const bool a = qrho < 0.085264;
  double u = 0, v = 0, u2 = 0, v2 = 0;

  if (a) {
    // Power series around the origin.
    qrho = (1.0 - 0.85 * y) * std::sqrt(qrho);
    const int n = static_cast<int>(std::lround(6.0 + 72.0 * qrho));
    int j = 2 * n + 1;
    double xsum = 1.0 / j, ysum = 0.0;
    for (int i = n; i >= 1; --i) {
      j -= 2;
      const double xaux = (xsum * xquad - ysum * yquad) / i;
      ysum = (xsum * yquad + ysum * xquad) / i;
      xsum = xaux + 1.0 / j;
    }
    const double u1 = -factor * (xsum * yabs + ysum * xabs) + 1.0;
    const double v1 = factor * (xsum * xabs - ysum * yabs);
    const double daux = std::exp(-xquad);
    u2 = daux * std::cos(yquad);
    v2 = -daux * std::sin(yquad);
    u = u1 * u2 - v1 * v2;
    v = u1 * v2 + v1 * u2;
  } else {
    // Laplace continued fraction, optionally accelerated by a truncated
    // Taylor expansion.
    double h = 0, h2 = 0, qlambda = 0;
    int kapn = 0, nu = 0;
    if (qrho > 1.0) {
      qrho = std::sqrt(qrho);
      nu = static_cast<int>(3.0 + 1442.0 / (26.0 * qrho + 77.0));
    } else {
      qrho = (1.0 - y) * std::sqrt(1.0 - qrho);
      h = 1.88 * qrho;
      h2 = 2.0 * h;
      kapn = static_cast<int>(std::lround(7.0 + 34.0 * qrho));
      nu = static_cast<int>(std::lround(16.0 + 26.0 * qrho));
    }
    const bool b = h > 0.0;
    if (b) qlambda = std::pow(h2, kapn);
    double rx = 0, ry = 0, sx = 0, sy = 0;
    for (int n = nu; n >= 0; --n) {
      const double np1 = n + 1.0;
      double tx = yabs + h + np1 * rx;
      double ty = xabs - np1 * ry;
      const double c = 0.5 / (tx * tx + ty * ty);
      rx = c * tx;
      ry = c * ty;
      if (b && n <= kapn) {
        tx = qlambda + sx;
        sx = rx * tx - ry * sy;
        sy = ry * tx + rx * sy;
        qlambda /= h2;
      }
    }
    if (h == 0.0) {
      u = factor * rx;
      v = factor * ry;
    } else {
      u = factor * sx;
      v = factor * sy;
    }
    if (yabs == 0.0) u = std::exp(-xabs * xabs);
  }

  if (yi < 0) {
    // Reflection into the lower half-plane: w(z) = 2 exp(-z^2) - w(-z).
    if (a) {
      u2 *= 2.0;
      v2 *= 2.0;
    } else {
      xquad = -xquad;
      const double w1 = 2.0 * std::exp(xquad);
      u2 = w1 * std::cos(yquad);
      v2 = -w1 * std::sin(yquad);
    }
    u = u2 - u;
    v = v2 - v;
    if (xi > 0) v = -v;
  } else {
    if (xi < 0) v = -v;
  }
  return {u, v};
}

double lorentzian(double x, double hwhm) { return hwhm / (std::numbers::pi * (x * x + hwhm * hwhm)); }

double voigt_profile(double nu, double center, double gamma_s, double sigma) {
  return voigt_with_gradient(nu - center, gamma_s, sigma).value;
}

VoigtGrad voigt_with_gradient(double x, double gamma_s, double sigma) {
  if (gamma_s < 0 || sigma < 0) fail(ErrorCode::InvalidArgument, "Voigt widths must be non-negative");
  if (gamma_s == 0 && sigma == 0) fail(ErrorCode::InvalidArgument, "Voigt profile needs a nonzero width");
  VoigtGrad g;
  const double pi = std::numbers::pi;
  if (sigma == 0) {
    const double d = x * x + gamma_s * gamma_s;
    g.value = gamma_s / (pi * d);
    g.d_x = -2.0 * x * gamma_s / (pi * d * d);
    g.d_gamma = (x * x - gamma_s * gamma_s) / (pi * d * d);
    g.d_sigma = 0.0;  // one-sided limit is not used by the fitter
    return g;
  }
  const double s2 = std::sqrt(2.0) * sigma;
  const std::complex<double> z(x / s2, gamma_s / s2);
  const std::complex<double> w = faddeeva(z);
  // w'(z) = -2 z w + 2i / sqrt(pi)
  const std::complex<double> dw = -2.0 * z * w + std::complex<double>(0.0, 2.0 / std::sqrt(pi));
  const double norm = 1.0 / (std::sqrt(2.0 * pi) * sigma);
  g.value = norm * w.real();
  g.d_x = norm * dw.real() / s2;
  g.d_gamma = norm * (dw * std::complex<double>(0.0, 1.0)).real() / s2;
  // z scales as 1/sigma, and so does the prefactor.
  g.d_sigma = -g.value / sigma + norm * (dw * (-z / sigma)).real();
  return g;
}

double voigt_hwhm(double gamma_s, double sigma) {
  if (gamma_s < 0 || sigma < 0 || (gamma_s == 0 && sigma == 0))
    fail(ErrorCode::InvalidArgument, "Voigt widths must be non-negative and not both zero");
  if (sigma == 0) return gamma_s;
  if (gamma_s == 0) return sigma * std::sqrt(2.0 * std::log(2.0));
  const double peak = voigt_profile(0.0, 0.0, gamma_s, sigma);
  double lo = 0.0, hi = gamma_s + 2.0 * sigma * std::sqrt(2.0 * std::log(2.0));
  while (voigt_profile(hi, 0.0, gamma_s, sigma) > 0.5 * peak) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (voigt_profile(mid, 0.0, gamma_s, sigma) > 0.5 * peak)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace cavsim
