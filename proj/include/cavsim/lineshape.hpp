#pragma once

#include <complex>

namespace cavsim {

/// Faddeeva function w(z) = exp(-z^2) erfc(-i z), valid on the whole plane.
std::complex<double> faddeeva(std::complex<double> z);

/// Normalized Lorentzian with half width hwhm.
double lorentzian(double x, double hwhm);

/// Normalized Voigt profile; sigma = 0 reduces to a Lorentzian and gamma = 0
/// to a Gaussian. Both zero throws.
double voigt_profile(double nu, double center, double gamma_s, double sigma);

/// Derivatives of the unit-area Voigt with respect to (x, gamma_s, sigma).
struct VoigtGrad {
  double value = 0;
  double d_x = 0;
  double d_gamma = 0;
  double d_sigma = 0;
};
VoigtGrad voigt_with_gradient(double x, double gamma_s, double sigma);

/// Half width at half maximum of the Voigt peak, solved numerically.
double voigt_hwhm(double gamma_s, double sigma);

}  // namespace cavsim
