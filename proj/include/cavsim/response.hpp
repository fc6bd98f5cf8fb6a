#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "cavsim/ensemble.hpp"

namespace cavsim {

struct TransmissionModel {
  double nu_c = 0;
  double kappa = 15.0;  // HWHM
  double gamma = 3.0;   // HWHM
  std::vector<double> nu;
  std::vector<double> g2;

  static TransmissionModel from_realization(const DisorderRealization& r, double nu_c, double kappa, double gamma);
  /// N identical resonant emitters sharing the collective coupling Omega.
  static TransmissionModel homogeneous(double Omega, std::size_t N, double nu0, double nu_c, double kappa,
                                       double gamma);
  void validate() const;
};

std::complex<double> transmission_amplitude(double nu, const TransmissionModel& model);

struct SpectrumTrace {
  std::vector<double> nu;
  std::vector<double> value;
  double nu_c = std::numeric_limits<double>::quiet_NaN();
};

std::vector<double> uniform_grid(double lo, double hi, double step);
/// Default grid: step 2.5 MHz over nu_c +- (Omega + 1 GHz).
std::vector<double> default_grid(double nu_c, double Omega, double step = 2.5);

SpectrumTrace spectrum_trace(const TransmissionModel& model, const std::vector<double>& grid);

struct EnsembleSpec {
  TrapGeometry geometry = TrapGeometry::standard(1400.0);
  double temperature_uK = 190.0;
  double mean_atoms = 775.0;
  bool poisson_atoms = true;
};

struct AveragingSpec {
  EnsembleSpec ensemble;
  double nu_c = 0;
  double kappa = 15.0;
  double gamma = 3.0;
  std::size_t target_shots = 100;  // accepted shots to average
  std::size_t max_draws = 2000;
  double omega_center = std::numeric_limits<double>::quiet_NaN();  // NaN disables the bin
  double omega_bin = 40.0;                                         // full width
  /// Estimator of the measured coupling of one shot from its trace and a
  /// per-shot seed. When set, the bin selects on it instead of the exact
  /// Omega, and every draw pays for its spectrum.
  std::function<double(const SpectrumTrace&, std::uint64_t)> measured_omega;
};

struct AveragedSpectrum {
  SpectrumTrace trace;
  std::size_t accepted = 0;
  std::size_t drawn = 0;
  std::vector<double> omegas;  // Omega of the accepted shots
  std::vector<SpectrumTrace> shots;
};

/// Shot s uses atom-number stream (seed, "atoms") index s, position stream
/// derive_seed(seed, "shot/<s>") and estimator seed derive_seed(seed,
/// "measure/<s>"); output is thread-count independent.
AveragedSpectrum averaged_spectrum(const AveragingSpec& spec, const std::vector<double>& grid,
                                   const StarkModel& model, std::uint64_t seed, int threads = 0,
                                   bool keep_shots = false);

struct VoigtFit {
  double center = 0;
  double gamma_s = 0;
  double sigma = 0;
  double amplitude = 0;
  double delta_omega = 0;  // HWHM of the fitted peak
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();  // (amplitude, center, gamma_s, sigma)
  double chi2 = 0;
  bool converged = false;
};

struct DoubletFit {
  VoigtFit low;
  VoigtFit high;
  double Omega = 0;
};

/// Fits a single Voigt peak inside [lo, hi] starting from the given guess.
VoigtFit fit_voigt_peak(const SpectrumTrace& trace, double lo, double hi, double center0, double hwhm0,
                        double amp_scale);

/// The trace is split at nu_c when known, otherwise at the midpoint between
/// the two tallest separated maxima.
DoubletFit fit_doublet(const SpectrumTrace& trace);

double protection_figure(double Delta_omega, double delta_omega);

struct CavityTuning {
  double nu_c = 0;
  double slope = 0;
  double intercept = 0;
  double nu_c_stderr = 0;
  std::vector<double> detunings;
  std::vector<double> midpoints;
};

/// Scans nu_c around a guess, fits the doublet midpoint linearly against
/// nu_c and returns the fixed point midpoint(nu_c) = nu_c.
CavityTuning tune_cavity_to_mean(const AveragingSpec& spec, const StarkModel& model, std::uint64_t seed,
                                 double guess, double span = 200.0, int points = 5, int threads = 0);

/// Local maxima of a trace above min_rel of its maximum, sorted by height.
std::vector<std::size_t> trace_maxima(const SpectrumTrace& trace, double min_rel);

}  // namespace cavsim
