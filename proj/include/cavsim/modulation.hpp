#pragma once

#include <complex>
#include <cstdint>
#include <utility>
#include <vector>

#include "cavsim/response.hpp"

namespace cavsim {

struct ModulationConfig {
  double nu_m = 120.0;  // MHz
  double beta_o = 0.0;
  double phi = 0.0;  // rad
  void validate() const;
};

struct EffectiveTwoLevel {
  double Omega = 1630.0;
  double nu0 = 0.0;
  double gamma_s = 9.0;
  double gamma_d = 6.0;

  static EffectiveTwoLevel from_rates(double Omega, double nu0, double kappa, double gamma);
  double kappa() const { return gamma_s + gamma_d; }
  double gamma() const { return gamma_s - gamma_d; }
  void validate() const;
};

/// Bessel function of the first kind of integer order.
double bessel_j(int n, double x);
/// Smallest n_max with sum_{|n| > n_max} J_n(x)^2 < tail.
int bessel_cutoff(double x, double tail = 1e-6);

/// Sum of unit-peak Lorentzian teeth weighted by J_n^2(beta_o / 2) on both
/// polariton combs. Polariton cross terms are dropped.
SpectrumTrace comb_spectrum(const std::vector<double>& grid, const EffectiveTwoLevel& eff,
                            const ModulationConfig& mod, int extra_terms = 0);
/// Phase-coherent form with the explicit phi dependence, unit maximum.
SpectrumTrace interference_spectrum(const std::vector<double>& grid, const EffectiveTwoLevel& eff,
                                    const ModulationConfig& mod);
/// Exact phase average of the coherent form: sum_n J_n^2 |a_n - b_n|^2,
/// scaled by gamma_s^2 so isolated teeth peak near J_n^2.
SpectrumTrace diagonal_spectrum(const std::vector<double>& grid, const EffectiveTwoLevel& eff,
                                const ModulationConfig& mod);
/// Four-line form for a modulation at twice the collective coupling, unit
/// maximum.
SpectrumTrace resonant_spectrum(const std::vector<double>& grid, const EffectiveTwoLevel& eff,
                                const ModulationConfig& mod);

struct PolaritonPopulations {
  std::vector<double> t;
  std::vector<double> plus;
  std::vector<double> minus;
};
/// Closed rotating-wave populations for nu_m = 2 Omega, starting in |1,G>.
PolaritonPopulations resonant_populations(const std::vector<double>& t_us, const EffectiveTwoLevel& eff,
                                          const ModulationConfig& mod);

struct TimeTrace {
  std::vector<double> t;  // us
  std::vector<std::complex<double>> cg;
  std::vector<std::complex<double>> ce;
  std::vector<std::complex<double>> b_plus;  // slowly varying polariton amplitudes
  std::vector<std::complex<double>> b_minus;
  long steps = 0;
  long rejected = 0;

  double pop_g(std::size_t i) const { return std::norm(cg[i]); }
  double pop_e(std::size_t i) const { return std::norm(ce[i]); }
  double pop_plus(std::size_t i) const;
  double pop_minus(std::size_t i) const;
};

/// Adaptive Dormand-Prince 5(4) integration of the modulated two-polariton
/// equations, sampled at t_out (sorted, starting at or after 0).
TimeTrace integrate_effective_dynamics(const EffectiveTwoLevel& eff, const ModulationConfig& mod,
                                       std::complex<double> cg0, std::complex<double> ce0,
                                       const std::vector<double>& t_out, double tolerance = 1e-10);

/// Undriven unmodulated closed form: |c_e|^2 = sin^2(2 pi Omega t) e^{-4 pi gamma_s t}.
double decoupled_excited_population(const EffectiveTwoLevel& eff, double t_us);

struct SweptProbeConfig {
  double drive_photons = 0.001;  // empty-cavity steady photon number on resonance
  double sweep_rate = 1.0;      // MHz per us
  double bin = 2.5;             // MHz
  double warmup_us = 1.0;
  double max_phase_step = 0.5;  // rad per step at the fastest frequency
};

struct SweptSpectrum {
  SpectrumTrace trace;
  double max_photons = 0;
  bool strong_drive = false;
  long steps = 0;
};

using Segment = std::pair<double, double>;

/// Probe windows of half width `halfwidth` around the teeth |n| <= n_max of
/// the selected combs (+1 upper, -1 lower, 0 both), snapped to the bin grid
/// and merged where they overlap.
std::vector<Segment> comb_windows(const EffectiveTwoLevel& eff, const ModulationConfig& mod, int n_max,
                                  double halfwidth, int combs, double bin = 2.5);

/// Driven three-state Lindblad evolution under a linear probe sweep across
/// the given segments. Output: binned population of |1,G>.
SweptSpectrum swept_probe_spectrum(const EffectiveTwoLevel& eff, const ModulationConfig& mod,
                                   const SweptProbeConfig& cfg, const std::vector<Segment>& segments);

struct CombFitOptions {
  int combs = 0;  // +1 upper only, -1 lower only, 0 both
  int n_teeth = 4;
  double gamma_s0 = 9.0;
  double nu0 = 0.0;  // fixed when a single comb is fitted
  bool fit_sigma = true;
  // A single-comb fit still models the far tails of the opposite comb,
  // which shares every parameter.
  bool mirror_tails = true;
  int max_iterations = 300;
};

struct CombFit {
  double beta_p = 0;
  double beta_p_stderr = 0;  // from the fit covariance
  double Omega = 0;
  double nu0 = 0;
  double gamma_s = 0;
  double sigma = 0;
  double amplitude = 0;
  std::vector<double> teeth;  // fitted peak heights, n = -n_teeth..n_teeth, per comb
  double residual_norm = 0;
  int iterations = 0;
  bool converged = false;
};

CombFit fit_comb(const SpectrumTrace& trace, double nu_m, const CombFitOptions& opt = {});

/// Inverse of J_1^2 / J_0^2 on its first branch.
double beta_from_tooth_ratio(double ratio);

/// Integer-bin cross-correlation alignment of each shot to the running
/// average. Shots must share one uniform grid.
struct Alignment {
  std::vector<SpectrumTrace> shots;
  std::vector<int> shifts;
};
Alignment align_shots(const std::vector<SpectrumTrace>& shots, int max_shift_bins);

SpectrumTrace average_traces(const std::vector<SpectrumTrace>& shots, const std::vector<std::size_t>* pick = nullptr);

struct BootstrapResult {
  double stderr_ = 0;
  double mean = 0;
  std::vector<double> samples;
  std::size_t failures = 0;
};
/// Shot-level nonparametric bootstrap of the fitted beta_p.
BootstrapResult bootstrap_beta_uncertainty(const std::vector<SpectrumTrace>& shots, double nu_m,
                                           const CombFitOptions& opt, std::size_t n_resamples,
                                           std::uint64_t seed, int threads = 0);

struct LineFit {
  double slope = 0, slope_stderr = 0;
  double intercept = 0, intercept_stderr = 0;
  double chi2 = 0;
};
/// Weighted straight-line fit; zero or missing errors fall back to
/// unweighted least squares with residual-based errors.
LineFit weighted_line_fit(const std::vector<double>& x, const std::vector<double>& y,
                          const std::vector<double>& sy);

struct TransferConfig {
  enum class Pipeline { Analytic, Noisy };
  Pipeline pipeline = Pipeline::Analytic;
  EffectiveTwoLevel eff = EffectiveTwoLevel::from_rates(2020.0, 0.0, 15.0, 3.0);
  double nu_m = 130.0;
  double phi = 0.0;
  bool swept_template = true;  // noisy pipeline: template from the swept probe
  SweptProbeConfig swept;
  int template_teeth = 3;
  double template_margin = 40.0;
  std::size_t shots = 100;
  double counts_per_shot = 2000.0;
  double omega_jitter = 20.0;  // MHz standard deviation
  int max_shift_bins = 40;
  std::size_t bootstrap = 500;
  std::uint64_t seed = 0;
  int threads = 0;
};

struct TransferPoint {
  double beta_o = 0;
  double beta_p = 0;
  double stderr_ = 0;
  double Omega = 0;
};

struct TransferResult {
  std::vector<TransferPoint> points;
  LineFit line;
};

TransferResult modulation_transfer(const std::vector<double>& beta_grid, const TransferConfig& cfg);

double beta_from_intensity(double mean_lightshift, double nu_m, double I0, double dI_max);

}  // namespace cavsim
