#pragma once

#include <cstdint>
#include <vector>

#include "cavsim/atomic.hpp"

namespace cavsim {

namespace phys {
constexpr double kB = 1.380649e-23;          // J/K
constexpr double amu = 1.66053906660e-27;    // kg
constexpr double kB_over_h_MHz_per_uK = 0.0208366191;
constexpr double rb87_mass_amu = 86.909180527;
}  // namespace phys

struct TrapGeometry {
  double lambda_trap_um = 1.559;
  double lambda_probe_um = 0.780;
  double waist_trap_um = 8.0;
  double waist_probe_um = 8.0 * 0.7073;  // replaced by with_default_probe_waist()
  double depth_uK = 1400.0;
  double mass_kg = phys::rb87_mass_amu * phys::amu;
  double g0_MHz = 76.0;

  /// Defaults with the probe waist scaled from the trap waist by
  /// sqrt(lambda_probe / lambda_trap).
  static TrapGeometry standard(double depth_uK);
  void validate() const;
  double depth_MHz() const { return depth_uK * phys::kB_over_h_MHz_per_uK; }
};

struct TrapFrequencies {
  double x_kHz = 0;
  double y_kHz = 0;
  double z_kHz = 0;
};

TrapFrequencies trap_frequencies(const TrapGeometry& geometry);

struct Position {
  double x = 0, y = 0, z = 0;  // um
};

struct ThermalSample {
  std::vector<Position> positions;
  double temperature_uK = 0;
  std::uint64_t seed = 0;
};

/// Harmonic position spread per axis (um).
Position thermal_sigma(const TrapGeometry& geometry, double T_uK);

/// Atom k draws from the counter stream (seed, k), so samples are prefixes
/// of each other and independent of threading.
ThermalSample sample_positions(const TrapGeometry& geometry, double T_uK, std::size_t N, std::uint64_t seed);

/// Signed mode amplitude g0 cos(2 pi z / lambda_p) exp(-r^2 / w_p^2).
double local_probe_coupling(const Position& p, const TrapGeometry& geometry);
/// cos^2(2 pi z / lambda_t) exp(-2 r^2 / w_t^2).
double local_trap_intensity(const Position& p, const TrapGeometry& geometry);

struct DisorderRealization {
  std::size_t atoms = 0;
  int lines_per_atom = 16;
  std::vector<double> nu;  // MHz, atom-major
  std::vector<double> g;   // MHz, non-negative
  double Omega = 0;
  double nu_bar = 0;
  TrapGeometry geometry;
  double temperature_uK = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return nu.size(); }
  /// Recomputes Omega and nu_bar from the line list.
  void refresh();
};

/// Merges two realizations; Omega^2 adds.
DisorderRealization merge(const DisorderRealization& a, const DisorderRealization& b);

DisorderRealization build_realization(const ThermalSample& sample, const TrapGeometry& geometry,
                                      const StarkModel& model, int threads = 0);
DisorderRealization build_realization(std::size_t N, const TrapGeometry& geometry, double T_uK,
                                      const StarkModel& model, std::uint64_t seed, int threads = 0);

/// Loss-spectroscopy lines for x-polarized trap light: every dressed level
/// of every atom paired with each ground sublevel mF (equal populations),
/// stored with g^2 = c_{k,j}(mF) / 5 so spectral_distribution weights by the
/// probe coupling.
DisorderRealization loss_lines(const ThermalSample& sample, const TrapGeometry& geometry, const StarkModel& model,
                               const SphericalField& probe, int threads = 0);

/// Root sum of squared local couplings of a sample, which equals Omega of
/// the realization built from it.
double collective_coupling(const ThermalSample& sample, const TrapGeometry& geometry);

struct SpectralDistribution {
  std::vector<double> edges;
  std::vector<double> weights;
  double total = 0;
  double mean = 0;
  double fwhm = 0;     // of the dominant lobe
  double support = 0;  // spread of lines with non-negligible weight
  double peak = 0;     // center of the tallest bin
  int lobes = 0;
};

/// Lines with g^2 below support_threshold * max(g^2) are ignored for the
/// support figure only.
SpectralDistribution spectral_distribution(const std::vector<const DisorderRealization*>& sources, double bin_MHz,
                                           double support_threshold = 1e-12);
SpectralDistribution spectral_distribution(const DisorderRealization& r, double bin_MHz,
                                           double support_threshold = 1e-12);

/// Number of separated maxima of a weight histogram, counting those at
/// least min_fraction of the global maximum whose prominence is at least
/// min_prominence of their height.
int count_lobes(const std::vector<double>& weights, double min_fraction, double min_prominence = 0.25);

/// Single-line emitters: Lorentzian frequencies truncated at 20 HWHM and
/// couplings from the spatial mode model.
DisorderRealization lorentzian_surrogate(double mean_MHz, double hwhm_MHz, std::size_t N,
                                         const TrapGeometry& geometry, double T_uK, std::uint64_t seed);

}  // namespace cavsim
