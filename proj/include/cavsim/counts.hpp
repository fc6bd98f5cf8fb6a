#pragma once

#include <cstdint>
#include <vector>

#include "cavsim/response.hpp"

namespace cavsim {

struct CountSpectrum {
  std::vector<double> nu;
  std::vector<std::uint64_t> counts;
  double nu_c = 0;
  std::uint64_t seed = 0;

  std::uint64_t total() const;
};

/// Independent Poisson draws with means proportional to the trace, scaled so
/// the expected total equals expected_total.
CountSpectrum simulate_count_spectrum(const SpectrumTrace& trace, double expected_total, std::uint64_t seed);

struct Barycenters {
  double Omega = 0;  // half the distance between the two barycenters
  double plus = 0;
  double minus = 0;
};

/// Bins at or above nu_c belong to the upper half.
Barycenters measured_collective_coupling(const CountSpectrum& c, double nu_c);

/// Twice the pooled standard deviation of the count-weighted frequencies
/// about each half's barycenter, averaged over both halves.
double window_width_calibration(const std::vector<CountSpectrum>& shots, double nu_c);

struct FoutResult {
  double Omega = 0;
  double plus = 0;
  double minus = 0;
  double window = 0;
  double f_out = 0;
  double f_out_plus = 0;
  double f_out_minus = 0;
  std::uint64_t total = 0;
};

FoutResult f_out(const CountSpectrum& c, double nu_c, double window);

struct CurvePoint {
  double center = 0;
  double mean = 0;
  double stderr_ = 0;
  std::size_t n = 0;
};

/// Bins (x, y) pairs in x with the given width; bin k covers
/// [k w, (k+1) w). Empty bins are omitted.
std::vector<CurvePoint> binned_curve(const std::vector<double>& x, const std::vector<double>& y, double width);

/// F_out curve: shots binned by collective coupling.
inline std::vector<CurvePoint> fout_curve(const std::vector<double>& Omega, const std::vector<double>& fout,
                                          double width = 30.0) {
  return binned_curve(Omega, fout, width);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cavsim
