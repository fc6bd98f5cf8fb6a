#include "cavsim/response.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cavsim/error.hpp"
#include "cavsim/lineshape.hpp"
#include "cavsim/lsq.hpp"
#include "cavsim/parallel.hpp"
#include "cavsim/rng.hpp"

namespace cavsim {

TransmissionModel TransmissionModel::from_realization(const DisorderRealization& r, double nu_c, double kappa,
                                                      double gamma) {
  TransmissionModel m;
  m.nu_c = nu_c;
  m.kappa = kappa;
  m.gamma = gamma;
  m.nu.reserve(r.size());
  m.g2.reserve(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r.g[i] == 0.0) continue;
    m.nu.push_back(r.nu[i]);
    m.g2.push_back(r.g[i] * r.g[i]);
  }
  return m;
}

TransmissionModel TransmissionModel::homogeneous(double Omega, std::size_t N, double nu0, double nu_c, double kappa,
                                                 double gamma) {
  TransmissionModel m;
  m.nu_c = nu_c;
  m.kappa = kappa;
  m.gamma = gamma;
  if (N > 0) {
    m.nu.assign(N, nu0);
    m.g2.assign(N, Omega * Omega / static_cast<double>(N));
  }
  return m;
}

void TransmissionModel::validate() const {
  if (!(kappa > 0) || !(gamma > 0)) fail(ErrorCode::InvalidArgument, "kappa and gamma must be positive");
  if (nu.size() != g2.size()) fail(ErrorCode::InvalidArgument, "line frequency and coupling counts differ");
}

std::complex<double> transmission_amplitude(double nu, const TransmissionModel& m) {
  using C = std::complex<double>;
  C sum = 0.0;
  for (std::size_t i = 0; i < m.nu.size(); ++i) sum += m.g2[i] / C(m.nu[i] - nu, -m.gamma);
  return C(0.0, m.kappa) / (C(m.nu_c - nu, -m.kappa) - sum);
}

std::vector<double> uniform_grid(double lo, double hi, double step) {
  if (!(step > 0) || !(hi >= lo)) fail(ErrorCode::InvalidArgument, "invalid grid bounds");
  const std::size_t n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + step * static_cast<double>(i);
  return g;
}

std::vector<double> default_grid(double nu_c, double Omega, double step) {
  const double half = std::ceil((Omega + 1000.0) / step) * step;
  return uniform_grid(nu_c - half, nu_c + half, step);
}

SpectrumTrace spectrum_trace(const TransmissionModel& model, const std::vector<double>& grid) {
  model.validate();
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) fail(ErrorCode::InvalidArgument, "grid must be strictly increasing");
  SpectrumTrace t;
  t.nu = grid;
  t.nu_c = model.nu_c;
  t.value.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) t.value[i] = std::min(1.0, std::norm(transmission_amplitude(grid[i], model)));
  return t;
}

AveragedSpectrum averaged_spectrum(const AveragingSpec& spec, const std::vector<double>& grid,
                                   const StarkModel& model, std::uint64_t seed, int threads, bool keep_shots) {
  if (spec.target_shots < 1) fail(ErrorCode::InvalidArgument, "at least one shot is required");
  const EnsembleSpec& ens = spec.ensemble;
  const bool binned = std::isfinite(spec.omega_center);
  Stream atoms_stream(derive_seed(seed, "atoms"), 0);

  auto draw = [&](std::size_t s) {
    const std::size_t N = ens.poisson_atoms ? static_cast<std::size_t>(atoms_stream.poisson(ens.mean_atoms))
                                            : static_cast<std::size_t>(std::llround(ens.mean_atoms));
    return sample_positions(ens.geometry, ens.temperature_uK, N, derive_seed(seed, "shot/" + std::to_string(s)));
  };
  auto in_bin = [&](double Om) { return !binned || std::abs(Om - spec.omega_center) <= 0.5 * spec.omega_bin; };
  auto trace_of = [&](const ThermalSample& smp) {
    const DisorderRealization r = build_realization(smp, ens.geometry, model, 1);
    return spectrum_trace(TransmissionModel::from_realization(r, spec.nu_c, spec.kappa, spec.gamma), grid);
  };

  AveragedSpectrum out;
  std::vector<SpectrumTrace> traces;
  std::size_t s = 0;
  if (binned && spec.measured_omega) {
    // Every draw needs its spectrum; draws are processed in fixed batches
    // and accepted in draw order, so the result is thread-count independent.
    const std::size_t batch = 32;
    while (s < spec.max_draws && traces.size() < spec.target_shots) {
      const std::size_t n = std::min(batch, spec.max_draws - s);
      std::vector<ThermalSample> smp;
      for (std::size_t k = 0; k < n; ++k) smp.push_back(draw(s + k));
      std::vector<SpectrumTrace> tr(n);
      std::vector<double> om(n);
      parallel_for(n, threads, [&](std::size_t k) {
        tr[k] = trace_of(smp[k]);
        om[k] = spec.measured_omega(tr[k], derive_seed(seed, "measure/" + std::to_string(s + k)));
      });
      for (std::size_t k = 0; k < n && traces.size() < spec.target_shots; ++k) {
        ++s;
        if (!in_bin(om[k])) continue;
        out.omegas.push_back(collective_coupling(smp[k], ens.geometry));
        traces.push_back(std::move(tr[k]));
      }
    }
  } else {
    // Omega follows from the local couplings, so rejected shots never pay
    // for the Stark diagonalization.
    std::vector<ThermalSample> accepted;
    for (; s < spec.max_draws && accepted.size() < spec.target_shots; ++s) {
      ThermalSample smp = draw(s);
      const double Om = collective_coupling(smp, ens.geometry);
      if (!in_bin(Om)) continue;
      out.omegas.push_back(Om);
      accepted.push_back(std::move(smp));
    }
    traces.resize(accepted.size());
    parallel_for(accepted.size(), threads, [&](std::size_t k) { traces[k] = trace_of(accepted[k]); });
  }
  out.drawn = s;
  out.accepted = traces.size();
  if (traces.empty()) fail(ErrorCode::EmptyBin, "no shot fell inside the requested Omega bin after " +
                                                    std::to_string(s) + " draws");

  out.trace.nu = grid;
  out.trace.nu_c = spec.nu_c;
  out.trace.value.assign(grid.size(), 0.0);
  for (const auto& t : traces)
    for (std::size_t i = 0; i < grid.size(); ++i) out.trace.value[i] += t.value[i];
  for (auto& v : out.trace.value) v /= static_cast<double>(traces.size());
  if (keep_shots) out.shots = std::move(traces);
  return out;
}

std::vector<std::size_t> trace_maxima(const SpectrumTrace& t, double min_rel) {
  std::vector<std::size_t> idx;
  if (t.value.empty()) return idx;
  const double vmax = *std::max_element(t.value.begin(), t.value.end());
  for (std::size_t i = 0; i < t.value.size(); ++i) {
    const double v = t.value[i];
    if (v < min_rel * vmax || v <= 0) continue;
    if (i > 0 && t.value[i - 1] > v) continue;
    if (i + 1 < t.value.size() && t.value[i + 1] >= v) continue;
    idx.push_back(i);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return t.value[a] > t.value[b]; });
  return idx;
}

namespace {

// Half width from half-maximum crossings around index k, bounded by [lo, hi).
double crossing_hwhm(const SpectrumTrace& t, std::size_t k, std::size_t lo, std::size_t hi) {
  const double half = 0.5 * t.value[k];
  double left = t.nu[lo], right = t.nu[hi - 1];
  for (std::size_t i = k; i > lo; --i) {
    if (t.value[i - 1] < half) {
      const double f = (t.value[i] - half) / (t.value[i] - t.value[i - 1]);
      left = t.nu[i] - f * (t.nu[i] - t.nu[i - 1]);
      break;
    }
  }
  for (std::size_t i = k; i + 1 < hi; ++i) {
    if (t.value[i + 1] < half) {
      const double f = (t.value[i] - half) / (t.value[i] - t.value[i + 1]);
      right = t.nu[i] + f * (t.nu[i + 1] - t.nu[i]);
      break;
    }
  }
  return 0.5 * (right - left);
}

}  // namespace

VoigtFit fit_voigt_peak(const SpectrumTrace& trace, double lo, double hi, double center0, double hwhm0,
                        double amp_scale) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < trace.nu.size(); ++i)
    if (trace.nu[i] >= lo && trace.nu[i] <= hi) {
      x.push_back(trace.nu[i]);
      y.push_back(trace.value[i]);
    }
  if (x.size() < 6) fail(ErrorCode::InsufficientData, "too few points in the fit window");
  const std::size_t n = x.size();
  const double scale = amp_scale > 0 ? amp_scale : 1.0;
  ResidualFn fn = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    r.resize(static_cast<Eigen::Index>(n));
    if (J) J->resize(static_cast<Eigen::Index>(n), 4);
    for (std::size_t i = 0; i < n; ++i) {
      const VoigtGrad v = voigt_with_gradient(x[i] - p(1), p(2), p(3));
      const Eigen::Index k = static_cast<Eigen::Index>(i);
      r(k) = (p(0) * v.value - y[i]) / scale;
      if (J) {
        (*J)(k, 0) = v.value / scale;
        (*J)(k, 1) = -p(0) * v.d_x / scale;
        (*J)(k, 2) = p(0) * v.d_gamma / scale;
        (*J)(k, 3) = p(0) * v.d_sigma / scale;
      }
    }
  };
  const double peak = *std::max_element(y.begin(), y.end());
  Eigen::VectorXd p0(4), lower(4), upper(4);
  const double g0 = std::max(hwhm0 * 0.6, 1e-3);
  const double s0 = std::max(hwhm0 * 0.4, 1e-3);
  p0 << peak / voigt_profile(0.0, 0.0, g0, s0), center0, g0, s0;
  lower << 0.0, lo, 1e-6, 1e-6;
  upper << 1e12, hi, 10.0 * (hi - lo), 10.0 * (hi - lo);
  const LsqResult res = levenberg_marquardt(fn, p0, lower, upper);
  VoigtFit f;
  f.amplitude = res.params(0);
  f.center = res.params(1);
  f.gamma_s = res.params(2);
  f.sigma = res.params(3);
  f.delta_omega = voigt_hwhm(f.gamma_s, f.sigma);
  f.covariance = res.covariance * scale * scale;
  f.chi2 = res.chi2 * scale * scale;
  f.converged = res.converged;
  return f;
}

DoubletFit fit_doublet(const SpectrumTrace& t) {
  if (t.nu.size() < 12) fail(ErrorCode::InsufficientData, "trace too short for a doublet fit");
  double split;
  if (std::isfinite(t.nu_c) && t.nu_c > t.nu.front() && t.nu_c < t.nu.back()) {
    split = t.nu_c;
  } else {
    const auto m = trace_maxima(t, 0.05);
    if (m.size() < 2) fail(ErrorCode::InvalidArgument, "trace does not contain two separated maxima");
    split = 0.5 * (t.nu[m[0]] + t.nu[m[1]]);
  }
  const std::size_t mid = static_cast<std::size_t>(std::lower_bound(t.nu.begin(), t.nu.end(), split) - t.nu.begin());
  const double vmax = *std::max_element(t.value.begin(), t.value.end());
  auto half_fit = [&](std::size_t lo, std::size_t hi) {
    if (hi <= lo + 3) fail(ErrorCode::InvalidArgument, "trace half is empty");
    const auto it = std::max_element(t.value.begin() + static_cast<std::ptrdiff_t>(lo),
                                      t.value.begin() + static_cast<std::ptrdiff_t>(hi));
    const std::size_t k = static_cast<std::size_t>(it - t.value.begin());
    if (*it < 0.05 * vmax || k == lo || k + 1 == hi)
      fail(ErrorCode::InvalidArgument, "trace has a single peak; doublet fit needs two separated maxima");
    const double w = std::max(crossing_hwhm(t, k, lo, hi), 0.5 * (t.nu[1] - t.nu[0]));
    const double wlo = std::max(t.nu[k] - 5.0 * w, t.nu[lo]);
    const double whi = std::min(t.nu[k] + 5.0 * w, t.nu[hi - 1]);
    return fit_voigt_peak(t, wlo, whi, t.nu[k], w, *it);
  };
  DoubletFit d;
  d.low = half_fit(0, mid);
  d.high = half_fit(mid, t.nu.size());
  d.Omega = 0.5 * (d.high.center - d.low.center);
  return d;
}

double protection_figure(double Delta_omega, double delta_omega) {
  if (!(delta_omega > 0)) fail(ErrorCode::InvalidArgument, "polariton width must be positive");
  return 0.5 * Delta_omega / delta_omega;
}

CavityTuning tune_cavity_to_mean(const AveragingSpec& spec, const StarkModel& model, std::uint64_t seed,
                                 double guess, double span, int points, int threads) {
  if (points < 3) fail(ErrorCode::InvalidArgument, "cavity tuning needs at least three detunings");
  CavityTuning out;
  for (int i = 0; i < points; ++i) {
    AveragingSpec s = spec;
    s.nu_c = guess + span * (static_cast<double>(i) / (points - 1) - 0.5);
    const double Om = spec.ensemble.geometry.g0_MHz * 0.8 * std::sqrt(spec.ensemble.mean_atoms);
    const AveragedSpectrum avg = averaged_spectrum(s, default_grid(s.nu_c, Om), model, seed, threads);
    const DoubletFit fit = fit_doublet(avg.trace);
    out.detunings.push_back(s.nu_c);
    out.midpoints.push_back(0.5 * (fit.low.center + fit.high.center));
  }
  // Ordinary least squares midpoint = a + b nu_c.
  const double n = points;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < points; ++i) {
    sx += out.detunings[i];
    sy += out.midpoints[i];
    sxx += out.detunings[i] * out.detunings[i];
    sxy += out.detunings[i] * out.midpoints[i];
  }
  const double den = n * sxx - sx * sx;
  out.slope = (n * sxy - sx * sy) / den;
  out.intercept = (sy - out.slope * sx) / n;
  if (!std::isfinite(out.slope) || std::abs(1.0 - out.slope) < 0.05) {
    fail(ErrorCode::NoConvergence, "cavity tuning: midpoint tracks the cavity (slope " + std::to_string(out.slope) +
                                       "), no fixed point; ensemble may not be in the protected regime");
  }
  out.nu_c = out.intercept / (1.0 - out.slope);
  double rss = 0;
  for (int i = 0; i < points; ++i) {
    const double e = out.midpoints[i] - out.intercept - out.slope * out.detunings[i];
    rss += e * e;
  }
  const double s2 = points > 2 ? rss / (points - 2) : 0.0;
  const double var_b = n * s2 / den, var_a = s2 * sxx / den, cov_ab = -sx * s2 / den;
  const double da = 1.0 / (1.0 - out.slope), db = out.intercept / ((1.0 - out.slope) * (1.0 - out.slope));
  out.nu_c_stderr = std::sqrt(std::max(0.0, da * da * var_a + db * db * var_b + 2 * da * db * cov_ab));
  return out;
}

}  // namespace cavsim
