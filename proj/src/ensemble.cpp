#include "cavsim/ensemble.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <numbers>

#include "cavsim/error.hpp"
#include "cavsim/parallel.hpp"
#include "cavsim/rng.hpp"

#include <Eigen/Eigenvalues>

namespace cavsim {

namespace {

std::atomic<int> g_threads{0};

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double angular_radial(const TrapGeometry& g) {
  const double U = g.depth_uK * 1e-6 * phys::kB;
  const double w = g.waist_trap_um * 1e-6;
  return std::sqrt(4.0 * U / (g.mass_kg * w * w));
}

double angular_axial(const TrapGeometry& g) {
  const double U = g.depth_uK * 1e-6 * phys::kB;
  return kTwoPi / (g.lambda_trap_um * 1e-6) * std::sqrt(2.0 * U / g.mass_kg);
}

double sigma_um(double T_uK, double mass, double omega) {
  if (T_uK == 0.0) return 0.0;
  if (omega <= 0.0) fail(ErrorCode::InvalidArgument, "atoms at finite temperature need a finite trap depth");
  return std::sqrt(phys::kB * T_uK * 1e-6 / (mass * omega * omega)) * 1e6;
}

Position draw_position(Stream& s, const Position& sig) {
  Position p;
  p.x = sig.x * s.normal();
  p.y = sig.y * s.normal();
  p.z = sig.z * s.normal();
  return p;
}

}  // namespace

int default_threads() {
  const int n = g_threads.load();
  if (n > 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_default_threads(int n) { g_threads.store(n < 0 ? 0 : n); }

TrapGeometry TrapGeometry::standard(double depth_uK) {
  TrapGeometry g;
  g.depth_uK = depth_uK;
  g.waist_probe_um = g.waist_trap_um * std::sqrt(g.lambda_probe_um / g.lambda_trap_um);
  return g;
}

void TrapGeometry::validate() const {
  auto pos = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) fail(ErrorCode::InvalidArgument, std::string(name) + " must be positive");
  };
  pos(lambda_trap_um, "lambda_trap");
  pos(lambda_probe_um, "lambda_probe");
  pos(waist_trap_um, "waist_trap");
  pos(waist_probe_um, "waist_probe");
  pos(mass_kg, "mass");
  if (!(depth_uK >= 0)) fail(ErrorCode::InvalidArgument, "trap depth must be non-negative");
  if (!(g0_MHz >= 0)) fail(ErrorCode::InvalidArgument, "g0 must be non-negative");
}

TrapFrequencies trap_frequencies(const TrapGeometry& geometry) {
  geometry.validate();
  TrapFrequencies f;
  f.x_kHz = angular_radial(geometry) / kTwoPi * 1e-3;
  f.y_kHz = f.x_kHz;
  f.z_kHz = angular_axial(geometry) / kTwoPi * 1e-3;
  return f;
}

Position thermal_sigma(const TrapGeometry& geometry, double T_uK) {
  if (!(T_uK >= 0)) fail(ErrorCode::InvalidArgument, "temperature must be non-negative");
  const double wr = angular_radial(geometry), wz = angular_axial(geometry);
  return {sigma_um(T_uK, geometry.mass_kg, wr), sigma_um(T_uK, geometry.mass_kg, wr),
          sigma_um(T_uK, geometry.mass_kg, wz)};
}

ThermalSample sample_positions(const TrapGeometry& geometry, double T_uK, std::size_t N, std::uint64_t seed) {
  geometry.validate();
  const Position sig = thermal_sigma(geometry, T_uK);
  ThermalSample s;
  s.temperature_uK = T_uK;
  s.seed = seed;
  s.positions.resize(N);
  for (std::size_t k = 0; k < N; ++k) {
    Stream st(seed, k);
    s.positions[k] = draw_position(st, sig);
  }
  return s;
}

double local_probe_coupling(const Position& p, const TrapGeometry& g) {
  const double r2 = p.x * p.x + p.y * p.y;
  return g.g0_MHz * std::cos(kTwoPi * p.z / g.lambda_probe_um) * std::exp(-r2 / (g.waist_probe_um * g.waist_probe_um));
}

double local_trap_intensity(const Position& p, const TrapGeometry& g) {
  const double r2 = p.x * p.x + p.y * p.y;
  const double c = std::cos(kTwoPi * p.z / g.lambda_trap_um);
  return c * c * std::exp(-2.0 * r2 / (g.waist_trap_um * g.waist_trap_um));
}

void DisorderRealization::refresh() {
  double s2 = 0, s2nu = 0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const double w = g[i] * g[i];
    s2 += w;
    s2nu += w * nu[i];
  }
  Omega = std::sqrt(s2);
  nu_bar = s2 > 0 ? s2nu / s2 : 0.0;
}

DisorderRealization merge(const DisorderRealization& a, const DisorderRealization& b) {
  DisorderRealization m = a;
  m.atoms = a.atoms + b.atoms;
  if (a.lines_per_atom != b.lines_per_atom) m.lines_per_atom = 0;
  m.nu.insert(m.nu.end(), b.nu.begin(), b.nu.end());
  m.g.insert(m.g.end(), b.g.begin(), b.g.end());
  m.refresh();
  return m;
}

double collective_coupling(const ThermalSample& sample, const TrapGeometry& geometry) {
  double s = 0;
  for (const auto& p : sample.positions) {
    const double g = local_probe_coupling(p, geometry);
    s += g * g;
  }
  return std::sqrt(s);
}

DisorderRealization build_realization(const ThermalSample& sample, const TrapGeometry& geometry,
                                      const StarkModel& model, int threads) {
  geometry.validate();
  const std::size_t N = sample.positions.size();
  DisorderRealization r;
  r.atoms = N;
  r.lines_per_atom = 16;
  r.nu.resize(16 * N);
  r.g.resize(16 * N);
  r.geometry = geometry;
  r.temperature_uK = sample.temperature_uK;
  r.seed = sample.seed;
  const double U = geometry.depth_MHz();
  parallel_for(N, N < 256 ? 1 : threads, [&](std::size_t k) {
    const Position& p = sample.positions[k];
    const double depth = U * local_trap_intensity(p, geometry);
    const double gl = std::abs(local_probe_coupling(p, geometry));
    double w33[16];
    dress_x_polarized(model, depth, &r.nu[16 * k], w33);
    for (int j = 0; j < 16; ++j) r.g[16 * k + j] = gl * std::sqrt(w33[j]);
  });
  r.refresh();
  return r;
}

DisorderRealization build_realization(std::size_t N, const TrapGeometry& geometry, double T_uK,
                                      const StarkModel& model, std::uint64_t seed, int threads) {
  return build_realization(sample_positions(geometry, T_uK, N, seed), geometry, model, threads);
}

DisorderRealization loss_lines(const ThermalSample& sample, const TrapGeometry& geometry, const StarkModel& model,
                               const SphericalField& probe, int threads) {
  geometry.validate();
  const std::size_t N = sample.positions.size();
  std::array<Vec16, 5> cols;
  for (int mF = -2; mF <= 2; ++mF) cols[mF + 2] = probe_column(mF, probe, model.data());
  DisorderRealization r;
  r.atoms = N;
  r.lines_per_atom = 80;
  r.nu.resize(80 * N);
  r.g.resize(80 * N);
  r.geometry = geometry;
  r.temperature_uK = sample.temperature_uK;
  r.seed = sample.seed;
  const double U = geometry.depth_MHz();
  const auto& X = model.x_unit();
  const auto& h = model.hyperfine();
  parallel_for(N, N < 256 ? 1 : threads, [&](std::size_t k) {
    const double depth = U * local_trap_intensity(sample.positions[k], geometry);
    Eigen::Matrix<double, 16, 16> H = depth * X;
    H.diagonal() += h;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 16, 16>> es(H);
    for (int m = 0; m < 5; ++m)
      for (int j = 0; j < 16; ++j) {
        const std::size_t i = 80 * k + 16 * static_cast<std::size_t>(m) + static_cast<std::size_t>(j);
        r.nu[i] = es.eigenvalues()(j) + depth;
        const cplx a = es.eigenvectors().col(j).cast<cplx>().dot(cols[m]);
        r.g[i] = std::abs(a) / std::sqrt(5.0);
      }
  });
  r.refresh();
  return r;
}

int count_lobes(const std::vector<double>& w, double min_fraction, double min_prominence) {
  if (w.empty()) return 0;
  const double wmax = *std::max_element(w.begin(), w.end());
  if (!(wmax > 0)) return 0;
  const std::size_t n = w.size();
  int count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double h = w[i];
    if (h < min_fraction * wmax) continue;
    if (i > 0 && w[i - 1] > h) continue;
    if (i + 1 < n && w[i + 1] >= h) continue;
    // Prominence: depth of the deepest valley towards the nearest higher bin.
    double left_min = h, right_min = h;
    bool left_higher = false, right_higher = false;
    for (std::size_t j = i; j-- > 0;) {
      if (w[j] > h) {
        left_higher = true;
        break;
      }
      left_min = std::min(left_min, w[j]);
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      if (w[j] > h) {
        right_higher = true;
        break;
      }
      right_min = std::min(right_min, w[j]);
    }
    double base;
    if (left_higher && right_higher)
      base = std::max(left_min, right_min);
    else if (left_higher)
      base = left_min;
    else if (right_higher)
      base = right_min;
    else
      base = 0.0;
    if (h - base >= min_prominence * h) ++count;
  }
  return count;
}

SpectralDistribution spectral_distribution(const std::vector<const DisorderRealization*>& sources, double bin,
                                           double support_threshold) {
  if (!(bin > 0)) fail(ErrorCode::InvalidArgument, "bin width must be positive");
  double lo = INFINITY, hi = -INFINITY, gmax2 = 0;
  std::size_t lines = 0;
  for (const auto* r : sources) {
    for (std::size_t i = 0; i < r->size(); ++i) {
      lo = std::min(lo, r->nu[i]);
      hi = std::max(hi, r->nu[i]);
      gmax2 = std::max(gmax2, r->g[i] * r->g[i]);
    }
    lines += r->size();
  }
  if (lines == 0) fail(ErrorCode::InvalidArgument, "spectral distribution of an empty realization");
  SpectralDistribution d;
  const double start = std::floor(lo / bin) * bin;
  const std::size_t nb = static_cast<std::size_t>(std::floor((hi - start) / bin)) + 1;
  d.edges.resize(nb + 1);
  for (std::size_t b = 0; b <= nb; ++b) d.edges[b] = start + bin * static_cast<double>(b);
  d.weights.assign(nb, 0.0);
  double s2nu = 0, slo = INFINITY, shi = -INFINITY;
  for (const auto* r : sources) {
    for (std::size_t i = 0; i < r->size(); ++i) {
      const double w = r->g[i] * r->g[i];
      std::size_t b = static_cast<std::size_t>(std::floor((r->nu[i] - start) / bin));
      b = std::min(b, nb - 1);
      d.weights[b] += w;
      d.total += w;
      s2nu += w * r->nu[i];
      if (w > support_threshold * gmax2 && w > 0) {
        slo = std::min(slo, r->nu[i]);
        shi = std::max(shi, r->nu[i]);
      }
    }
  }
  d.mean = d.total > 0 ? s2nu / d.total : 0.0;
  d.support = shi >= slo ? shi - slo : 0.0;
  const auto it = std::max_element(d.weights.begin(), d.weights.end());
  const std::size_t k = static_cast<std::size_t>(it - d.weights.begin());
  d.peak = 0.5 * (d.edges[k] + d.edges[k + 1]);
  const double half = 0.5 * *it;
  // Half-maximum crossings with linear interpolation between bin centers.
  auto center = [&](std::size_t b) { return 0.5 * (d.edges[b] + d.edges[b + 1]); };
  double left = d.edges[0], right = d.edges[nb];
  for (std::size_t b = k; b > 0; --b) {
    if (d.weights[b - 1] < half) {
      const double f = (half - d.weights[b - 1]) / (d.weights[b] - d.weights[b - 1]);
      left = center(b - 1) + f * bin;
      break;
    }
  }
  for (std::size_t b = k; b + 1 < nb; ++b) {
    if (d.weights[b + 1] < half) {
      const double f = (d.weights[b] - half) / (d.weights[b] - d.weights[b + 1]);
      right = center(b) + f * bin;
      break;
    }
  }
  if (nb == 1) left = right = d.peak;
  d.fwhm = right - left;
  d.lobes = count_lobes(d.weights, 0.02, 0.25);
  return d;
}

SpectralDistribution spectral_distribution(const DisorderRealization& r, double bin, double support_threshold) {
  return spectral_distribution(std::vector<const DisorderRealization*>{&r}, bin, support_threshold);
}

DisorderRealization lorentzian_surrogate(double mean, double hwhm, std::size_t N, const TrapGeometry& geometry,
                                         double T_uK, std::uint64_t seed) {
  if (!(hwhm >= 0)) fail(ErrorCode::InvalidArgument, "HWHM must be non-negative");
  geometry.validate();
  const Position sig = thermal_sigma(geometry, T_uK);
  const double umax = std::atan(20.0);
  DisorderRealization r;
  r.atoms = N;
  r.lines_per_atom = 1;
  r.nu.resize(N);
  r.g.resize(N);
  r.geometry = geometry;
  r.temperature_uK = T_uK;
  r.seed = seed;
  for (std::size_t k = 0; k < N; ++k) {
    Stream st(seed, k);
    const Position p = draw_position(st, sig);
    const double u = st.uniform(-umax, umax);
    r.nu[k] = mean + hwhm * std::tan(u);
    r.g[k] = std::abs(local_probe_coupling(p, geometry));
  }
  r.refresh();
  return r;
}

}  // namespace cavsim
