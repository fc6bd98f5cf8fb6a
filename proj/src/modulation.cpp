#include "cavsim/modulation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cavsim/error.hpp"
#include "cavsim/lineshape.hpp"
#include "cavsim/lsq.hpp"
#include "cavsim/parallel.hpp"
#include "cavsim/rng.hpp"

namespace cavsim {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
using cplx = std::complex<double>;
constexpr cplx kI{0.0, 1.0};
}  // namespace

void ModulationConfig::validate() const {
  if (!(nu_m > 0) || !std::isfinite(nu_m)) fail(ErrorCode::InvalidArgument, "modulation frequency must be positive");
  if (!(beta_o >= 0) || !std::isfinite(beta_o)) fail(ErrorCode::InvalidArgument, "modulation index must be >= 0");
  if (!std::isfinite(phi)) fail(ErrorCode::InvalidArgument, "modulation phase must be finite");
}

EffectiveTwoLevel EffectiveTwoLevel::from_rates(double Omega, double nu0, double kappa, double gamma) {
  EffectiveTwoLevel e;
  e.Omega = Omega;
  e.nu0 = nu0;
  e.gamma_s = 0.5 * (kappa + gamma);
  e.gamma_d = 0.5 * (kappa - gamma);
  return e;
}

void EffectiveTwoLevel::validate() const {
  if (!(Omega >= 0) || !std::isfinite(Omega)) fail(ErrorCode::InvalidArgument, "Omega must be >= 0");
  if (!std::isfinite(nu0)) fail(ErrorCode::InvalidArgument, "nu0 must be finite");
  if (!(gamma_s >= std::abs(gamma_d))) fail(ErrorCode::InvalidArgument, "need gamma_s >= |gamma_d|");
}

// ---------------------------------------------------------------- Bessel

double bessel_j(int n, double x) {
  double sign = 1.0;
  if (n < 0) {
    n = -n;
    if (n % 2) sign = -sign;
  }
  if (x < 0) {
    x = -x;
    if (n % 2) sign = -sign;
  }
  if (x == 0) return n == 0 ? sign : 0.0;
  // Miller's downward recurrence normalized by J0 + 2 sum J_2k = 1.
  const double big = std::max<double>(n, x);
  int m = static_cast<int>(big + 30.0 + std::sqrt(60.0 * big));
  m += m % 2;
  double jp1 = 0.0, j = 1e-300, result = 0.0, norm = 0.0;
  for (int k = m; k >= 1; --k) {
    const double jm1 = 2.0 * k / x * j - jp1;
    jp1 = j;
    j = jm1;
    // j now holds J_{k-1}
    if (k - 1 == n) result = j;
    if ((k - 1) % 2 == 0 && k - 1 > 0) norm += 2.0 * j;
    if (std::abs(j) > 1e250) {
      j *= 1e-250;
      jp1 *= 1e-250;
      result *= 1e-250;
      norm *= 1e-250;
    }
  }
  norm += j;  // J0
  return sign * result / norm;
}

int bessel_cutoff(double x, double tail) {
  // Tail sums accumulated from far beyond the turning point |n| ~ x, where
  // the terms decay faster than geometrically; 1 - sum would stall at the
  // rounding level instead.
  const int top = static_cast<int>(std::ceil(std::abs(x))) + 60;
  std::vector<double> t(static_cast<std::size_t>(top) + 2, 0.0);
  for (int n = top; n >= 0; --n) {
    const double j = bessel_j(n + 1, x);
    t[static_cast<std::size_t>(n)] = t[static_cast<std::size_t>(n) + 1] + 2.0 * j * j;
  }
  int n = 0;
  while (n < top && t[static_cast<std::size_t>(n)] >= tail) ++n;
  return n;
}

// ---------------------------------------------------------------- spectra

namespace {

std::vector<double> bessel_table(double x, int nmax) {
  std::vector<double> J(2 * nmax + 1);
  for (int n = -nmax; n <= nmax; ++n) J[n + nmax] = bessel_j(n, x);
  return J;
}

void normalize_unit_max(SpectrumTrace& t) {
  double m = 0;
  for (double v : t.value) m = std::max(m, v);
  if (m > 0)
    for (double& v : t.value) v /= m;
}

}  // namespace

SpectrumTrace comb_spectrum(const std::vector<double>& grid, const EffectiveTwoLevel& eff,
                            const ModulationConfig& mod, int extra_terms) {
  eff.validate();
  mod.validate();
  const double beta = 0.5 * mod.beta_o;
  const int nmax = bessel_cutoff(beta, 1e-14) + extra_terms;
  const auto J = bessel_table(beta, nmax);
  const double g2 = eff.gamma_s * eff.gamma_s;
  SpectrumTrace t;
  t.nu = grid;
  t.nu_c = eff.nu0;
  t.value.assign(grid.size(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double s = 0;
    for (int n = -nmax; n <= nmax; ++n) {
      const double w = J[n + nmax] * J[n + nmax];
      const double x = grid[i] - eff.nu0 - n * mod.nu_m;
      s += w * (g2 / ((x + eff.Omega) * (x + eff.Omega) + g2) + g2 / ((x - eff.Omega) * (x - eff.Omega) + g2));
    }
    t.value[i] = s;
  }
  return t;
}

SpectrumTrace interference_spectrum(const std::vector<double>& grid, const EffectiveTwoLevel& eff,
                                    const ModulationConfig& mod) {
  eff.validate();
  mod.validate();
  const double beta = 0.5 * mod.beta_o;
  const int nmax = bessel_cutoff(beta, 1e-14);
  const auto J = bessel_table(beta, nmax);
  SpectrumTrace t;
  t.nu = grid;
  t.nu_c = eff.nu0;
  t.value.assign(grid.size(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    cplx s = 0;
    for (int n = -nmax; n <= nmax; ++n) {
      const double x = grid[i] - eff.nu0 - n * mod.nu_m;
      const cplx a = 1.0 / cplx(x + eff.Omega, eff.gamma_s);
      const cplx b = 1.0 / cplx(x - eff.Omega, eff.gamma_s);
      s += J[n + nmax] * std::exp(-kI * (n * mod.phi)) * (a - b);
    }
    t.value[i] = std::norm(s);
  }
  normalize_unit_max(t);
  return t;
}

SpectrumTrace diagonal_spectrum(const std::vector<double>& grid, const EffectiveTwoLevel& eff,
                                const ModulationConfig& mod) {
  eff.validate();
  mod.validate();
  const double beta = 0.5 * mod.beta_o;
  const int nmax = bessel_cutoff(beta, 1e-14);
  const auto J = bessel_table(beta, nmax);
  const double g2 = eff.gamma_s * eff.gamma_s;
  SpectrumTrace t;
  t.nu = grid;
  t.nu_c = eff.nu0;
  t.value.assign(grid.size(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double s = 0;
    for (int n = -nmax; n <= nmax; ++n) {
      const double x = grid[i] - eff.nu0 - n * mod.nu_m;
      const cplx a = 1.0 / cplx(x + eff.Omega, eff.gamma_s);
      const cplx b = 1.0 / cplx(x - eff.Omega, eff.gamma_s);
      s += J[n + nmax] * J[n + nmax] * std::norm(a - b);
    }
    t.value[i] = g2 * s;
  }
  return t;
}

SpectrumTrace resonant_spectrum(const std::vector<double>& grid, const EffectiveTwoLevel& eff,
                                const ModulationConfig& mod) {
  eff.validate();
  mod.validate();
  const double beta = 0.5 * mod.beta_o;
  const int nmax = bessel_cutoff(beta, 1e-14);
  const auto J = bessel_table(beta, nmax);
  const double W = eff.Omega, bo = mod.beta_o, gs = eff.gamma_s;
  const cplx em = std::exp(-kI * mod.phi), ep = std::exp(kI * mod.phi);
  SpectrumTrace t;
  t.nu = grid;
  t.nu_c = eff.nu0;
  t.value.assign(grid.size(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    cplx s = 0;
    for (int n = -nmax; n <= nmax; ++n) {
      const double x = grid[i] - eff.nu0 - 2.0 * n * W;
      const cplx term = (1.0 - em) / cplx(x + W * (1 + bo), gs) + (1.0 + em) / cplx(x + W * (1 - bo), gs) -
                        (1.0 + ep) / cplx(x - W * (1 + bo), gs) - (1.0 - ep) / cplx(x - W * (1 - bo), gs);
      s += J[n + nmax] * std::exp(-kI * (n * mod.phi)) * term;
    }
    t.value[i] = std::norm(s);
  }
  normalize_unit_max(t);
  return t;
}

PolaritonPopulations resonant_populations(const std::vector<double>& t_us, const EffectiveTwoLevel& eff,
                                          const ModulationConfig& mod) {
  eff.validate();
  mod.validate();
  PolaritonPopulations p;
  p.t = t_us;
  const double s = std::sin(mod.phi);
  for (double t : t_us) {
    const double decay = std::exp(-2.0 * kTwoPi * eff.gamma_s * t);
    const double osc = s * std::sin(std::numbers::pi * mod.beta_o * mod.nu_m * t);
    p.plus.push_back(0.5 * (1.0 + osc) * decay);
    p.minus.push_back(0.5 * (1.0 - osc) * decay);
  }
  return p;
}

// ---------------------------------------------------------------- dynamics

double TimeTrace::pop_plus(std::size_t i) const { return 0.5 * std::norm(cg[i] + ce[i]); }
double TimeTrace::pop_minus(std::size_t i) const { return 0.5 * std::norm(cg[i] - ce[i]); }

double decoupled_excited_population(const EffectiveTwoLevel& eff, double t_us) {
  const double s = std::sin(kTwoPi * eff.Omega * t_us);
  return s * s * std::exp(-2.0 * kTwoPi * eff.gamma_s * t_us);
}

namespace {

using State2 = std::array<cplx, 2>;

struct PolaritonOde {
  double W, wm, amp, gd, phi;  // angular units, per us
  State2 operator()(double t, const State2& b) const {
    const cplx c = amp * std::cos(wm * t + phi) + kI * gd;
    const cplx e = std::exp(kI * (2.0 * W * t));
    return {kI * c * e * b[1], kI * c * std::conj(e) * b[0]};
  }
};

}  // namespace

TimeTrace integrate_effective_dynamics(const EffectiveTwoLevel& eff, const ModulationConfig& mod, cplx cg0,
                                       cplx ce0, const std::vector<double>& t_out, double tolerance) {
  eff.validate();
  mod.validate();
  if (t_out.empty()) fail(ErrorCode::InvalidArgument, "no output times");
  if (!(t_out.back() > 0)) fail(ErrorCode::InvalidArgument, "duration must be positive");
  for (std::size_t i = 0; i < t_out.size(); ++i)
    if (t_out[i] < 0 || (i && t_out[i] < t_out[i - 1])) fail(ErrorCode::InvalidArgument, "output times must be sorted and >= 0");
  if (!(tolerance > 0)) fail(ErrorCode::InvalidArgument, "tolerance must be positive");

  const PolaritonOde f{kTwoPi * eff.Omega, kTwoPi * mod.nu_m, 0.5 * mod.beta_o * kTwoPi * mod.nu_m,
                       kTwoPi * eff.gamma_d, mod.phi};
  const double half_beta = 0.5 * mod.beta_o;
  const double gs = kTwoPi * eff.gamma_s;
  const double W = kTwoPi * eff.Omega;

  auto frame = [&](double t) {
    return std::exp(-gs * t) * std::exp(-kI * (half_beta * std::sin(f.wm * t + mod.phi)));
  };

  // c_pm = (c_g pm c_e)/sqrt2 ; b_pm = c_pm / (frame e^{-+ i W t}).
  State2 b{(cg0 + ce0) / std::sqrt(2.0) / frame(0.0), (cg0 - ce0) / std::sqrt(2.0) / frame(0.0)};

  TimeTrace out;
  auto emit = [&](double t, const State2& y) {
    const cplx fr = frame(t);
    const cplx cp = y[0] * fr * std::exp(-kI * (W * t));
    const cplx cm = y[1] * fr * std::exp(kI * (W * t));
    out.t.push_back(t);
    out.cg.push_back((cp + cm) / std::sqrt(2.0));
    out.ce.push_back((cp - cm) / std::sqrt(2.0));
    out.b_plus.push_back(y[0]);
    out.b_minus.push_back(y[1]);
  };

  // Dormand-Prince 5(4) coefficients.
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  auto axpy = [](const State2& y, std::initializer_list<std::pair<double, const State2*>> terms, double h) {
    State2 r = y;
    for (auto& [c, k] : terms)
      for (int i = 0; i < 2; ++i) r[i] += h * c * (*k)[i];
    return r;
  };

  double t = 0.0;
  const double fastest = 2.0 * W + f.wm + std::abs(f.amp) + std::abs(f.gd);
  double h = 0.05 / std::max(fastest, 1.0);
  State2 k1 = f(t, b);
  std::size_t next = 0;
  while (next < t_out.size() && t_out[next] <= 0.0) emit(t_out[next++], b);
  const double t_end = t_out.back();
  while (next < t_out.size()) {
    const double target = t_out[next];
    if (h < 1e-14 * std::max(1.0, t_end)) fail(ErrorCode::NoConvergence, "step size underflow in dynamics integration");
    const bool clip = t + h >= target;
    const double hs = clip ? target - t : h;
    const State2 k2 = f(t + c2 * hs, axpy(b, {{a21, &k1}}, hs));
    const State2 k3 = f(t + c3 * hs, axpy(b, {{a31, &k1}, {a32, &k2}}, hs));
    const State2 k4 = f(t + c4 * hs, axpy(b, {{a41, &k1}, {a42, &k2}, {a43, &k3}}, hs));
    const State2 k5 = f(t + c5 * hs, axpy(b, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}, hs));
    const State2 k6 = f(t + hs, axpy(b, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}, hs));
    const State2 y5 = axpy(b, {{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}}, hs);
    const State2 k7 = f(t + hs, y5);
    double err = 0;
    for (int i = 0; i < 2; ++i) {
      const cplx e = hs * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double sc = tolerance * std::max({1.0, std::abs(b[i]), std::abs(y5[i])});
      err = std::max(err, std::abs(e) / sc);
    }
    if (err <= 1.0) {
      t = clip ? target : t + hs;
      b = y5;
      k1 = k7;
      ++out.steps;
      while (next < t_out.size() && t_out[next] <= t) emit(t_out[next++], b);
    } else {
      ++out.rejected;
    }
    const double fac = err == 0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
    if (!clip || err > 1.0) h = hs * fac;
  }
  return out;
}

// ---------------------------------------------------------------- swept probe

std::vector<Segment> comb_windows(const EffectiveTwoLevel& eff, const ModulationConfig& mod, int n_max,
                                  double halfwidth, int combs, double bin) {
  if (n_max < 0 || !(halfwidth > 0) || !(bin > 0)) fail(ErrorCode::InvalidArgument, "invalid comb window request");
  std::vector<Segment> raw;
  for (int s : {-1, 1}) {
    if (combs != 0 && combs != s) continue;
    for (int n = -n_max; n <= n_max; ++n) {
      const double c = eff.nu0 + s * eff.Omega + n * mod.nu_m;
      raw.emplace_back(std::floor((c - halfwidth) / bin) * bin, std::ceil((c + halfwidth) / bin) * bin);
    }
  }
  std::sort(raw.begin(), raw.end());
  std::vector<Segment> out;
  for (const auto& s : raw) {
    if (!out.empty() && s.first <= out.back().second)
      out.back().second = std::max(out.back().second, s.second);
    else
      out.push_back(s);
  }
  return out;
}

namespace {

// Upper triangle of a 3x3 Hermitian density matrix.
struct Rho {
  double p0, p1, p2;
  cplx r01, r02, r12;
};

inline Rho operator+(const Rho& a, const Rho& b) {
  return {a.p0 + b.p0, a.p1 + b.p1, a.p2 + b.p2, a.r01 + b.r01, a.r02 + b.r02, a.r12 + b.r12};
}
inline Rho operator*(double h, const Rho& a) { return {h * a.p0, h * a.p1, h * a.p2, h * a.r01, h * a.r02, h * a.r12}; }

// States: 0 = |0,G>, 1 = |1,G>, 2 = |0,W>. H = dc|1><1| + da|2><2| + W(|1><2| + h.c.) + eta(|1><0| + h.c.).
inline Rho lindblad(const Rho& r, double dc, double da, double W, double eta, double k, double g) {
  Rho d;
  d.p0 = -2.0 * eta * r.r01.imag() + 2.0 * k * r.p1 + 2.0 * g * r.p2;
  d.p1 = 2.0 * eta * r.r01.imag() - 2.0 * W * r.r12.imag() - 2.0 * k * r.p1;
  d.p2 = 2.0 * W * r.r12.imag() - 2.0 * g * r.p2;
  d.r01 = -kI * (eta * (r.p1 - r.p0) - dc * r.r01 - W * r.r02) - k * r.r01;
  d.r02 = -kI * (eta * r.r12 - W * r.r01 - da * r.r02) - g * r.r02;
  d.r12 = -kI * (eta * r.r02 + (dc - da) * r.r12 + W * (r.p2 - r.p1)) - (k + g) * r.r12;
  return d;
}

}  // namespace

SweptSpectrum swept_probe_spectrum(const EffectiveTwoLevel& eff, const ModulationConfig& mod,
                                   const SweptProbeConfig& cfg, const std::vector<Segment>& segments) {
  eff.validate();
  mod.validate();
  if (!(cfg.drive_photons > 0) || !(cfg.sweep_rate > 0) || !(cfg.bin > 0) || !(cfg.warmup_us >= 0) ||
      !(cfg.max_phase_step > 0))
    fail(ErrorCode::InvalidArgument, "invalid swept-probe configuration");
  if (segments.empty()) fail(ErrorCode::InvalidArgument, "no probe segments");
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (!(segments[i].second > segments[i].first) || (i && segments[i].first < segments[i - 1].second))
      fail(ErrorCode::InvalidArgument, "segments must be increasing and disjoint");

  const double k = kTwoPi * eff.kappa(), g = kTwoPi * eff.gamma();
  const double W = kTwoPi * eff.Omega;
  const double eta = k * std::sqrt(cfg.drive_photons);
  const double amp = mod.beta_o * mod.nu_m;  // MHz excursion
  const double nu_start = segments.front().first;

  SweptSpectrum out;
  out.trace.nu_c = eff.nu0;
  for (const auto& seg : segments) {
    const std::size_t nb = static_cast<std::size_t>(std::llround((seg.second - seg.first) / cfg.bin));
    std::vector<double> acc(nb, 0.0), tim(nb, 0.0);
    // Fastest angular frequency in the probe frame over this segment.
    const double detune = std::max(std::abs(eff.nu0 - seg.first), std::abs(eff.nu0 - seg.second)) + amp;
    const double wmax = kTwoPi * (2.0 * detune + 2.0 * eff.Omega) + eta;
    const double dt = cfg.max_phase_step / wmax;
    const double t0 = (seg.first - nu_start) / cfg.sweep_rate - cfg.warmup_us;
    const double t1 = (seg.second - nu_start) / cfg.sweep_rate;
    const long nsteps = static_cast<long>(std::ceil((t1 - t0) / dt));
    const double h = (t1 - t0) / static_cast<double>(nsteps);
    Rho r{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    auto rhs = [&](double t, const Rho& s) {
      const double nu_p = nu_start + cfg.sweep_rate * t;
      const double nu_a = eff.nu0 + amp * std::cos(kTwoPi * mod.nu_m * t + mod.phi);
      return lindblad(s, kTwoPi * (eff.nu0 - nu_p), kTwoPi * (nu_a - nu_p), W, eta, k, g);
    };
    for (long i = 0; i < nsteps; ++i) {
      const double t = t0 + h * static_cast<double>(i);
      const Rho s1 = rhs(t, r);
      const Rho s2 = rhs(t + 0.5 * h, r + (0.5 * h) * s1);
      const Rho s3 = rhs(t + 0.5 * h, r + (0.5 * h) * s2);
      const Rho s4 = rhs(t + h, r + h * s3);
      r = r + (h / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
      const double tm = t + h;
      const double nu_p = nu_start + cfg.sweep_rate * tm;
      if (nu_p > seg.first) {
        const long bi = static_cast<long>(std::floor((nu_p - seg.first) / cfg.bin));
        if (bi >= 0 && static_cast<std::size_t>(bi) < nb) {
          acc[bi] += r.p1 * h;
          tim[bi] += h;
        }
      }
      out.max_photons = std::max(out.max_photons, r.p1);
    }
    out.steps += nsteps;
    for (std::size_t b = 0; b < nb; ++b) {
      out.trace.nu.push_back(seg.first + (static_cast<double>(b) + 0.5) * cfg.bin);
      out.trace.value.push_back(tim[b] > 0 ? acc[b] / tim[b] : 0.0);
    }
  }
  out.strong_drive = out.max_photons > 0.5;
  return out;
}

// ---------------------------------------------------------------- comb fit

double beta_from_tooth_ratio(double ratio) {
  if (!(ratio > 0)) return 0.0;
  // J1^2/J0^2 rises monotonically from 0 to infinity on [0, 2.4048).
  double lo = 0.0, hi = 2.4048;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double j0 = bessel_j(0, mid), j1 = bessel_j(1, mid);
    if (j1 * j1 < ratio * j0 * j0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

double max_in(const SpectrumTrace& t, double lo, double hi) {
  double m = 0;
  for (std::size_t i = 0; i < t.nu.size(); ++i)
    if (t.nu[i] >= lo && t.nu[i] <= hi) m = std::max(m, t.value[i]);
  return m;
}

double barycenter(const SpectrumTrace& t, double lo, double hi) {
  // Weights above a tenth of the regional maximum, so a noisy baseline does
  // not pull the estimate toward the middle of the region.
  const double floor = 0.1 * max_in(t, lo, hi);
  double w = 0, wx = 0;
  for (std::size_t i = 0; i < t.nu.size(); ++i)
    if (t.nu[i] >= lo && t.nu[i] < hi && t.value[i] > floor) {
      w += t.value[i] - floor;
      wx += (t.value[i] - floor) * t.nu[i];
    }
  if (w <= 0) fail(ErrorCode::InsufficientData, "empty spectrum region in comb fit");
  return wx / w;
}

}  // namespace

CombFit fit_comb(const SpectrumTrace& trace, double nu_m, const CombFitOptions& opt) {
  if (trace.nu.size() < 8 || trace.nu.size() != trace.value.size())
    fail(ErrorCode::InvalidArgument, "comb fit needs a trace with at least 8 points");
  if (!(nu_m > 0)) fail(ErrorCode::InvalidArgument, "modulation frequency must be positive");
  if (opt.n_teeth < 1 || opt.combs < -1 || opt.combs > 1) fail(ErrorCode::InvalidArgument, "invalid comb fit options");
  const int nt = opt.n_teeth;
  const bool both = opt.combs == 0;
  const double lo = trace.nu.front(), hi = trace.nu.back();

  // Initial guesses.
  double nu0 = opt.nu0, Omega;
  if (both) {
    const double mid = 0.5 * (lo + hi);
    const double bp = barycenter(trace, mid, hi + 1), bm = barycenter(trace, lo, mid);
    Omega = 0.5 * (bp - bm);
    nu0 = 0.5 * (bp + bm);
  } else {
    Omega = opt.combs * (barycenter(trace, lo, hi + 1) - nu0);
  }
  const int s0 = both ? 1 : opt.combs;
  const double c0 = nu0 + s0 * Omega;
  const double A0 = max_in(trace, c0 - 0.5 * nu_m, c0 + 0.5 * nu_m);
  const double A1 = 0.5 * (max_in(trace, c0 - 1.25 * nu_m, c0 - 0.75 * nu_m) +
                           max_in(trace, c0 + 0.75 * nu_m, c0 + 1.25 * nu_m));
  if (!(A0 > 0)) fail(ErrorCode::InsufficientData, "no comb signal found");
  const double beta0 = std::min(beta_from_tooth_ratio(A1 / A0), 2.3);
  const double sigma0 = 1.0;
  const double j00 = bessel_j(0, beta0);
  const double amp0 = A0 / (j00 * j00 * voigt_profile(0.0, 0.0, opt.gamma_s0, sigma0));

  // p = [beta, Omega, gamma_s, sigma, amplitude, (nu0)]
  const int np = both ? 6 : 5;
  Eigen::VectorXd p(np), lower(np), upper(np);
  p << beta0, Omega, opt.gamma_s0, sigma0, amp0, Eigen::VectorXd::Constant(np - 5, nu0);
  lower << 0.0, Omega - 0.5 * nu_m, 0.2, 1e-3, 0.0, Eigen::VectorXd::Constant(np - 5, nu0 - 0.5 * nu_m);
  upper << 6.0, Omega + 0.5 * nu_m, 200.0, opt.fit_sigma ? 200.0 : 1e-3 * 1.0000001,
      std::numeric_limits<double>::infinity(), Eigen::VectorXd::Constant(np - 5, nu0 + 0.5 * nu_m);
  if (!opt.fit_sigma) p(3) = 1e-3;

  const std::size_t m = trace.nu.size();
  std::vector<int> signs;
  if (opt.combs >= 0) signs.push_back(1);
  if (opt.combs <= 0) signs.push_back(-1);
  if (!both && opt.mirror_tails) signs.push_back(-opt.combs);

  ResidualFn fn = [&](const Eigen::VectorXd& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    const double beta = q(0), W = q(1), gs = q(2), sg = q(3), A = q(4);
    const double c = both ? q(5) : nu0;
    std::vector<double> J(2 * nt + 3);
    for (int n = -nt - 1; n <= nt + 1; ++n) J[n + nt + 1] = bessel_j(n, beta);
    r.resize(static_cast<Eigen::Index>(m));
    if (jac) jac->setZero(static_cast<Eigen::Index>(m), q.size());
    for (std::size_t i = 0; i < m; ++i) {
      double y = 0, dbeta = 0, dW = 0, dg = 0, ds = 0, dc = 0, dA = 0;
      for (int s : signs)
        for (int n = -nt; n <= nt; ++n) {
          const double jn = J[n + nt + 1];
          const double w = jn * jn;
          const double dw = jn * (J[n + nt] - J[n + nt + 2]);
          const double x = trace.nu[i] - c - n * nu_m - s * W;
          const VoigtGrad v = voigt_with_gradient(x, gs, sg);
          y += A * w * v.value;
          dA += w * v.value;
          dbeta += A * dw * v.value;
          dW += -s * A * w * v.d_x;
          dc += -A * w * v.d_x;
          dg += A * w * v.d_gamma;
          ds += A * w * v.d_sigma;
        }
      r(static_cast<Eigen::Index>(i)) = y - trace.value[i];
      if (jac) {
        auto row = static_cast<Eigen::Index>(i);
        (*jac)(row, 0) = dbeta;
        (*jac)(row, 1) = dW;
        (*jac)(row, 2) = dg;
        (*jac)(row, 3) = opt.fit_sigma ? ds : 0.0;
        (*jac)(row, 4) = dA;
        if (both) (*jac)(row, 5) = dc;
      }
    }
  };
  LsqOptions lo_opt;
  lo_opt.max_iterations = opt.max_iterations;
  const LsqResult res = levenberg_marquardt(fn, p, lower, upper, lo_opt);
  CombFit fit;
  fit.beta_p = res.params(0);
  fit.beta_p_stderr = std::sqrt(std::max(0.0, res.covariance(0, 0)));
  fit.Omega = res.params(1);
  fit.gamma_s = res.params(2);
  fit.sigma = res.params(3);
  fit.amplitude = res.params(4);
  fit.nu0 = both ? res.params(5) : nu0;
  fit.residual_norm = std::sqrt(res.chi2);
  fit.iterations = res.iterations;
  fit.converged = res.converged;
  const double peak = voigt_profile(0.0, 0.0, fit.gamma_s, fit.sigma);
  for (int n = -nt; n <= nt; ++n) {
    const double j = bessel_j(n, fit.beta_p);
    fit.teeth.push_back(fit.amplitude * j * j * peak);
  }
  if (!res.converged) {
    std::ostringstream os;
    os << "comb fit did not converge; last iterate beta_p=" << fit.beta_p << " Omega=" << fit.Omega
       << " gamma_s=" << fit.gamma_s << " sigma=" << fit.sigma;
    fail(ErrorCode::NoConvergence, os.str());
  }
  return fit;
}

// ---------------------------------------------------------------- averaging, bootstrap

SpectrumTrace average_traces(const std::vector<SpectrumTrace>& shots, const std::vector<std::size_t>* pick) {
  if (shots.empty()) fail(ErrorCode::InsufficientData, "no shots to average");
  SpectrumTrace avg;
  avg.nu = shots.front().nu;
  avg.nu_c = shots.front().nu_c;
  avg.value.assign(avg.nu.size(), 0.0);
  const std::size_t n = pick ? pick->size() : shots.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = shots[pick ? (*pick)[k] : k];
    if (s.value.size() != avg.value.size()) fail(ErrorCode::InvalidArgument, "shots must share a grid");
    for (std::size_t i = 0; i < s.value.size(); ++i) avg.value[i] += s.value[i];
  }
  for (double& v : avg.value) v /= static_cast<double>(n);
  return avg;
}

Alignment align_shots(const std::vector<SpectrumTrace>& shots, int max_shift_bins) {
  if (shots.empty()) fail(ErrorCode::InsufficientData, "no shots to align");
  if (max_shift_bins < 0) fail(ErrorCode::InvalidArgument, "max shift must be >= 0");
  const std::size_t m = shots.front().value.size();
  Alignment a;
  std::vector<double> sum(shots.front().value);
  a.shots.push_back(shots.front());
  a.shifts.push_back(0);
  auto shifted = [&](const std::vector<double>& v, int s, std::size_t i) {
    const long j = static_cast<long>(i) + s;
    return (j >= 0 && j < static_cast<long>(m)) ? v[static_cast<std::size_t>(j)] : 0.0;
  };
  for (std::size_t k = 1; k < shots.size(); ++k) {
    const auto& v = shots[k].value;
    if (v.size() != m) fail(ErrorCode::InvalidArgument, "shots must share a grid");
    int best = 0;
    double best_c = -1;
    for (int s = -max_shift_bins; s <= max_shift_bins; ++s) {
      double c = 0;
      for (std::size_t i = 0; i < m; ++i) c += sum[i] * shifted(v, s, i);
      if (c > best_c) {
        best_c = c;
        best = s;
      }
    }
    SpectrumTrace t = shots[k];
    for (std::size_t i = 0; i < m; ++i) t.value[i] = shifted(v, best, i);
    for (std::size_t i = 0; i < m; ++i) sum[i] += t.value[i];
    a.shots.push_back(std::move(t));
    a.shifts.push_back(best);
  }
  return a;
}

BootstrapResult bootstrap_beta_uncertainty(const std::vector<SpectrumTrace>& shots, double nu_m,
                                           const CombFitOptions& opt, std::size_t n_resamples,
                                           std::uint64_t seed, int threads) {
  if (shots.size() < 10) fail(ErrorCode::InsufficientData, "bootstrap needs at least 10 shots");
  if (n_resamples < 2) fail(ErrorCode::InvalidArgument, "bootstrap needs at least 2 resamples");
  std::vector<double> beta(n_resamples, std::numeric_limits<double>::quiet_NaN());
  const std::uint64_t key = derive_seed(seed, "bootstrap");
  parallel_for(n_resamples, threads, [&](std::size_t k) {
    Stream st(key, k);
    std::vector<std::size_t> pick(shots.size());
    for (auto& p : pick) p = static_cast<std::size_t>(st.next_u64() % shots.size());
    try {
      beta[k] = fit_comb(average_traces(shots, &pick), nu_m, opt).beta_p;
    } catch (const Error&) {
    }
  });
  BootstrapResult r;
  for (double b : beta) {
    if (std::isnan(b))
      ++r.failures;
    else
      r.samples.push_back(b);
  }
  if (r.samples.size() < 2) fail(ErrorCode::NoConvergence, "too few bootstrap fits converged");
  double s = 0;
  for (double b : r.samples) s += b;
  r.mean = s / static_cast<double>(r.samples.size());
  double ss = 0;
  for (double b : r.samples) ss += (b - r.mean) * (b - r.mean);
  r.stderr_ = std::sqrt(ss / static_cast<double>(r.samples.size() - 1));
  return r;
}

// ---------------------------------------------------------------- transfer

LineFit weighted_line_fit(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& sy) {
  const std::size_t n = x.size();
  if (n < 3 || y.size() != n || (!sy.empty() && sy.size() != n))
    fail(ErrorCode::InvalidArgument, "line fit needs at least 3 matching points");
  bool weighted = !sy.empty();
  for (double s : sy)
    if (!(s > 0) || !std::isfinite(s)) weighted = false;
  double S = 0, Sx = 0, Sy = 0, Sxx = 0, Sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighted ? 1.0 / (sy[i] * sy[i]) : 1.0;
    S += w;
    Sx += w * x[i];
    Sy += w * y[i];
    Sxx += w * x[i] * x[i];
    Sxy += w * x[i] * y[i];
  }
  const double D = S * Sxx - Sx * Sx;
  if (!(D > 0)) fail(ErrorCode::InvalidArgument, "degenerate abscissae in line fit");
  LineFit f;
  f.slope = (S * Sxy - Sx * Sy) / D;
  f.intercept = (Sxx * Sy - Sx * Sxy) / D;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighted ? 1.0 / (sy[i] * sy[i]) : 1.0;
    const double r = y[i] - f.intercept - f.slope * x[i];
    f.chi2 += w * r * r;
  }
  const double scale = weighted ? 1.0 : f.chi2 / static_cast<double>(n - 2);
  f.slope_stderr = std::sqrt(scale * S / D);
  f.intercept_stderr = std::sqrt(scale * Sxx / D);
  return f;
}

namespace {

double interp(const SpectrumTrace& t, double x) {
  if (x <= t.nu.front() || x >= t.nu.back()) return 0.0;
  const auto it = std::upper_bound(t.nu.begin(), t.nu.end(), x);
  const std::size_t j = static_cast<std::size_t>(it - t.nu.begin());
  const double f = (x - t.nu[j - 1]) / (t.nu[j] - t.nu[j - 1]);
  return (1 - f) * t.value[j - 1] + f * t.value[j];
}

}  // namespace

TransferResult modulation_transfer(const std::vector<double>& beta_grid, const TransferConfig& cfg) {
  if (beta_grid.size() < 4) fail(ErrorCode::InvalidArgument, "transfer needs at least 4 modulation indices");
  cfg.eff.validate();
  const double bin = cfg.swept.bin;
  const double half = cfg.template_teeth * cfg.nu_m + cfg.template_margin;
  const double centre = cfg.eff.nu0 + cfg.eff.Omega;
  const double lo = std::floor((centre - half) / bin) * bin, hi = std::ceil((centre + half) / bin) * bin;
  const std::vector<double> grid = uniform_grid(lo + 0.5 * bin, hi - 0.5 * bin, bin);

  CombFitOptions fo;
  fo.combs = 1;
  fo.gamma_s0 = cfg.eff.gamma_s;
  fo.nu0 = cfg.eff.nu0;

  TransferResult out;
  for (std::size_t bi = 0; bi < beta_grid.size(); ++bi) {
    ModulationConfig mod{cfg.nu_m, beta_grid[bi], cfg.phi};
    mod.validate();
    TransferPoint pt;
    pt.beta_o = mod.beta_o;
    if (cfg.pipeline == TransferConfig::Pipeline::Analytic) {
      // Noise-free data: the model must carry every tooth the exact spectrum has.
      CombFitOptions fa = fo;
      fa.n_teeth = std::max(fo.n_teeth, bessel_cutoff(0.5 * mod.beta_o, 1e-14) + 1);
      const CombFit f = fit_comb(comb_spectrum(grid, cfg.eff, mod), cfg.nu_m, fa);
      pt.beta_p = f.beta_p;
      pt.stderr_ = f.beta_p_stderr;
      pt.Omega = f.Omega;
    } else {
      SpectrumTrace tmpl;
      if (cfg.swept_template) {
        tmpl = swept_probe_spectrum(cfg.eff, mod, cfg.swept, {{lo, hi}}).trace;
      } else {
        tmpl = comb_spectrum(grid, cfg.eff, mod);
      }
      const std::uint64_t key = derive_seed(cfg.seed, "transfer/beta/" + std::to_string(bi));
      std::vector<SpectrumTrace> shots(cfg.shots);
      parallel_for(cfg.shots, cfg.threads, [&](std::size_t k) {
        Stream st(key, k);
        const double shift = st.normal(0.0, cfg.omega_jitter);
        SpectrumTrace s;
        s.nu = tmpl.nu;
        s.nu_c = tmpl.nu_c;
        s.value.resize(s.nu.size());
        double sum = 0;
        for (std::size_t i = 0; i < s.nu.size(); ++i) sum += (s.value[i] = interp(tmpl, s.nu[i] - shift));
        for (std::size_t i = 0; i < s.nu.size(); ++i)
          s.value[i] = sum > 0 ? static_cast<double>(st.poisson(cfg.counts_per_shot * s.value[i] / sum)) : 0.0;
        shots[k] = std::move(s);
      });
      const Alignment al = align_shots(shots, cfg.max_shift_bins);
      const CombFit f = fit_comb(average_traces(al.shots), cfg.nu_m, fo);
      pt.beta_p = f.beta_p;
      pt.Omega = f.Omega;
      pt.stderr_ = bootstrap_beta_uncertainty(al.shots, cfg.nu_m, fo, cfg.bootstrap, key, cfg.threads).stderr_;
    }
    out.points.push_back(pt);
  }
  std::vector<double> x, y, s;
  for (const auto& p : out.points) {
    x.push_back(p.beta_o);
    y.push_back(p.beta_p);
    s.push_back(p.stderr_);
  }
  out.line = weighted_line_fit(x, y, s);
  return out;
}

double beta_from_intensity(double mean_lightshift, double nu_m, double I0, double dI_max) {
  if (!(I0 > 0)) fail(ErrorCode::InvalidArgument, "constant intensity must be positive");
  if (!(nu_m > 0)) fail(ErrorCode::InvalidArgument, "modulation frequency must be positive");
  return std::abs(mean_lightshift) / nu_m * (dI_max / I0);
}

}  // namespace cavsim
