#include "cavsim/arrowhead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cavsim/error.hpp"
#include "cavsim/parallel.hpp"
#include "cavsim/rng.hpp"

namespace cavsim {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

struct Reduced {
  std::vector<double> d;   // distinct, ascending
  std::vector<double> z2;  // squared couplings, all positive
};

// Sums needed by the root finder at tau relative to origin; the first
// nleft poles form psi, the rest phi:
//   psi = sum_{i < nleft} z2 / (delta_i - tau), dpsi = d psi / d tau, ...
struct Sums {
  double psi = 0, dpsi = 0, phi = 0, dphi = 0, abs = 0;
};

// Partial sums over [from, to) with two independent accumulators.
inline void accumulate(const double* d, const double* z2, std::size_t from, std::size_t to, double origin,
                       double tau, double& val, double& der, double& mag) {
  double a0 = 0, a1 = 0, b0 = 0, b1 = 0, m0 = 0, m1 = 0;
  std::size_t i = from;
  for (; i + 1 < to; i += 2) {
    const double r0 = 1.0 / ((d[i] - origin) - tau);
    const double r1 = 1.0 / ((d[i + 1] - origin) - tau);
    const double t0 = z2[i] * r0, t1 = z2[i + 1] * r1;
    a0 += t0;
    a1 += t1;
    b0 += t0 * r0;
    b1 += t1 * r1;
    m0 += std::abs(t0);
    m1 += std::abs(t1);
  }
  if (i < to) {
    const double r0 = 1.0 / ((d[i] - origin) - tau);
    const double t0 = z2[i] * r0;
    a0 += t0;
    b0 += t0 * r0;
    m0 += std::abs(t0);
  }
  val = a0 + a1;
  der = b0 + b1;
  mag = m0 + m1;
}

Sums secular_sums(const Reduced& R, double origin, double tau, std::size_t nleft) {
  Sums s;
  double m1 = 0, m2 = 0;
  accumulate(R.d.data(), R.z2.data(), 0, nleft, origin, tau, s.psi, s.dpsi, m1);
  accumulate(R.d.data(), R.z2.data(), nleft, R.d.size(), origin, tau, s.phi, s.dphi, m2);
  s.abs = m1 + m2;
  return s;
}

// Stable root of a t^2 + b t + c = 0 inside (lo, hi); NaN if none.
double quadratic_root_in(double a, double b, double c, double lo, double hi) {
  auto inside = [&](double t) { return std::isfinite(t) && t > lo && t < hi; };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (a == 0.0) {
    const double t = -c / b;
    return inside(t) ? t : nan;
  }
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0) return nan;
  const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
  const double t1 = q / a;
  const double t2 = q != 0.0 ? c / q : nan;
  if (inside(t1) && inside(t2)) return std::abs(t1) < std::abs(t2) ? t1 : t2;
  if (inside(t1)) return t1;
  if (inside(t2)) return t2;
  return nan;
}

struct Root {
  double origin = 0;
  double tau = 0;
  int iterations = 0;
};

// Root of f(lambda) = apex - lambda - sum z2 / (d - lambda) in interval j:
// j = -1 below d[0], j = k-1 above d[k-1], otherwise between d[j] and d[j+1].
// The root is returned as origin + tau with origin the nearer pole, so tau
// carries full relative precision even when the root hugs that pole.
Root solve_interval(const Reduced& R, double apex, long j, double lower_bound, double upper_bound) {
  const long k = static_cast<long>(R.d.size());
  Root out;
  double lo, hi;
  double pl = 0, pr = 0;
  bool interior = false;
  const std::size_t nleft = static_cast<std::size_t>(j + 1);

  if (j < 0) {
    out.origin = R.d[0];
    lo = lower_bound - out.origin;
    hi = 0.0;
  } else if (j == k - 1) {
    out.origin = R.d[k - 1];
    lo = 0.0;
    hi = upper_bound - out.origin;
  } else {
    interior = true;
    const double a = R.d[j], b = R.d[j + 1];
    const double mid = 0.5 * (b - a);
    const Sums s = secular_sums(R, a, mid, nleft);
    const double fmid = (apex - a) - mid - s.psi - s.phi;
    if (fmid >= 0) {
      out.origin = b;
      lo = (a - b) + mid;
      hi = 0.0;
      pl = a - b;
      pr = 0.0;
    } else {
      out.origin = a;
      lo = 0.0;
      hi = mid;
      pl = 0.0;
      pr = b - a;
    }
  }
  const double c0 = apex - out.origin;
  Sums s;
  auto f_at = [&](double tau) {
    s = secular_sums(R, out.origin, tau, nleft);
    return c0 - tau - s.psi - s.phi;
  };

  double tau = 0.5 * (lo + hi);
  double f = f_at(tau);
  int it = 0;
  for (; it < 200; ++it) {
    if (f > 0)
      lo = tau;
    else if (f < 0)
      hi = tau;
    else
      break;
    const double bound = 4.0 * kEps * (std::abs(c0) + std::abs(tau) + s.abs);
    if (std::abs(f) <= bound) break;
    if (hi - lo <= 2.0 * kEps * std::max(std::abs(lo), std::abs(hi))) break;

    double next;
    if (interior) {
      // Two-pole rational model matching f and f' at tau; the slope of the
      // linear term is credited to the farther pole.
      double b1 = (pl - tau) * (pl - tau) * s.dpsi;
      double b2 = (pr - tau) * (pr - tau) * s.dphi;
      if (std::abs(pl - tau) > std::abs(pr - tau))
        b1 += (pl - tau) * (pl - tau);
      else
        b2 += (pr - tau) * (pr - tau);
      const double A = f + b1 / (pl - tau) + b2 / (pr - tau);
      // A (pl - t)(pr - t) - b1 (pr - t) - b2 (pl - t) = 0
      next = quadratic_root_in(A, -A * (pl + pr) + b1 + b2, A * pl * pr - b1 * pr - b2 * pl, lo, hi);
    } else {
      // All poles on one side: one lumped pole at the origin plus the exact
      // linear term, (A - t)(0 - t) - b = 0.
      const double dsum = s.dpsi + s.dphi;
      const double b = tau * tau * dsum;
      const double A = f + tau + b / (0.0 - tau);
      next = quadratic_root_in(1.0, -A, -b, lo, hi);
    }
    if (!std::isfinite(next)) next = 0.5 * (lo + hi);
    if (next == tau) break;
    tau = next;
    f = f_at(tau);
  }
  out.tau = tau;
  out.iterations = it;
  return out;
}

double neumaier_pw(const Reduced& R, double origin, double tau) {
  double sum = 1.0, comp = 0.0;
  for (std::size_t i = 0; i < R.d.size(); ++i) {
    const double diff = tau - (R.d[i] - origin);
    const double t = R.z2[i] / (diff * diff);
    const double s2 = sum + t;
    if (std::abs(sum) >= std::abs(t))
      comp += (sum - s2) + t;
    else
      comp += (t - s2) + sum;
    sum = s2;
  }
  return 1.0 / (sum + comp);
}

}  // namespace

void ArrowheadMatrix::validate() const {
  if (arm.size() != diagonal.size()) fail(ErrorCode::InvalidArgument, "arrowhead arm length must equal D - 1");
  if (!std::isfinite(apex)) fail(ErrorCode::InvalidArgument, "arrowhead apex must be finite");
  for (std::size_t i = 0; i < arm.size(); ++i)
    if (!std::isfinite(arm[i]) || !std::isfinite(diagonal[i]))
      fail(ErrorCode::InvalidArgument, "arrowhead entries must be finite");
}

ArrowheadMatrix build_single_excitation_hamiltonian(const DisorderRealization& r, double nu_c) {
  if (r.size() == 0 && r.atoms == 0) {
    ArrowheadMatrix m;
    m.apex = nu_c;
    return m;
  }
  ArrowheadMatrix m;
  m.apex = nu_c;
  m.diagonal = r.nu;
  m.arm = r.g;
  return m;
}

double photonic_weight(double lambda, const ArrowheadMatrix& m) {
  double sum = 1.0, comp = 0.0;
  for (std::size_t i = 0; i < m.arm.size(); ++i) {
    const double diff = lambda - m.diagonal[i];
    const double t = m.arm[i] * m.arm[i] / (diff * diff);
    const double s2 = sum + t;
    if (std::abs(sum) >= std::abs(t))
      comp += (sum - s2) + t;
    else
      comp += (t - s2) + sum;
    sum = s2;
  }
  return 1.0 / (sum + comp);
}

EigenSolution eigensolve_arrowhead(const ArrowheadMatrix& m, const ArrowheadOptions& opt) {
  m.validate();
  const std::size_t n = m.diagonal.size();
  EigenSolution sol;
  struct Pair {
    double lambda;
    double pw;
  };
  std::vector<Pair> out;
  out.reserve(n + 1);
  if (n == 0) {
    sol.eigenvalues = {m.apex};
    sol.pw = {1.0};
    return sol;
  }

  double dmin = m.apex, dmax = m.apex, znorm2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dmin = std::min(dmin, m.diagonal[i]);
    dmax = std::max(dmax, m.diagonal[i]);
    znorm2 += m.arm[i] * m.arm[i];
  }
  const double scale = std::max({std::abs(dmin), std::abs(dmax), std::sqrt(znorm2), 1e-300});
  const double ztol = opt.coupling_tol * kEps * scale;
  const double spread = std::max(dmax - dmin, std::sqrt(znorm2));
  const double dtol = opt.degeneracy_tol * std::max(spread, 1e-300);

  // Zero couplings deflate to bare eigenvalues.
  std::vector<std::size_t> idx;
  idx.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(m.arm[i]) <= ztol) {
      out.push_back({m.diagonal[i], 0.0});
      ++sol.uncoupled;
    } else {
      idx.push_back(i);
    }
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m.diagonal[a] < m.diagonal[b]; });

  // Degenerate groups collapse onto one coupled entry plus m-1 dark states.
  Reduced R;
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a + 1;
    double z2 = m.arm[idx[a]] * m.arm[idx[a]];
    double dsum = m.diagonal[idx[a]];
    while (b < idx.size() && m.diagonal[idx[b]] - m.diagonal[idx[b - 1]] <= dtol) {
      z2 += m.arm[idx[b]] * m.arm[idx[b]];
      dsum += m.diagonal[idx[b]];
      ++b;
    }
    // Exact ties keep their value; near ties within tolerance use the mean.
    const bool exact = m.diagonal[idx[a]] == m.diagonal[idx[b - 1]];
    const double dval = exact ? m.diagonal[idx[a]] : dsum / static_cast<double>(b - a);
    for (std::size_t r = a + 1; r < b; ++r) {
      out.push_back({dval, 0.0});
      ++sol.dark;
    }
    R.d.push_back(dval);
    R.z2.push_back(z2);
    a = b;
  }

  const long k = static_cast<long>(R.d.size());
  if (k == 0) {
    out.push_back({m.apex, 1.0});
  } else {
    double zr = 0;
    for (double v : R.z2) zr += v;
    zr = std::sqrt(zr);
    const double lower = std::min(m.apex, R.d.front()) - zr - 1.0;
    const double upper = std::max(m.apex, R.d.back()) + zr + 1.0;
    for (long j = -1; j < k; ++j) {
      const Root root = solve_interval(R, m.apex, j, lower, upper);
      sol.max_iterations = std::max(sol.max_iterations, root.iterations);
      out.push_back({root.origin + root.tau, neumaier_pw(R, root.origin, root.tau)});
    }
  }

  std::sort(out.begin(), out.end(), [](const Pair& a, const Pair& b) { return a.lambda < b.lambda; });
  sol.eigenvalues.resize(out.size());
  sol.pw.resize(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    sol.eigenvalues[i] = out[i].lambda;
    sol.pw[i] = out[i].pw;
  }
  std::size_t t1 = 0, t2 = out.size() > 1 ? 1 : 0;
  if (out.size() > 1 && sol.pw[t2] > sol.pw[t1]) std::swap(t1, t2);
  for (std::size_t i = 2; i < out.size(); ++i) {
    if (sol.pw[i] > sol.pw[t1]) {
      t2 = t1;
      t1 = i;
    } else if (sol.pw[i] > sol.pw[t2]) {
      t2 = i;
    }
  }
  sol.top1 = t1;
  sol.top2 = t2;
  return sol;
}

double s_pw(const EigenSolution& sol) {
  if (sol.pw.size() < 2) return 0.0;
  return std::max(0.0, 1.0 - sol.pw[sol.top1] - sol.pw[sol.top2]);
}

std::uint64_t repetition_seed(std::uint64_t seed, std::size_t N, std::size_t rep) {
  return derive_seed(seed, "N/" + std::to_string(N) + "/rep/" + std::to_string(rep));
}

std::vector<SpwPoint> s_pw_curve(const std::vector<std::size_t>& N_grid, const RealizationFactory& factory,
                                 double nu_c, std::size_t repetitions, std::uint64_t seed, int threads) {
  if (repetitions < 1) fail(ErrorCode::InvalidArgument, "repetitions must be at least 1");
  const std::size_t total = N_grid.size() * repetitions;
  std::vector<double> spw(total), om(total);
  parallel_for(total, threads, [&](std::size_t t) {
    const std::size_t a = t / repetitions, r = t % repetitions;
    const DisorderRealization real = factory(N_grid[a], repetition_seed(seed, N_grid[a], r));
    const EigenSolution sol = eigensolve_arrowhead(build_single_excitation_hamiltonian(real, nu_c));
    spw[t] = s_pw(sol);
    om[t] = real.Omega;
  });
  std::vector<SpwPoint> curve;
  for (std::size_t a = 0; a < N_grid.size(); ++a) {
    SpwPoint p;
    p.N = N_grid[a];
    p.repetitions = repetitions;
    double s = 0, s2 = 0, o = 0, o2 = 0;
    for (std::size_t r = 0; r < repetitions; ++r) {
      const double v = spw[a * repetitions + r], w = om[a * repetitions + r];
      s += v;
      s2 += v * v;
      o += w;
      o2 += w * w;
    }
    const double n = static_cast<double>(repetitions);
    p.spw = s / n;
    p.Omega = o / n;
    if (repetitions > 1) {
      p.spw_stderr = std::sqrt(std::max(0.0, (s2 - s * s / n) / (n - 1)) / n);
      p.Omega_stderr = std::sqrt(std::max(0.0, (o2 - o * o / n) / (n - 1)) / n);
    }
    curve.push_back(p);
  }
  return curve;
}

}  // namespace cavsim
