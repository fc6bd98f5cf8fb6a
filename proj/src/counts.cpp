#include "cavsim/counts.hpp"

#include <cmath>
#include <map>

#include "cavsim/error.hpp"
#include "cavsim/rng.hpp"

namespace cavsim {

std::uint64_t CountSpectrum::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

CountSpectrum simulate_count_spectrum(const SpectrumTrace& trace, double expected_total, std::uint64_t seed) {
  if (!(expected_total > 0)) fail(ErrorCode::InvalidArgument, "expected total counts must be positive");
  CountSpectrum c;
  c.nu = trace.nu;
  c.nu_c = trace.nu_c;
  c.seed = seed;
  c.counts.assign(trace.nu.size(), 0);
  double sum = 0;
  for (double v : trace.value) sum += v;
  if (sum <= 0) return c;
  Stream st(seed, 0);
  for (std::size_t i = 0; i < trace.nu.size(); ++i) c.counts[i] = st.poisson(expected_total * trace.value[i] / sum);
  return c;
}

namespace {

struct Half {
  double w = 0, wx = 0, wxx = 0;
};

void halves(const CountSpectrum& c, double nu_c, Half& lo, Half& hi) {
  for (std::size_t i = 0; i < c.nu.size(); ++i) {
    const double n = static_cast<double>(c.counts[i]);
    if (n == 0) continue;
    Half& h = c.nu[i] >= nu_c ? hi : lo;
    h.w += n;
    h.wx += n * c.nu[i];
    h.wxx += n * c.nu[i] * c.nu[i];
  }
}

}  // namespace

Barycenters measured_collective_coupling(const CountSpectrum& c, double nu_c) {
  Half lo, hi;
  halves(c, nu_c, lo, hi);
  if (lo.w == 0 || hi.w == 0) fail(ErrorCode::InsufficientData, "one half of the count spectrum is empty");
  Barycenters b;
  b.plus = hi.wx / hi.w;
  b.minus = lo.wx / lo.w;
  b.Omega = 0.5 * (b.plus - b.minus);
  return b;
}

double window_width_calibration(const std::vector<CountSpectrum>& shots, double nu_c) {
  double ss[2] = {0, 0}, nn[2] = {0, 0};
  for (const auto& c : shots) {
    Half lo, hi;
    halves(c, nu_c, lo, hi);
    if (lo.w < 2 || hi.w < 2) continue;
    const Half* h[2] = {&lo, &hi};
    for (int k = 0; k < 2; ++k) {
      const double mean = h[k]->wx / h[k]->w;
      ss[k] += h[k]->wxx - h[k]->w * mean * mean;
      nn[k] += h[k]->w;
    }
  }
  if (nn[0] < 10 || nn[1] < 10) fail(ErrorCode::InsufficientData, "too few counts to calibrate the window width");
  const double s_lo = std::sqrt(std::max(0.0, ss[0] / nn[0]));
  const double s_hi = std::sqrt(std::max(0.0, ss[1] / nn[1]));
  return s_lo + s_hi;  // mean of 2 sigma over both halves
}

FoutResult f_out(const CountSpectrum& c, double nu_c, double window) {
  const Barycenters b = measured_collective_coupling(c, nu_c);
  FoutResult r;
  r.Omega = b.Omega;
  r.plus = b.plus;
  r.minus = b.minus;
  r.window = window;
  std::uint64_t out_p = 0, out_m = 0, n_p = 0, n_m = 0;
  for (std::size_t i = 0; i < c.nu.size(); ++i) {
    const std::uint64_t n = c.counts[i];
    if (n == 0) continue;
    if (c.nu[i] >= nu_c) {
      n_p += n;
      if (std::abs(c.nu[i] - b.plus) > 0.5 * window) out_p += n;
    } else {
      n_m += n;
      if (std::abs(c.nu[i] - b.minus) > 0.5 * window) out_m += n;
    }
  }
  r.total = n_p + n_m;
  r.f_out = static_cast<double>(out_p + out_m) / static_cast<double>(r.total);
  r.f_out_plus = static_cast<double>(out_p) / static_cast<double>(n_p);
  r.f_out_minus = static_cast<double>(out_m) / static_cast<double>(n_m);
  return r;
}

std::vector<CurvePoint> binned_curve(const std::vector<double>& x, const std::vector<double>& y, double width) {
  if (x.size() != y.size()) fail(ErrorCode::InvalidArgument, "x and y sizes differ");
  if (!(width > 0)) fail(ErrorCode::InvalidArgument, "bin width must be positive");
  struct Acc {
    std::vector<double> v;
  };
  std::map<long, Acc> bins;
  for (std::size_t i = 0; i < x.size(); ++i) bins[static_cast<long>(std::floor(x[i] / width))].v.push_back(y[i]);
  std::vector<CurvePoint> out;
  for (auto& [k, acc] : bins) {
    // Pairwise-stable two-pass statistics, order fixed by the input order.
    CurvePoint p;
    p.center = (static_cast<double>(k) + 0.5) * width;
    p.n = acc.v.size();
    double s = 0;
    for (double v : acc.v) s += v;
    p.mean = s / static_cast<double>(p.n);
    if (p.n > 1) {
      double ss = 0;
      for (double v : acc.v) ss += (v - p.mean) * (v - p.mean);
      p.stderr_ = std::sqrt(ss / static_cast<double>(p.n - 1) / static_cast<double>(p.n));
    }
    out.push_back(p);
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) fail(ErrorCode::InvalidArgument, "pearson needs two equal-length series");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace cavsim
