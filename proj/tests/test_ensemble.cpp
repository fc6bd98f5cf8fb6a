#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cavsim/ensemble.hpp"
#include "cavsim/error.hpp"
#include "support.hpp"

using namespace cavsim;
using doctest::Approx;

namespace {

const StarkModel& model() {
  static const StarkModel m(AtomicDataSet::load_default());
  return m;
}

}  // namespace

TEST_CASE("trap frequencies") {
  const TrapFrequencies f = trap_frequencies(TrapGeometry::standard(1400));
  CHECK(f.x_kHz == Approx(14.5).epsilon(0.05));
  CHECK(f.y_kHz == Approx(14.5).epsilon(0.05));
  CHECK(f.z_kHz == Approx(330).epsilon(0.05));

  const TrapFrequencies zero = trap_frequencies(TrapGeometry::standard(0));
  CHECK(zero.x_kHz == 0.0);
  CHECK(zero.z_kHz == 0.0);

  const TrapFrequencies a = trap_frequencies(TrapGeometry::standard(300));
  const TrapFrequencies b = trap_frequencies(TrapGeometry::standard(1200));
  CHECK(b.x_kHz == Approx(2 * a.x_kHz).epsilon(1e-12));
  CHECK(b.z_kHz == Approx(2 * a.z_kHz).epsilon(1e-12));
}

TEST_CASE("trap geometry validation and probe waist scaling") {
  const TrapGeometry g = TrapGeometry::standard(1000);
  CHECK(g.waist_probe_um == Approx(g.waist_trap_um * std::sqrt(0.780 / 1.559)).epsilon(1e-12));
  TrapGeometry bad = g;
  bad.waist_trap_um = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = g;
  bad.depth_uK = -5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("thermal sampling") {
  const TrapGeometry g = TrapGeometry::standard(1400);
  const ThermalSample cold = sample_positions(g, 0, 50, 3);
  for (const auto& p : cold.positions) {
    CHECK(p.x == 0.0);
    CHECK(p.y == 0.0);
    CHECK(p.z == 0.0);
  }

  const std::size_t N = 100000;
  const ThermalSample s = sample_positions(g, 190, N, 11);
  const Position sig = thermal_sigma(g, 190);
  // sigma^2 = kB T / (m omega^2), computed here from the trap frequencies.
  const TrapFrequencies f = trap_frequencies(g);
  const double kT = phys::kB * 190e-6;
  auto sigma_um = [&](double f_kHz) { return 1e6 * std::sqrt(kT / g.mass_kg) / (2 * M_PI * f_kHz * 1e3); };
  CHECK(sig.x == Approx(sigma_um(f.x_kHz)).epsilon(1e-9));
  CHECK(sig.z == Approx(sigma_um(f.z_kHz)).epsilon(1e-9));
  double sx = 0, sy = 0, sz = 0;
  for (const auto& p : s.positions) {
    sx += p.x * p.x;
    sy += p.y * p.y;
    sz += p.z * p.z;
  }
  // Sample variance of a Gaussian has standard error sigma^2 sqrt(2/N).
  const double se = std::sqrt(2.0 / N);
  CHECK(std::abs(sx / N / (sig.x * sig.x) - 1) < 3 * se);
  CHECK(std::abs(sy / N / (sig.y * sig.y) - 1) < 3 * se);
  CHECK(std::abs(sz / N / (sig.z * sig.z) - 1) < 3 * se);

  const ThermalSample again = sample_positions(g, 190, 1000, 11);
  for (std::size_t i = 0; i < 1000; ++i) {
    CHECK(again.positions[i].x == s.positions[i].x);
    CHECK(again.positions[i].z == s.positions[i].z);
  }
}

TEST_CASE("mode functions") {
  const TrapGeometry g = TrapGeometry::standard(1400);
  CHECK(local_probe_coupling({0, 0, 0}, g) == Approx(76.0));
  CHECK(std::abs(local_probe_coupling({0, 0, g.lambda_probe_um / 4}, g)) < 1e-12);
  CHECK(local_trap_intensity({0, 0, 0}, g) == Approx(1.0));
  CHECK(local_trap_intensity({0, 0, g.lambda_trap_um / 4}, g) < 1e-30);
  CHECK(local_trap_intensity({g.waist_trap_um, 0, 0}, g) == Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK(local_trap_intensity({g.waist_trap_um / std::sqrt(2.0), g.waist_trap_um / std::sqrt(2.0), 0}, g) ==
        Approx(0.1353352832).epsilon(1e-9));
}

TEST_CASE("single cold atom in an empty trap gives one bare line") {
  const DisorderRealization r = build_realization(1, TrapGeometry::standard(0), 0, model(), 1, 1);
  REQUIRE(r.size() == 16);
  int coupled = 0;
  for (std::size_t i = 0; i < r.size(); ++i)
    if (r.g[i] > 1e-9) {
      ++coupled;
      CHECK(r.nu[i] == Approx(0).epsilon(1e-9));
      CHECK(r.g[i] == Approx(76.0));
    }
  CHECK(coupled == 1);
  CHECK(r.Omega == Approx(76.0));
}

TEST_CASE("Table I couplings and Table II lightshift") {
  const DisorderRealization shallow = build_realization(20000, TrapGeometry::standard(310), 50, model(), 7);
  CHECK(shallow.Omega / std::sqrt(20000.0) == Approx(57).epsilon(3.0 / 57));
  const DisorderRealization deep = build_realization(20000, TrapGeometry::standard(1400), 190, model(), 8);
  CHECK(deep.Omega / std::sqrt(20000.0) == Approx(60).epsilon(3.0 / 60));
  CHECK(deep.nu_bar == Approx(-1300).epsilon(0.1));
}

TEST_CASE("collective coupling equals the realization Omega") {
  const TrapGeometry g = TrapGeometry::standard(710);
  const ThermalSample s = sample_positions(g, 100, 300, 5);
  const DisorderRealization r = build_realization(s, g, model(), 1);
  CHECK(r.Omega == Approx(collective_coupling(s, g)).epsilon(1e-10));
  double o2 = 0;
  for (double v : r.g) o2 += v * v;
  CHECK(r.Omega == Approx(std::sqrt(o2)).epsilon(1e-12));
}

TEST_CASE("spectral distribution") {
  DisorderRealization one;
  one.atoms = 1;
  one.lines_per_atom = 1;
  one.nu = {-123.4};
  one.g = {50.0};
  one.refresh();
  const SpectralDistribution d = spectral_distribution(one, 10.0);
  int occupied = 0;
  for (double w : d.weights)
    if (w > 0) {
      ++occupied;
      CHECK(w == Approx(2500.0));
    }
  CHECK(occupied == 1);
  CHECK(d.mean == Approx(-123.4));
  CHECK(d.support == 0.0);

  const DisorderRealization r = build_realization(2000, TrapGeometry::standard(1040), 140, model(), 9);
  const SpectralDistribution dr = spectral_distribution(r, 10.0);
  CHECK(dr.total == Approx(r.Omega * r.Omega).epsilon(1e-9));
  CHECK(dr.mean == Approx(r.nu_bar).epsilon(1e-9));
}

TEST_CASE("lobe counting") {
  CHECK(count_lobes({0, 1, 3, 1, 0}, 0.02) == 1);
  CHECK(count_lobes({0, 1, 3, 1, 0, 0, 2, 0}, 0.02) == 2);
  // A shoulder without a valley is not a lobe.
  CHECK(count_lobes({0, 1, 3, 2.9, 2.8, 0}, 0.02) == 1);
  // Peaks below the height floor are ignored.
  CHECK(count_lobes({0, 5, 0, 0.01, 0}, 0.02) == 1);
}

TEST_CASE("distribution shape at the four depths") {
  const double depths[] = {310, 710, 1040, 1400}, temps[] = {50, 100, 140, 190};
  int lobes[4];
  for (int k = 0; k < 4; ++k) {
    const DisorderRealization r = build_realization(20000, TrapGeometry::standard(depths[k]), temps[k], model(),
                                                    static_cast<std::uint64_t>(100 + k));
    lobes[k] = spectral_distribution(r, 10.0).lobes;
  }
  CHECK(lobes[0] == 1);
  for (int k = 1; k < 4; ++k) CHECK(lobes[k] >= 2);
}

TEST_CASE("Lorentzian surrogate") {
  const TrapGeometry g = TrapGeometry::standard(1040);
  const DisorderRealization sharp = lorentzian_surrogate(-970, 1e-9, 200, g, 140, 4);
  CHECK(sharp.lines_per_atom == 1);
  for (double v : sharp.nu) CHECK(std::abs(v + 970) < 2.1e-8);

  const std::size_t N = 10000;
  const double hwhm = 60;
  const DisorderRealization r = lorentzian_surrogate(-970, hwhm, N, g, 140, 5);
  std::vector<double> nu = r.nu;
  std::sort(nu.begin(), nu.end());
  // Median of a Lorentzian: standard error pi * hwhm / (2 sqrt N).
  const double median = 0.5 * (nu[N / 2 - 1] + nu[N / 2]);
  CHECK(std::abs(median + 970) < 3 * M_PI * hwhm / (2 * std::sqrt(double(N))));
  for (double v : nu) CHECK(std::abs(v + 970) <= 20 * hwhm);
  // Truncated-Cauchy CDF oracle: P(|x| < h | |x| < 20 h) = (pi/4) / atan(20).
  const double p = (M_PI / 4) / std::atan(20.0);
  const double inside =
      static_cast<double>(std::count_if(nu.begin(), nu.end(), [&](double v) { return std::abs(v + 970) < hwhm; })) / N;
  CHECK(std::abs(inside - p) < 3 * std::sqrt(p * (1 - p) / N));
  for (double v : r.g) CHECK(v >= 0);
  CHECK(r.Omega / std::sqrt(double(N)) == Approx(59).epsilon(0.1));
}

TEST_CASE("merge adds squared couplings") {
  const TrapGeometry g = TrapGeometry::standard(710);
  const DisorderRealization a = build_realization(40, g, 100, model(), 1, 1);
  const DisorderRealization b = build_realization(25, g, 100, model(), 2, 1);
  const DisorderRealization m = merge(a, b);
  CHECK(m.atoms == 65);
  CHECK(m.Omega * m.Omega == Approx(a.Omega * a.Omega + b.Omega * b.Omega).epsilon(1e-14));
}

TEST_CASE("realizations are independent of the thread count") {
  const TrapGeometry g = TrapGeometry::standard(1400);
  const DisorderRealization a = build_realization(500, g, 190, model(), 77, 1);
  const DisorderRealization b = build_realization(500, g, 190, model(), 77, 4);
  CHECK(a.nu == b.nu);
  CHECK(a.g == b.g);
  CHECK(a.Omega == b.Omega);
}

TEST_CASE("loss lines carry probe-weighted couplings") {
  const TrapGeometry g = TrapGeometry::standard(1400);
  const ThermalSample s = sample_positions(g, 190, 200, 3);
  const DisorderRealization r = loss_lines(s, g, model(), SphericalField::transverse_probe(), 1);
  CHECK(r.size() == 200u * 16u * 5u);
  for (double v : r.g) CHECK(std::isfinite(v));
  CHECK(r.nu_bar < -800);
}
