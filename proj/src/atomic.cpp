#include "cavsim/atomic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cavsim/error.hpp"

namespace cavsim {

namespace {

using json = nlohmann::json;

constexpr double kCmToTHz = 29.9792458e-3;
constexpr double kLightNmTHz = 299792.458;

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) fail(ErrorCode::Schema, "missing field '" + path + key + "'");
  return obj.at(key);
}

double require_number(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_number()) fail(ErrorCode::Schema, "field '" + path + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) fail(ErrorCode::Schema, "field '" + path + key + "' must be finite");
  return x;
}

std::string require_string(const json& obj, const std::string& key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_string()) fail(ErrorCode::Schema, "field '" + path + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<CouplingLineData> parse_lines(const json& root, const std::string& key) {
  const json& arr = require(root, key, "");
  if (!arr.is_array()) fail(ErrorCode::Schema, "field '" + key + "' must be an array");
  std::vector<CouplingLineData> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string path = key + "[" + std::to_string(i) + "].";
    CouplingLineData line;
    line.label = require_string(arr[i], "label", path);
    line.reduced_element_au = require_number(arr[i], "reduced_element_au", path);
    line.freq_THz = require_number(arr[i], "freq_THz", path);
    line.J = require_number(arr[i], "J", path);
    if (line.reduced_element_au <= 0) fail(ErrorCode::Schema, "field '" + path + "reduced_element_au' must be positive");
    if (line.freq_THz == 0) fail(ErrorCode::Schema, "field '" + path + "freq_THz' must be nonzero");
    twice(line.J);
    out.push_back(line);
  }
  return out;
}

double hyperfine_energy(double A, double B, double I, double J, double F) {
  const double K = F * (F + 1) - I * (I + 1) - J * (J + 1);
  double e = 0.5 * A * K;
  if (I > 0.5 && J > 0.5) {
    e += B * (1.5 * K * (K + 1) - 2 * I * (I + 1) * J * (J + 1)) / (4 * I * (2 * I - 1) * J * (2 * J - 1));
  }
  return e;
}

using MatX = Eigen::MatrixXcd;

// <J m_a| d_q |J' m_b> with reduced element red, Edmonds convention.
double we_element(int tJ, int tma, int q, int tJp, int tmb, double red) {
  const double w = wigner_3j_2(tJ, 2, tJp, -tma, 2 * q, tmb);
  if (w == 0.0) return 0.0;
  const int phase = (tJ - tma) / 2;
  return ((phase % 2 == 0) ? 1.0 : -1.0) * w * red;
}

// Second-order operator on the (2J+1)-dimensional manifold, raw units
// (au^2 / THz). Both the co- and counter-rotating denominators are kept.
MatX second_order(double J, const std::vector<CouplingLineData>& lines, const SphericalField& field, double nu_THz) {
  const int tJ = twice(J);
  const int dim = tJ + 1;
  MatX V = MatX::Zero(dim, dim);
  for (const auto& line : lines) {
    const int tJk = twice(line.J);
    const int dk = tJk + 1;
    // K(k, a) = <k|A|a>, L(a, k) = <a|A|k>, A = sum_q E_q d_q.
    MatX K = MatX::Zero(dk, dim);
    MatX L = MatX::Zero(dim, dk);
    const int pphase = ((tJ - tJk) / 2) % 2 == 0 ? 1 : -1;
    for (int a = 0; a < dim; ++a) {
      const int tma = -tJ + 2 * a;
      for (int b = 0; b < dk; ++b) {
        const int tmb = -tJk + 2 * b;
        for (int q = -1; q <= 1; ++q) {
          const cplx e = field.component(q);
          if (e == cplx(0.0, 0.0)) continue;
          K(b, a) += e * we_element(tJk, tmb, q, tJ, tma, line.reduced_element_au);
          L(a, b) += e * we_element(tJ, tma, q, tJk, tmb, pphase * line.reduced_element_au);
        }
      }
    }
    V -= K.adjoint() * K / (line.freq_THz - nu_THz);
    V -= L * L.adjoint() / (line.freq_THz + nu_THz);
  }
  return V;
}

}  // namespace

// ---------------------------------------------------------------------------
// SphericalField

SphericalField SphericalField::from_cartesian(cplx ex, cplx ey, cplx ez) {
  const double s = 1.0 / std::sqrt(2.0);
  const cplx i(0.0, 1.0);
  SphericalField f;
  f.ep1 = s * (-ex + i * ey);
  f.em1 = s * (ex + i * ey);
  f.e0 = ez;
  return f;
}

SphericalField SphericalField::x_linear(double depth_MHz) {
  return from_cartesian(std::sqrt(std::max(depth_MHz, 0.0)), 0.0, 0.0);
}

SphericalField SphericalField::transverse_probe() {
  SphericalField f;
  f.e0 = 1.0 / std::sqrt(2.0);
  f.ep1 = 0.5;
  f.em1 = -0.5;
  return f;
}

cplx SphericalField::component(int q) const {
  switch (q) {
    case -1:
      return em1;
    case 0:
      return e0;
    case 1:
      return ep1;
    default:
      fail(ErrorCode::InvalidArgument, "spherical component must be -1, 0 or +1");
  }
}

double SphericalField::norm2() const { return std::norm(em1) + std::norm(e0) + std::norm(ep1); }

SphericalField SphericalField::scaled(cplx alpha) const {
  SphericalField f;
  f.em1 = alpha * em1;
  f.e0 = alpha * e0;
  f.ep1 = alpha * ep1;
  return f;
}

bool SphericalField::finite() const {
  auto ok = [](cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); };
  return ok(em1) && ok(e0) && ok(ep1);
}

// ---------------------------------------------------------------------------
// AtomicDataSet

AtomicDataSet AtomicDataSet::parse(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Schema, std::string("atomic data is not valid JSON: ") + e.what());
  }
  AtomicDataSet d;
  d.version = require_string(root, "version", "");
  if (root.contains("sources") && root["sources"].is_array())
    for (const auto& s : root["sources"]) d.sources.push_back(s.get<std::string>());
  d.I = require_number(root, "nuclear_spin", "");
  twice(d.I);

  const json& ms = require(root, "manifolds", "");
  if (!ms.is_array() || ms.empty()) fail(ErrorCode::Schema, "field 'manifolds' must be a non-empty array");
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const std::string path = "manifolds[" + std::to_string(i) + "].";
    Manifold m;
    m.label = require_string(ms[i], "label", path);
    m.J = require_number(ms[i], "J", path);
    m.energy_cm = require_number(ms[i], "energy_cm", path);
    twice(m.J);
    d.manifolds.push_back(m);
  }
  d.ground_label = require_string(root, "ground_manifold", "");
  d.excited_label = require_string(root, "excited_manifold", "");
  d.J_ground = d.manifold(d.ground_label).J;
  d.J_excited = d.manifold(d.excited_label).J;
  if (twice(d.J_excited) != 3 || twice(d.I) != 3 || twice(d.J_ground) != 1)
    fail(ErrorCode::Schema, "only a J=1/2 -> J'=3/2 line with I=3/2 is supported");

  const json& hfs = require(root, "hyperfine_constants_MHz", "");
  const json& hg = require(hfs, d.ground_label, "hyperfine_constants_MHz.");
  const json& he = require(hfs, d.excited_label, "hyperfine_constants_MHz.");
  d.A_ground = require_number(hg, "A", "hyperfine_constants_MHz." + d.ground_label + ".");
  d.B_ground = require_number(hg, "B", "hyperfine_constants_MHz." + d.ground_label + ".");
  d.A_excited = require_number(he, "A", "hyperfine_constants_MHz." + d.excited_label + ".");
  d.B_excited = require_number(he, "B", "hyperfine_constants_MHz." + d.excited_label + ".");

  d.probe_reduced_au = require_number(root, "probe_reduced_element_au", "");
  if (d.probe_reduced_au <= 0) fail(ErrorCode::Schema, "field 'probe_reduced_element_au' must be positive");
  d.stark_lines = parse_lines(root, "stark_lines");
  d.ground_stark_lines = parse_lines(root, "ground_stark_lines");

  static const std::array<const char*, 4> kRetained = {"4D5/2", "4D3/2", "6S1/2", "5S1/2"};
  if (d.stark_lines.size() != kRetained.size())
    fail(ErrorCode::Schema, "field 'stark_lines' must list exactly 4D5/2, 4D3/2, 6S1/2 and 5S1/2");
  for (const char* label : kRetained) {
    const bool found = std::any_of(d.stark_lines.begin(), d.stark_lines.end(),
                                   [&](const CouplingLineData& l) { return l.label == label; });
    if (!found) fail(ErrorCode::Schema, std::string("field 'stark_lines' lacks line ") + label);
  }
  if (d.ground_stark_lines.empty()) fail(ErrorCode::Schema, "field 'ground_stark_lines' must not be empty");

  const json& wl = require(root, "wavelengths_nm", "");
  d.lambda_probe_nm = require_number(wl, "probe", "wavelengths_nm.");
  d.lambda_trap_nm = require_number(wl, "trap", "wavelengths_nm.");
  if (d.lambda_probe_nm <= 0 || d.lambda_trap_nm <= 0) fail(ErrorCode::Schema, "wavelengths must be positive");
  if (root.contains("lightshift_ratio_check")) d.lightshift_ratio_check = root["lightshift_ratio_check"].get<double>();

  // Line frequencies must agree with the manifold energies when both exist.
  const double e_exc = d.manifold(d.excited_label).energy_cm;
  for (const auto& line : d.stark_lines) {
    for (const auto& m : d.manifolds) {
      if (m.label != line.label) continue;
      const double expected = (m.energy_cm - e_exc) * kCmToTHz;
      if (std::abs(expected - line.freq_THz) > 1e-3)
        fail(ErrorCode::Schema, "stark line " + line.label + " frequency disagrees with manifold energies");
    }
  }
  return d;
}

AtomicDataSet AtomicDataSet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorCode::NotFound, "atomic data file '" + path + "' not found; expected " + schema_description());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string AtomicDataSet::default_path() {
  if (const char* env = std::getenv("CAVSIM_ATOMIC_DATA")) return env;
#ifdef CAVSIM_DATA_DIR
  return std::string(CAVSIM_DATA_DIR) + "/rb87_atomic_data.json";
#else
  return "data/rb87_atomic_data.json";
#endif
}

AtomicDataSet AtomicDataSet::load_default() { return load(default_path()); }

std::string AtomicDataSet::schema_description() {
  return "a JSON object with fields {version, nuclear_spin, manifolds:[{label, J, energy_cm}], ground_manifold, "
         "excited_manifold, hyperfine_constants_MHz:{<label>:{A, B}}, probe_reduced_element_au, "
         "stark_lines:[{label, reduced_element_au, freq_THz, J}] (exactly 4D5/2, 4D3/2, 6S1/2, 5S1/2), "
         "ground_stark_lines:[...], wavelengths_nm:{probe, trap}}";
}

double AtomicDataSet::trap_frequency_THz() const { return kLightNmTHz / lambda_trap_nm; }

const Manifold& AtomicDataSet::manifold(const std::string& label) const {
  for (const auto& m : manifolds)
    if (m.label == label) return m;
  fail(ErrorCode::NotFound, "unknown manifold '" + label + "'");
}

// ---------------------------------------------------------------------------
// Dipole elements

double dipole_matrix_element(const AngularState& upper, int q, const AngularState& lower,
                             const AtomicDataSet& data) {
  upper.validate();
  lower.validate();
  if (q < -1 || q > 1) fail(ErrorCode::InvalidArgument, "q must be -1, 0 or +1");
  if (twice(upper.I) != twice(data.I) || twice(lower.I) != twice(data.I))
    fail(ErrorCode::NotFound, "nuclear spin does not match the atomic data");
  if (twice(upper.J) != twice(data.J_excited) || twice(lower.J) != twice(data.J_ground))
    fail(ErrorCode::NotFound, "no dipole data for the requested pair of manifolds");

  const int tF = twice(lower.F), tm = twice(lower.mF), tFp = twice(upper.F), tmp = twice(upper.mF);
  if (tmp != tm + 2 * q) return 0.0;
  const int tJ = twice(lower.J), tJp = twice(upper.J), tI = twice(data.I);
  const double w3 = wigner_3j_2(tFp, 2, tF, -tmp, 2 * q, tm);
  if (w3 == 0.0) return 0.0;
  const double w6 = wigner_6j_2(tJp, tFp, tI, tF, tJ, 2);
  const int p1 = (tFp - tmp) / 2;
  const int p2 = (tJp + tI + tF + 2) / 2;
  const double sign = ((p1 + p2) % 2 == 0) ? 1.0 : -1.0;
  return sign * w3 * std::sqrt((tFp + 1.0) * (tF + 1.0)) * w6 * data.probe_reduced_au;
}

int excited_index(int F, int m) {
  if (F < 0 || F > 3 || std::abs(m) > F) fail(ErrorCode::InvalidArgument, "excited state out of range");
  return F * F + (m + F);
}

// ---------------------------------------------------------------------------
// Stark model

StarkModel::StarkModel(const AtomicDataSet& data) : data_(data) {
  const double nu = data.trap_frequency_THz();
  const MatX Vg = second_order(data.J_ground, data.ground_stark_lines, SphericalField::x_linear(1.0), nu);
  ground_alpha_ = Vg.trace().real() / static_cast<double>(Vg.rows());
  if (!(ground_alpha_ < 0)) fail(ErrorCode::Schema, "ground-state polarizability must be negative for a red trap");

  const double J = data.J_excited, I = data.I;
  coupling_.setZero();
  for (int F = 0; F <= 3; ++F) {
    for (int m = -F; m <= F; ++m) {
      const int row = excited_index(F, m);
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
          const double mJ = -1.5 + a, mI = -1.5 + b;
          coupling_(row, a * 4 + b) = clebsch_gordan(J, mJ, I, mI, F, m);
        }
      }
    }
  }
  const double e3 = hyperfine_energy(data.A_excited, data.B_excited, I, J, 3.0);
  for (int F = 0; F <= 3; ++F)
    for (int m = -F; m <= F; ++m)
      hfs_(excited_index(F, m)) = hyperfine_energy(data.A_excited, data.B_excited, I, J, F) - e3;

  x_unit_ = build(SphericalField::x_linear(1.0)).matrix.real();
}

StarkOperator StarkModel::build(const SphericalField& field) const {
  if (!field.finite()) fail(ErrorCode::InvalidArgument, "field components must be finite");
  StarkOperator op;
  op.intensity = field.norm2();
  if (op.intensity == 0.0) return op;
  const MatX VJ = second_order(data_.J_excited, data_.stark_lines, field, data_.trap_frequency_THz());
  Mat16 unc = Mat16::Zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int k = 0; k < 4; ++k) unc(a * 4 + k, b * 4 + k) = VJ(a, b);
  const Eigen::Matrix<cplx, 16, 16> C = coupling_.cast<cplx>();
  op.matrix = calibration() * (C * unc * C.transpose());
  // Enforce exact Hermiticity of the stored operator.
  op.matrix = 0.5 * (op.matrix + op.matrix.adjoint()).eval();
  return op;
}

double StarkModel::scalar_ratio() const {
  const StarkOperator op = build(SphericalField::x_linear(1.0));
  return -op.matrix.trace().real() / 16.0;
}

StarkOperator build_stark_operator(const SphericalField& field, const AtomicDataSet& data) {
  return StarkModel(data).build(field);
}

// ---------------------------------------------------------------------------
// Dressing

std::array<DressedLevel, 16> dress_excited_manifold(const StarkOperator& stark, const StarkModel& model) {
  Mat16 H = stark.matrix;
  for (int i = 0; i < 16; ++i) H(i, i) += model.hyperfine()(i);
  Eigen::SelfAdjointEigenSolver<Mat16> es(H);
  Mat16 V = es.eigenvectors();
  const auto& ev = es.eigenvalues();
  // Within a degenerate subspace rotate so the whole |3,3> overlap sits on
  // its first vector; the solver's choice of basis there is arbitrary.
  const double gap = 1e-9 * std::max(1.0, ev(15) - ev(0));
  for (int a = 0; a < 16;) {
    int b = a + 1;
    while (b < 16 && ev(b) - ev(b - 1) <= gap) ++b;
    if (b - a > 1) {
      const Eigen::VectorXcd c = V.block(kStretchedIndex, a, 1, b - a).adjoint();
      if (c.norm() > 0) {
        Eigen::HouseholderQR<Eigen::MatrixXcd> qr(c);
        const Eigen::MatrixXcd Q = qr.householderQ();
        V.middleCols(a, b - a) = (V.middleCols(a, b - a) * Q).eval();
      }
    }
    a = b;
  }
  std::array<DressedLevel, 16> levels;
  for (int j = 0; j < 16; ++j) {
    DressedLevel& L = levels[j];
    L.nu = ev(j) + stark.intensity;
    L.vector = V.col(j);
    // Fix the global phase so the largest component is real and positive.
    Eigen::Index imax = 0;
    L.vector.cwiseAbs().maxCoeff(&imax);
    const cplx ph = std::abs(L.vector(imax)) > 0 ? std::conj(L.vector(imax)) / std::abs(L.vector(imax)) : 1.0;
    L.vector *= ph;
    L.overlap33 = std::conj(L.vector(kStretchedIndex));
  }
  auto mexp = [](const DressedLevel& L) {
    double s = 0;
    for (int F = 0; F <= 3; ++F)
      for (int m = -F; m <= F; ++m) s += m * std::norm(L.vector(excited_index(F, m)));
    return s;
  };
  const double tie = 1e-9 * std::max(1.0, std::abs(levels.back().nu - levels.front().nu));
  std::stable_sort(levels.begin(), levels.end(), [&](const DressedLevel& a, const DressedLevel& b) {
    if (std::abs(a.nu - b.nu) > tie) return a.nu < b.nu;
    const double oa = std::abs(a.overlap33), ob = std::abs(b.overlap33);
    if (std::abs(oa - ob) > 1e-12) return oa > ob;
    return mexp(a) < mexp(b);
  });
  for (int j = 0; j < 16; ++j) levels[j].index = j + 1;
  return levels;
}

std::array<DressedLevel, 16> dress_excited_manifold(const StarkOperator& stark, const AtomicDataSet& data) {
  return dress_excited_manifold(stark, StarkModel(data));
}

void dress_x_polarized(const StarkModel& model, double depth, double* nu, double* weight33) {
  // x polarization couples Delta m = 0, +-2 only, so the manifold splits into
  // odd-m and even-m blocks of size 8; |3,3> lives in the odd block.
  std::array<int, 8> ob{}, eb{};
  int no = 0, ne = 0, pos33 = 0;
  for (int F = 0; F <= 3; ++F)
    for (int m = -F; m <= F; ++m) {
      const int idx = excited_index(F, m);
      if (m % 2 != 0) {
        if (idx == kStretchedIndex) pos33 = no;
        ob[no++] = idx;
      } else {
        eb[ne++] = idx;
      }
    }
  const auto& X = model.x_unit();
  const auto& h = model.hyperfine();
  Eigen::Matrix<double, 8, 8> Ho, He;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      Ho(a, b) = depth * X(ob[a], ob[b]);
      He(a, b) = depth * X(eb[a], eb[b]);
    }
  for (int a = 0; a < 8; ++a) {
    Ho(a, a) += h(ob[a]);
    He(a, a) += h(eb[a]);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 8, 8>> so(Ho);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 8, 8>> se(He, Eigen::EigenvaluesOnly);
  std::array<std::pair<double, double>, 16> out;
  for (int a = 0; a < 8; ++a) {
    const double v = so.eigenvectors()(pos33, a);
    out[a] = {so.eigenvalues()(a) + depth, v * v};
    out[8 + a] = {se.eigenvalues()(a) + depth, 0.0};
  }
  double lo = out[0].first, hi = out[0].first;
  for (const auto& o : out) {
    lo = std::min(lo, o.first);
    hi = std::max(hi, o.first);
  }
  // Same tie rule as the full dressing: within a degenerate pair the level
  // carrying the |3,3> overlap comes first.
  const double tie = 1e-9 * std::max(1.0, hi - lo);
  std::sort(out.begin(), out.end(), [tie](const auto& x, const auto& y) {
    if (std::abs(x.first - y.first) > tie) return x.first < y.first;
    return x.second > y.second;
  });
  for (int j = 0; j < 16; ++j) {
    nu[j] = out[j].first;
    weight33[j] = out[j].second;
  }
}

std::array<double, 16> probe_couplings(const std::array<DressedLevel, 16>& levels, double g_local) {
  if (g_local < 0) fail(ErrorCode::InvalidArgument, "g_local must be non-negative");
  std::array<double, 16> g{};
  for (int j = 0; j < 16; ++j) g[j] = g_local * std::abs(levels[j].overlap33);
  return g;
}

Vec16 probe_column(int mF, const SphericalField& probe, const AtomicDataSet& data) {
  if (mF < -2 || mF > 2) fail(ErrorCode::InvalidArgument, "mF must lie in -2..2");
  Vec16 col = Vec16::Zero();
  AngularState lower{data.J_ground, data.I, 2.0, static_cast<double>(mF)};
  for (int F = 0; F <= 3; ++F)
    for (int m = -F; m <= F; ++m) {
      AngularState upper{data.J_excited, data.I, static_cast<double>(F), static_cast<double>(m)};
      cplx s = 0;
      for (int q = -1; q <= 1; ++q) {
        if (m != mF + q) continue;
        s += probe.component(q) * dipole_matrix_element(upper, q, lower, data);
      }
      col(excited_index(F, m)) = s;
    }
  return col;
}

std::array<double, 16> loss_spectroscopy_weights(const std::array<DressedLevel, 16>& levels, int mF,
                                                 const SphericalField& probe, const AtomicDataSet& data) {
  const Vec16 col = probe_column(mF, probe, data);
  std::array<double, 16> w{};
  for (int j = 0; j < 16; ++j) w[j] = std::norm(levels[j].vector.dot(col));
  return w;
}

}  // namespace cavsim
