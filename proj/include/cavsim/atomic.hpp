#pragma once

#include <array>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cavsim/angular.hpp"

namespace cavsim {

using cplx = std::complex<double>;

/// Field amplitudes in the spherical basis. Component q multiplies the
/// dipole operator d_q, so it drives Delta m = q. The squared norm is
/// expressed in trap-depth units: |E|^2 = U (MHz) produces a ground-state
/// lightshift of -U.
struct SphericalField {
  cplx em1{0.0, 0.0};
  cplx e0{0.0, 0.0};
  cplx ep1{0.0, 0.0};

  static SphericalField from_cartesian(cplx ex, cplx ey, cplx ez);
  /// Unit-norm linear polarization along x, scaled to |E|^2 = depth.
  static SphericalField x_linear(double depth_MHz);
  /// Transverse probe polarization used for loss spectroscopy.
  static SphericalField transverse_probe();

  cplx component(int q) const;
  double norm2() const;
  SphericalField scaled(cplx alpha) const;
  bool finite() const;
};

struct CouplingLineData {
  std::string label;
  double reduced_element_au = 0;
  double freq_THz = 0;  // partner energy minus own manifold energy
  double J = 0;
};

struct Manifold {
  std::string label;
  double J = 0;
  double energy_cm = 0;
};

struct AtomicDataSet {
  std::string version;
  std::vector<std::string> sources;
  double I = 1.5;
  std::vector<Manifold> manifolds;
  std::string ground_label;
  std::string excited_label;
  double J_ground = 0.5;
  double J_excited = 1.5;
  double A_ground = 0;
  double B_ground = 0;
  double A_excited = 0;
  double B_excited = 0;
  double probe_reduced_au = 0;
  std::vector<CouplingLineData> stark_lines;
  std::vector<CouplingLineData> ground_stark_lines;
  double lambda_probe_nm = 780.241;
  double lambda_trap_nm = 1559.0;
  double lightshift_ratio_check = 50.0;

  /// Parses and validates the JSON description; throws Schema with a field
  /// path on any problem.
  static AtomicDataSet parse(const std::string& json_text);
  static AtomicDataSet load(const std::string& path);
  /// The data file shipped with the library.
  static AtomicDataSet load_default();
  static std::string default_path();
  static std::string schema_description();

  double trap_frequency_THz() const;
  const Manifold& manifold(const std::string& label) const;
};

/// <F' m'| d_q |F m> in atomic units for the probe transition.
double dipole_matrix_element(const AngularState& upper, int q, const AngularState& lower, const AtomicDataSet& data);

/// Index of |F', m'> in the 16-state excited basis (F' = 0..3, m' ascending).
int excited_index(int F, int m);
constexpr int kStretchedIndex = 15;

using Mat16 = Eigen::Matrix<cplx, 16, 16>;
using Vec16 = Eigen::Matrix<cplx, 16, 1>;

struct StarkOperator {
  Mat16 matrix = Mat16::Zero();
  double intensity = 0;  // |E|^2 in trap-depth MHz
};

/// Precomputed per-dataset quantities reused across atoms.
class StarkModel {
 public:
  explicit StarkModel(const AtomicDataSet& data);

  const AtomicDataSet& data() const { return data_; }
  /// Ground-state scalar polarizability in raw units (negative for a red trap).
  double ground_alpha() const { return ground_alpha_; }
  /// Multiplies raw second-order operators to express them in trap-depth MHz.
  double calibration() const { return -1.0 / ground_alpha_; }
  /// Diagonal excited hyperfine energies (MHz), F' = 3 at zero.
  const Eigen::Matrix<double, 16, 1>& hyperfine() const { return hfs_; }
  /// Excited operator for unit-depth x polarization (real symmetric).
  const Eigen::Matrix<double, 16, 16>& x_unit() const { return x_unit_; }

  StarkOperator build(const SphericalField& field) const;
  /// Scalar part of the excited shift over the ground shift.
  double scalar_ratio() const;

 private:
  AtomicDataSet data_;
  double ground_alpha_ = 0;
  Eigen::Matrix<double, 16, 1> hfs_;
  Eigen::Matrix<double, 16, 16> x_unit_;
  Eigen::Matrix<double, 16, 16> coupling_;  // |F m> <- |mJ mI>
};

StarkOperator build_stark_operator(const SphericalField& field, const AtomicDataSet& data);

struct DressedLevel {
  int index = 0;  // 1..16
  double nu = 0;  // MHz relative to the bare |2,2> -> |3,3> line
  Vec16 vector = Vec16::Zero();
  cplx overlap33{0.0, 0.0};
};

std::array<DressedLevel, 16> dress_excited_manifold(const StarkOperator& stark, const StarkModel& model);
std::array<DressedLevel, 16> dress_excited_manifold(const StarkOperator& stark, const AtomicDataSet& data);

/// Real fast path for x polarization at a given depth (MHz); returns
/// frequencies and |<psi_j|3,3>|^2 without eigenvectors.
void dress_x_polarized(const StarkModel& model, double depth_MHz, double* nu, double* weight33);

std::array<double, 16> probe_couplings(const std::array<DressedLevel, 16>& levels, double g_local);

/// Probe operator sum_q E_q d_q applied to the ground state |F=2, mF>, in
/// the excited |F' m'> basis.
Vec16 probe_column(int mF, const SphericalField& probe, const AtomicDataSet& data);

std::array<double, 16> loss_spectroscopy_weights(const std::array<DressedLevel, 16>& levels, int mF,
                                                 const SphericalField& probe, const AtomicDataSet& data);

}  // namespace cavsim
