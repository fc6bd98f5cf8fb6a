#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cavsim/ensemble.hpp"

namespace cavsim {

/// [[apex, arm^T], [arm, diag(diagonal)]]
struct ArrowheadMatrix {
  double apex = 0;
  std::vector<double> diagonal;
  std::vector<double> arm;

  std::size_t dimension() const { return diagonal.size() + 1; }
  void validate() const;
};

ArrowheadMatrix build_single_excitation_hamiltonian(const DisorderRealization& r, double nu_c);

struct EigenSolution {
  std::vector<double> eigenvalues;  // ascending
  std::vector<double> pw;           // photonic weights, aligned with eigenvalues
  std::size_t top1 = 0;             // index of the largest PW
  std::size_t top2 = 0;             // index of the second largest PW
  std::size_t dark = 0;             // eigenvalues from degenerate groups
  std::size_t uncoupled = 0;        // eigenvalues from zero-coupling entries
  int max_iterations = 0;           // worst root-finder iteration count
};

struct ArrowheadOptions {
  double degeneracy_tol = 1e-12;  // relative to spectral spread
  double coupling_tol = 8.0;      // multiples of eps * scale
};

EigenSolution eigensolve_arrowhead(const ArrowheadMatrix& m, const ArrowheadOptions& opt = {});

/// PW for an eigenvalue lambda that is not a pole.
double photonic_weight(double lambda, const ArrowheadMatrix& m);

double s_pw(const EigenSolution& sol);

struct SpwPoint {
  std::size_t N = 0;
  double Omega = 0;         // mean exact collective coupling
  double Omega_stderr = 0;
  double spw = 0;
  double spw_stderr = 0;
  std::size_t repetitions = 0;
};

/// Builds the realization for (N, stream seed).
using RealizationFactory = std::function<DisorderRealization(std::size_t N, std::uint64_t seed)>;

/// Repetition r at atom number N uses derive_seed(seed, "N/<N>/rep/<r>").
std::vector<SpwPoint> s_pw_curve(const std::vector<std::size_t>& N_grid, const RealizationFactory& factory,
                                 double nu_c, std::size_t repetitions, std::uint64_t seed, int threads = 0);

std::uint64_t repetition_seed(std::uint64_t seed, std::size_t N, std::size_t rep);

}  // namespace cavsim
