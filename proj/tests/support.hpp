#pragma once

// Shared helpers for the test suites: a seeded case generator built on the
// library's counter streams and small independent oracles.

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cavsim/arrowhead.hpp"
#include "cavsim/rng.hpp"

namespace testing {

/// Property-case generator. Case k of a property draws from stream
/// (derive_seed(master, property name), k), so every failure is replayable.
class Gen {
 public:
  Gen(const std::string& property, std::uint64_t k) : s_(cavsim::derive_seed(0x5eed, property), k) {}

  double uniform(double lo, double hi) { return s_.uniform(lo, hi); }
  double normal(double mean = 0, double sd = 1) { return s_.normal(mean, sd); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(s_.next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  bool coin(double p = 0.5) { return s_.uniform() < p; }
  std::uint64_t u64() { return s_.next_u64(); }
  /// Multiple of 1/2 in [0, max_twice / 2].
  double half_integer(int max_twice) { return 0.5 * integer(0, max_twice); }
  std::complex<double> complex_normal() { return {normal(), normal()}; }

  /// Random arrowhead matrix; with clusters, diagonal entries repeat exactly
  /// and some arms vanish.
  cavsim::ArrowheadMatrix arrowhead(std::size_t n, bool clusters) {
    cavsim::ArrowheadMatrix m;
    m.apex = normal(0, 100);
    if (n == 0) return m;
    const int distinct = clusters ? std::max(1, integer(1, static_cast<int>(n))) : static_cast<int>(n);
    std::vector<double> pool;
    for (int i = 0; i < distinct; ++i) pool.push_back(normal(0, 200));
    for (std::size_t i = 0; i < n; ++i) {
      m.diagonal.push_back(clusters ? pool[static_cast<std::size_t>(integer(0, distinct - 1))] : pool[i]);
      double g = normal(0, 30);
      if (clusters && coin(0.1)) g = 0;
      m.arm.push_back(g);
    }
    return m;
  }

 private:
  cavsim::Stream s_;
};

/// Dense symmetric form of an arrowhead matrix.
inline Eigen::MatrixXd dense(const cavsim::ArrowheadMatrix& m) {
  const Eigen::Index n = static_cast<Eigen::Index>(m.diagonal.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 1, n + 1);
  a(0, 0) = m.apex;
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i + 1, i + 1) = m.diagonal[static_cast<std::size_t>(i)];
    a(0, i + 1) = a(i + 1, 0) = m.arm[static_cast<std::size_t>(i)];
  }
  return a;
}

struct DenseSolution {
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd pw;
};

inline DenseSolution dense_solve(const cavsim::ArrowheadMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense(m));
  return {es.eigenvalues(), es.eigenvectors().row(0).array().square().matrix().transpose()};
}

inline double spread(const cavsim::ArrowheadMatrix& m) {
  double lo = m.apex, hi = m.apex, g2 = 0;
  for (double d : m.diagonal) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  for (double g : m.arm) g2 += g * g;
  return std::max(hi - lo + 2 * std::sqrt(g2), 1e-300);
}

/// Clebsch-Gordan table from explicit lowering-operator construction of the
/// coupled basis (Condon-Shortley phases), independent of any Racah sum.
class CouplingOracle {
 public:
  CouplingOracle(double j1, double j2) : j1_(j1), j2_(j2) {
    const int d1 = static_cast<int>(std::lround(2 * j1 + 1)), d2 = static_cast<int>(std::lround(2 * j2 + 1));
    const int dim = d1 * d2;
    Eigen::MatrixXd lower = Eigen::MatrixXd::Zero(dim, dim);
    for (int a = 0; a < d1; ++a)
      for (int b = 0; b < d2; ++b) {
        const double m1 = j1 - a, m2 = j2 - b;
        const int from = a * d2 + b;
        if (a + 1 < d1) lower((a + 1) * d2 + b, from) += std::sqrt(j1 * (j1 + 1) - m1 * (m1 - 1));
        if (b + 1 < d2) lower(a * d2 + b + 1, from) += std::sqrt(j2 * (j2 + 1) - m2 * (m2 - 1));
      }
    for (double J = j1 + j2; J >= std::abs(j1 - j2) - 1e-9; J -= 1) {
      // Highest-weight state: the M = J vector orthogonal to all larger-J states.
      Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
      std::vector<int> idx;
      for (int a = 0; a < d1; ++a)
        for (int b = 0; b < d2; ++b)
          if (std::abs((j1 - a) + (j2 - b) - J) < 1e-9) idx.push_back(a * d2 + b);
      Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(dim, static_cast<Eigen::Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) basis(idx[k], static_cast<Eigen::Index>(k)) = 1;
      Eigen::MatrixXd taken(dim, 0);
      for (const auto& [key, vec] : states_)
        if (std::abs(key.second - J) < 1e-9) {
          taken.conservativeResize(dim, taken.cols() + 1);
          taken.col(taken.cols() - 1) = vec;
        }
      Eigen::MatrixXd proj = basis;
      if (taken.cols() > 0) proj -= taken * (taken.transpose() * basis);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(proj, Eigen::ComputeThinU);
      v = svd.matrixU().col(0);
      // Condon-Shortley: <j1 j1; j2 (J - j1) | J J> > 0.
      const int lead = 0 * d2 + static_cast<int>(std::lround(j2 - (J - j1)));
      if (std::abs(J - j1) <= j2 + 1e-9 && v(lead) < 0) v = -v;
      for (double M = J; M >= -J - 1e-9; M -= 1) {
        states_.emplace_back(std::make_pair(J, M), v);
        const double norm = std::sqrt(J * (J + 1) - M * (M - 1));
        if (M > -J + 1e-9) v = lower * v / norm;
      }
    }
    d2_ = d2;
  }

  /// <j1 m1; j2 m2 | J M>
  double cg(double m1, double J, double M, double m2) const {
    for (const auto& [key, vec] : states_)
      if (std::abs(key.first - J) < 1e-9 && std::abs(key.second - M) < 1e-9) {
        const int a = static_cast<int>(std::lround(j1_ - m1)), b = static_cast<int>(std::lround(j2_ - m2));
        return vec(a * d2_ + b);
      }
    return 0;
  }

 private:
  double j1_, j2_;
  int d2_ = 1;
  std::vector<std::pair<std::pair<double, double>, Eigen::VectorXd>> states_;
};

/// 3-j symbol from the oracle Clebsch-Gordan table.
inline double oracle_3j(double j1, double j2, double j3, double m1, double m2, double m3) {
  if (std::abs(m1 + m2 + m3) > 1e-9) return 0;
  if (j3 > j1 + j2 + 1e-9 || j3 < std::abs(j1 - j2) - 1e-9) return 0;
  if (std::abs(m1) > j1 + 1e-9 || std::abs(m2) > j2 + 1e-9 || std::abs(m3) > j3 + 1e-9) return 0;
  CouplingOracle o(j1, j2);
  const double phase = std::lround(j1 - j2 - m3) % 2 == 0 ? 1.0 : -1.0;
  return phase / std::sqrt(2 * j3 + 1) * o.cg(m1, j3, -m3, m2);
}

/// J_n(x) by its power series, summed in long double.
inline double bessel_series(int n, double x) {
  const int an = std::abs(n);
  long double term = 1, sum = 0;
  for (int k = 1; k <= an; ++k) term *= static_cast<long double>(x) / 2 / k;
  for (int k = 0; k < 200; ++k) {
    sum += term;
    term *= -static_cast<long double>(x) * x / 4 / ((k + 1) * static_cast<long double>(k + 1 + an));
  }
  const double v = static_cast<double>(sum);
  return (n < 0 && an % 2) ? -v : v;
}

}  // namespace testing
