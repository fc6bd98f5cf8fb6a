#pragma once

#include <functional>

#include <Eigen/Dense>

namespace cavsim {

/// Residuals r(p) and, when jac is non-null, their Jacobian dr/dp.
using ResidualFn = std::function<void(const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd* jac)>;

struct LsqOptions {
  int max_iterations = 300;
  double rel_step_tol = 1e-8;
  double initial_lambda = 1e-3;
  bool analytic_jacobian = true;
};

struct LsqResult {
  Eigen::VectorXd params;
  Eigen::MatrixXd covariance;  // s^2 (J^T J)^-1 with s^2 = chi2 / dof
  double chi2 = 0;
  int dof = 0;
  int iterations = 0;
  bool converged = false;
};

/// Damped Gauss-Newton with box constraints enforced by clamping.
LsqResult levenberg_marquardt(const ResidualFn& fn, Eigen::VectorXd p0, const Eigen::VectorXd& lower,
                              const Eigen::VectorXd& upper, const LsqOptions& opt = {});

}  // namespace cavsim
