#include "cavsim/lsq.hpp"

#include <cmath>
#include <limits>

#include "cavsim/error.hpp"

namespace cavsim {

namespace {

void numeric_jacobian(const ResidualFn& fn, const Eigen::VectorXd& p, const Eigen::VectorXd& r0, Eigen::MatrixXd& J) {
  J.resize(r0.size(), p.size());
  Eigen::VectorXd rp, rm;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(p(k)));
    Eigen::VectorXd pp = p, pm = p;
    pp(k) += h;
    pm(k) -= h;
    fn(pp, rp, nullptr);
    fn(pm, rm, nullptr);
    J.col(k) = (rp - rm) / (2.0 * h);
  }
}

Eigen::VectorXd clamp(Eigen::VectorXd p, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = std::min(std::max(p(k), lo(k)), hi(k));
  return p;
}

}  // namespace

LsqResult levenberg_marquardt(const ResidualFn& fn, Eigen::VectorXd p, const Eigen::VectorXd& lower,
                              const Eigen::VectorXd& upper, const LsqOptions& opt) {
  const Eigen::Index n = p.size();
  if (lower.size() != n || upper.size() != n) fail(ErrorCode::InvalidArgument, "bound sizes do not match parameters");
  p = clamp(p, lower, upper);
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  auto evaluate = [&](const Eigen::VectorXd& q, Eigen::VectorXd& res, Eigen::MatrixXd* jac) {
    if (opt.analytic_jacobian) {
      fn(q, res, jac);
    } else {
      fn(q, res, nullptr);
      if (jac) numeric_jacobian(fn, q, res, *jac);
    }
  };
  evaluate(p, r, &J);
  if (r.size() <= n) fail(ErrorCode::InsufficientData, "least squares needs more residuals than parameters");
  double chi2 = r.squaredNorm();
  double lambda = opt.initial_lambda;
  LsqResult out;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const Eigen::MatrixXd A = J.transpose() * J;
    const Eigen::VectorXd grad = J.transpose() * r;
    bool accepted = false;
    Eigen::VectorXd step;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::MatrixXd Ad = A;
      for (Eigen::Index k = 0; k < n; ++k) Ad(k, k) += lambda * std::max(A(k, k), 1e-12);
      step = Ad.ldlt().solve(-grad);
      const Eigen::VectorXd trial = clamp(p + step, lower, upper);
      Eigen::VectorXd rt;
      fn(trial, rt, nullptr);
      const double chi2t = rt.squaredNorm();
      if (std::isfinite(chi2t) && chi2t <= chi2) {
        step = trial - p;
        p = trial;
        chi2 = chi2t;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      out.converged = true;  // no downhill direction left
      break;
    }
    evaluate(p, r, &J);
    const double rel = step.norm() / (p.norm() + 1e-12);
    if (rel < opt.rel_step_tol) {
      out.converged = true;
      ++it;
      break;
    }
  }
  out.params = p;
  out.chi2 = chi2;
  out.iterations = it;
  out.dof = static_cast<int>(r.size() - n);
  const Eigen::MatrixXd A = J.transpose() * J;
  const double s2 = out.dof > 0 ? chi2 / out.dof : 0.0;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  out.covariance = s2 * cod.pseudoInverse();
  return out;
}

}  // namespace cavsim
