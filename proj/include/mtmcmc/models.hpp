#pragma once

// Built-in analytic targets used by the benchmarks.

#include "mtmcmc/target_model.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <vector>

namespace mtmcmc {

/// Multivariate Gaussian density used directly as the likelihood, restricted
/// to a uniform box. Hessian and Fisher metrics both equal the precision.
class GaussianTarget {
 public:
  GaussianTarget(Vector mean, const Matrix& cov, BoxPrior prior)
      : mean_(std::move(mean)), cov_(cov), prior_(std::move(prior)) {
    require_dims(static_cast<std::size_t>(cov.rows()), static_cast<std::size_t>(mean_.size()), "GaussianTarget");
    require_dims(prior_.dim(), static_cast<std::size_t>(mean_.size()), "GaussianTarget prior");
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) throw DomainError("GaussianTarget: covariance not positive definite");
    precision_ = llt.solve(Matrix::Identity(cov.rows(), cov.cols()));
    precision_ = 0.5 * (precision_ + precision_.transpose());
    const Matrix l = llt.matrixL();
    log_norm_ = -0.5 * static_cast<double>(mean_.size()) * kLog2Pi - l.diagonal().array().log().sum();
  }

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  const BoxPrior& prior() const { return prior_; }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return cov_; }
  const Matrix& precision() const { return precision_; }

  bool supports(MetricKind kind) const { return kind != MetricKind::SampleCovariance; }
  bool supports_metric_derivatives() const { return true; }

  TargetEvaluation evaluate(const ParamVector& theta, EvalRequest req) const {
    TargetEvaluation out;
    const Vector diff = theta - mean_;
    const Vector pd = precision_ * diff;
    out.loglike = log_norm_ - 0.5 * diff.dot(pd);
    if (req.order == DerivativeOrder::Value) return out;
    out.grad = -pd;
    if (req.order == DerivativeOrder::Gradient) return out;
    out.metric = precision_;
    if (req.order == DerivativeOrder::MetricDerivatives) {
      out.metric_derivs.assign(dim(), Matrix::Zero(theta.size(), theta.size()));
    }
    return out;
  }

 private:
  Vector mean_;
  Matrix cov_;
  Matrix precision_;
  BoxPrior prior_;
  double log_norm_ = 0.0;
};

/// Equal-weight Gaussian mixture. Only the Hessian metric is available.
class GaussianMixtureTarget {
 public:
  GaussianMixtureTarget(std::vector<Vector> means, std::vector<Matrix> covs, BoxPrior prior)
      : means_(std::move(means)), covs_(std::move(covs)), prior_(std::move(prior)) {
    if (means_.empty() || means_.size() != covs_.size()) {
      throw DimensionError("GaussianMixtureTarget: need matching non-empty means and covariances");
    }
    for (std::size_t m = 0; m < means_.size(); ++m) {
      require_dims(static_cast<std::size_t>(means_[m].size()), prior_.dim(), "GaussianMixtureTarget mean");
      Eigen::LLT<Matrix> llt(covs_[m]);
      if (llt.info() != Eigen::Success) throw DomainError("GaussianMixtureTarget: covariance not positive definite");
      Matrix p = llt.solve(Matrix::Identity(covs_[m].rows(), covs_[m].cols()));
      precisions_.push_back(0.5 * (p + p.transpose()));
      const Matrix l = llt.matrixL();
      log_norms_.push_back(-0.5 * static_cast<double>(prior_.dim()) * kLog2Pi - l.diagonal().array().log().sum() -
                           std::log(static_cast<double>(means_.size())));
    }
  }

  std::size_t dim() const { return prior_.dim(); }
  const BoxPrior& prior() const { return prior_; }
  const std::vector<Vector>& means() const { return means_; }
  const std::vector<Matrix>& covariances() const { return covs_; }

  bool supports(MetricKind kind) const { return kind == MetricKind::Hessian; }
  bool supports_metric_derivatives() const { return false; }

  TargetEvaluation evaluate(const ParamVector& theta, EvalRequest req) const {
    TargetEvaluation out;
    const std::size_t k = means_.size();
    Vector logc(static_cast<Eigen::Index>(k));
    std::vector<Vector> grads(k);
    for (std::size_t m = 0; m < k; ++m) {
      const Vector diff = theta - means_[m];
      grads[m] = -(precisions_[m] * diff);
      logc[static_cast<Eigen::Index>(m)] = log_norms_[m] + 0.5 * diff.dot(grads[m]);
    }
    out.loglike = log_sum_exp(logc);
    if (req.order == DerivativeOrder::Value) return out;
    const Vector resp = (logc.array() - out.loglike).exp();
    Vector g = Vector::Zero(theta.size());
    for (std::size_t m = 0; m < k; ++m) g += resp[static_cast<Eigen::Index>(m)] * grads[m];
    out.grad = g;
    if (req.order == DerivativeOrder::Gradient) return out;
    // d2 log p = sum r_m (g_m g_m^T - P_m) - g g^T
    Matrix h = -g * g.transpose();
    for (std::size_t m = 0; m < k; ++m) {
      h += resp[static_cast<Eigen::Index>(m)] * (grads[m] * grads[m].transpose() - precisions_[m]);
    }
    out.metric = -0.5 * (h + h.transpose());
    return out;
  }

 private:
  std::vector<Vector> means_;
  std::vector<Matrix> covs_;
  std::vector<Matrix> precisions_;
  std::vector<double> log_norms_;
  BoxPrior prior_;
};

/// Random correlation matrix: random orthogonal basis with random positive
/// spectrum, rescaled to unit diagonal.
inline Matrix random_correlation_matrix(std::size_t d, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(d);
  Matrix z(n, n);
  for (Eigen::Index j = 0; j < n; ++j) z.col(j) = standard_normal(d, rng);
  Eigen::HouseholderQR<Matrix> qr(z);
  const Matrix q = qr.householderQ();
  Vector spectrum(n);
  for (Eigen::Index i = 0; i < n; ++i) spectrum[i] = 0.05 + uniform01(rng);
  spectrum *= static_cast<double>(d) / spectrum.sum();
  const Matrix a = q * spectrum.asDiagonal() * q.transpose();
  const Vector s = a.diagonal().array().rsqrt();
  Matrix c = s.asDiagonal() * a * s.asDiagonal();
  c = 0.5 * (c + c.transpose());
  c.diagonal().setOnes();
  return c;
}

/// f(x; phi) = phi_0 * x, used as a minimal data model.
struct LinearObservable {
  Vector inputs;

  std::size_t param_dim() const { return 1; }
  ModelEvaluation evaluate(const Vector& phi, int order) const {
    ModelEvaluation ev;
    ev.f = phi[0] * inputs;
    if (order >= 1) ev.df = Matrix(inputs);
    if (order >= 2) ev.d2f = std::vector<Matrix>(static_cast<std::size_t>(inputs.size()), Matrix::Zero(1, 1));
    return ev;
  }
};

}  // namespace mtmcmc
