#pragma once

// Gaussian transition kernels for the annealed stages: random walk with the
// stage sample covariance, simplified manifold Langevin (locally constant
// metric) and position-dependent manifold Langevin with the Omega drift.

#include "mtmcmc/manifold_metric.hpp"

#include <Eigen/Cholesky>

#include <string_view>

namespace mtmcmc {

enum class KernelKind { RandomWalk, SimplifiedManifold, PositionDependent };

inline std::string_view to_string(KernelKind k) {
  switch (k) {
    case KernelKind::RandomWalk: return "tmcmc";
    case KernelKind::SimplifiedManifold: return "smtmcmc";
    case KernelKind::PositionDependent: return "ptmcmc";
  }
  return "unknown";
}

struct KernelSpec {
  KernelKind kind = KernelKind::RandomWalk;
  MetricKind metric = MetricKind::Fisher;

  void validate() const {
    if (kind == KernelKind::PositionDependent && metric != MetricKind::Fisher) {
      throw std::invalid_argument("position-dependent kernel requires the Fisher metric");
    }
    if (kind != KernelKind::RandomWalk && metric == MetricKind::SampleCovariance) {
      throw std::invalid_argument("manifold kernels need a Hessian or Fisher metric");
    }
  }

  bool uses_metric() const { return kind != KernelKind::RandomWalk; }

  EvalRequest request() const {
    switch (kind) {
      case KernelKind::RandomWalk: return {DerivativeOrder::Value, metric};
      case KernelKind::SimplifiedManifold: return {DerivativeOrder::Metric, metric};
      case KernelKind::PositionDependent: return {DerivativeOrder::MetricDerivatives, metric};
    }
    return {};
  }
};

struct KernelConfig {
  KernelSpec spec;
  CorrectionConfig correction;
  /// Extended-boundary eigenvalue scaling; off gives the uncorrected variant.
  bool boundary_scaling = true;
  /// true: reverse-point covariance in both proposal densities of the
  /// simplified manifold ratio. false: each density uses its own covariance.
  bool strict_table_acceptance = true;
};

/// Gaussian N(mean, cov) with a cached Cholesky factor.
class Proposal {
 public:
  Proposal() = default;
  Proposal(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) { factor(); }

  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }

  Vector sample(Rng& rng) const {
    return mean_ + chol_.matrixL() * standard_normal(static_cast<std::size_t>(mean_.size()), rng);
  }

  double log_density(const Eigen::Ref<const Vector>& x) const { return log_density(x, mean_); }

  /// Density of this covariance evaluated with a different mean.
  double log_density(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& mean) const {
    const Vector z = chol_.matrixL().solve(x - mean);
    return log_norm_ - 0.5 * z.squaredNorm();
  }

 private:
  void factor() {
    Matrix c = 0.5 * (cov_ + cov_.transpose());
    chol_.compute(c);
    double jitter = 1e-14 * std::max(c.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    while (chol_.info() != Eigen::Success || !(chol_.matrixLLT().diagonal().array() > 0.0).all()) {
      c.diagonal().array() += jitter;
      jitter *= 10.0;
      chol_.compute(c);
      if (jitter > 1e10) throw DomainError("Proposal: covariance cannot be factorized");
    }
    cov_ = c;
    const auto n = static_cast<double>(mean_.size());
    log_norm_ = -0.5 * n * kLog2Pi - chol_.matrixLLT().diagonal().array().log().sum();
  }

  Vector mean_;
  Matrix cov_;
  Eigen::LLT<Matrix> chol_;
  double log_norm_ = 0.0;
};

/// Proposal built at one point, with the correction applied to its metric.
struct ProposalInfo {
  Proposal proposal;
  CorrectionStatus status = CorrectionStatus::Unchanged;
  bool downgraded = false;  ///< metric unusable; random-walk proposal used instead
  KernelKind effective = KernelKind::RandomWalk;
};

/// Corrected Omega drift: Omega_i = -1/2 sum_j [S (dG_hat/dtheta_j) S]_ij with
/// S the corrected pseudo-covariance. `metric_derivs` are derivatives of the
/// (tempered) metric whose correction is `cc`.
inline Vector compute_omega(const CorrectedCovariance& cc, const std::vector<Matrix>& metric_derivs,
                            double degenerate_tol = 1e-8) {
  const Eigen::Index n = cc.sigma_hat.rows();
  if (metric_derivs.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("compute_omega: metric derivatives missing");
  }
  Vector omega = Vector::Zero(n);
  if (cc.status == CorrectionStatus::FallbackSampleCov) return omega;

  // G_hat shares eigenvectors with G; eigenvalue mu_i maps to mu_i / c_i, or
  // to the constant 1 / floor for substituted directions.
  EigenDecomp gd{cc.decomp.q, cc.metric_eigs};
  Vector fv(n), fp(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (cc.substituted[i]) {
      fv[i] = 1.0 / cc.decomp.lambdas[i];
      fp[i] = 0.0;
    } else {
      fv[i] = cc.metric_eigs[i] / cc.scaling[i];
      fp[i] = 1.0 / cc.scaling[i];
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const Matrix dghat = transformed_matrix_derivative(gd, metric_derivs[static_cast<std::size_t>(j)], fv, fp,
                                                       degenerate_tol);
    const Matrix m = cc.sigma_hat * dghat * cc.sigma_hat;
    omega += m.col(j);
  }
  return -0.5 * omega;
}

/// Builds the proposal q(. | theta*) from a cached evaluation at theta*.
/// `eval` must contain what `cfg.spec.request()` asks for.
inline ProposalInfo propose(const KernelConfig& cfg, const ParamVector& center, const TargetEvaluation& eval,
                            double zeta, double epsilon, const BoxPrior& prior, const Matrix& sample_cov) {
  if (!(epsilon > 0.0)) throw DomainError("propose: epsilon must be positive");
  ProposalInfo out;
  const auto random_walk = [&] {
    out.proposal = Proposal(center, epsilon * sample_cov);
    out.effective = KernelKind::RandomWalk;
  };
  if (!cfg.spec.uses_metric()) {
    random_walk();
    return out;
  }
  if (!(zeta > 0.0 && zeta <= 1.0)) throw DomainError("propose: manifold kernels need zeta in (0, 1]");

  const bool usable = eval.grad.size() == center.size() && eval.grad.allFinite() &&
                      eval.metric.rows() == center.size() && eval.metric.allFinite();
  if (!usable) {
    random_walk();
    out.downgraded = true;
    return out;
  }
  const CorrectionConfig& ccfg = cfg.correction;
  const Matrix g_gamma = zeta * eval.metric;
  CorrectedCovariance cc = cfg.boundary_scaling ? correct_pseudo_covariance(g_gamma, center, prior, sample_cov, ccfg)
                                                : invert_without_scaling(g_gamma, sample_cov, ccfg);
  out.status = cc.status;

  Vector mean = center + 0.5 * epsilon * zeta * (cc.sigma_hat * eval.grad);
  if (cfg.spec.kind == KernelKind::PositionDependent) {
    if (eval.metric_derivs.size() != static_cast<std::size_t>(center.size())) {
      throw std::invalid_argument("propose: position-dependent kernel needs metric derivatives");
    }
    std::vector<Matrix> dg;
    dg.reserve(eval.metric_derivs.size());
    for (const auto& d : eval.metric_derivs) dg.push_back(zeta * d);
    mean += epsilon * compute_omega(cc, dg, ccfg.degenerate_tol);
  }
  if (!mean.allFinite() || !cc.sigma_hat.allFinite()) {
    random_walk();
    out.downgraded = true;
    return out;
  }
  out.proposal = Proposal(std::move(mean), epsilon * cc.sigma_hat);
  out.effective = cfg.spec.kind;
  return out;
}

/// Evaluates the model at `center` and builds the proposal there.
template <TargetModel M>
ProposalInfo propose(const KernelConfig& cfg, const ParamVector& center, double zeta, double epsilon, const M& model,
                     const Matrix& sample_cov) {
  if (!model.prior().contains(center)) throw DomainError("propose: center outside the prior box");
  const TargetEvaluation ev = model.evaluate(center, cfg.spec.request());
  return propose(cfg, center, ev, zeta, epsilon, model.prior(), sample_cov);
}

/// log A for a move old -> new at annealing exponent zeta. `forward` was built
/// at theta_old and `reverse` at theta_new.
inline double log_acceptance_ratio(KernelKind kind, const ParamVector& theta_new, const ParamVector& theta_old,
                                   double loglike_new, double loglike_old, const Proposal& forward,
                                   const Proposal& reverse, double zeta, const BoxPrior& prior,
                                   bool strict_table_acceptance = true) {
  const double lp_new = log_prior(theta_new, prior);
  const double lp_old = log_prior(theta_old, prior);
  if (lp_new == kNegInf || !(loglike_new > kNegInf)) return kNegInf;
  double log_a = zeta * (loglike_new - loglike_old) + (lp_new - lp_old);
  switch (kind) {
    case KernelKind::RandomWalk:
      break;
    case KernelKind::SimplifiedManifold:
      log_a += reverse.log_density(theta_old);
      log_a -= strict_table_acceptance ? reverse.log_density(theta_new, forward.mean())
                                       : forward.log_density(theta_new);
      break;
    case KernelKind::PositionDependent:
      log_a += reverse.log_density(theta_old) - forward.log_density(theta_new);
      break;
  }
  return log_a;
}

}  // namespace mtmcmc
