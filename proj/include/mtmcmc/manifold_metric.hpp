#pragma once

// Pseudo-covariance construction from a local metric G: fallback for
// singular metrics, substitution of negative eigenvalues and eigenvalue
// shrinking so the proposal ellipsoid fits an extended prior box. Also the
// derivative of a spectrally transformed matrix.

#include "mtmcmc/target_model.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <functional>
#include <string_view>

namespace mtmcmc {

/// A = Q diag(lambdas) Q^T with eigenvalues in descending order.
struct EigenDecomp {
  Matrix q;
  Vector lambdas;

  Matrix reconstruct() const { return q * lambdas.asDiagonal() * q.transpose(); }
};

inline EigenDecomp eigendecompose_sym(const Eigen::Ref<const Matrix>& a, double sym_tol = 1e-10) {
  if (a.rows() != a.cols()) throw DimensionError("eigendecompose_sym: matrix is not square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) {
    throw std::invalid_argument("eigendecompose_sym: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecompose_sym: solver failed");
  const Eigen::Index n = a.rows();
  EigenDecomp out{Matrix(n, n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.lambdas[i] = es.eigenvalues()[n - 1 - i];
    out.q.col(i) = es.eigenvectors().col(n - 1 - i);
  }
  return out;
}

enum class NegativeEigenvalueRule {
  SampleCovarianceMin,  ///< smallest eigenvalue of the stage sample covariance
  Fixed,                ///< CorrectionConfig::fixed_floor
};

struct CorrectionConfig {
  double eta = 0.3;   ///< ellipsoid holds 1 - eta of the proposal mass
  double rho = 0.2;   ///< box extension as a fraction of each side length
  NegativeEigenvalueRule eig_floor_source = NegativeEigenvalueRule::SampleCovarianceMin;
  double fixed_floor = 1e-3;
  double eig_tol = 1e-10;         ///< |mu| <= eig_tol * max|mu| means singular
  double degenerate_tol = 1e-8;   ///< relative gap treated as a repeated eigenvalue

  void validate() const {
    if (!(eta > 0.0 && eta < 1.0)) throw DomainError("eta must lie in (0, 1)");
    if (!(rho >= 0.0 && rho <= 1.0)) throw DomainError("rho must lie in [0, 1]");
    if (!(eig_tol > 0.0)) throw DomainError("eig_tol must be positive");
    if (eig_floor_source == NegativeEigenvalueRule::Fixed && !(fixed_floor > 0.0)) {
      throw DomainError("fixed_floor must be positive");
    }
  }
};

/// Ordered by strength; a corrected covariance reports the strongest applied.
enum class CorrectionStatus { Unchanged = 0, BoundaryScaled = 1, NegEigSubstituted = 2, FallbackSampleCov = 3 };

inline constexpr std::size_t kCorrectionStatusCount = 4;

inline std::string_view to_string(CorrectionStatus s) {
  switch (s) {
    case CorrectionStatus::Unchanged: return "unchanged";
    case CorrectionStatus::BoundaryScaled: return "boundary_scaled";
    case CorrectionStatus::NegEigSubstituted: return "neg_eig_substituted";
    case CorrectionStatus::FallbackSampleCov: return "fallback_sample_cov";
  }
  return "unknown";
}

/// Upper 100*eta percentile of the chi-square distribution with `dof` degrees
/// of freedom, i.e. x with P(X > x) = eta.
inline double chi2_upper_quantile(std::size_t dof, double eta) {
  boost::math::chi_squared_distribution<double> dist(static_cast<double>(dof));
  return boost::math::quantile(boost::math::complement(dist, eta));
}

/// Metric inverted through its eigendecomposition, before ellipsoid scaling.
struct InvertedMetric {
  Matrix sigma;          ///< pseudo-covariance
  EigenDecomp decomp;    ///< of `sigma`, descending
  Vector metric_eigs;    ///< eigenvalue of G paired with each column of decomp.q
  Eigen::Array<bool, Eigen::Dynamic, 1> substituted;  ///< negative eigenvalue replaced
  CorrectionStatus status = CorrectionStatus::Unchanged;
};

inline double smallest_eigenvalue(const Eigen::Ref<const Matrix>& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

inline InvertedMetric classify_and_invert_metric(const Eigen::Ref<const Matrix>& g,
                                                 const Eigen::Ref<const Matrix>& sample_cov,
                                                 const CorrectionConfig& cfg) {
  if (g.rows() != g.cols()) throw DimensionError("metric is not square");
  require_dims(static_cast<std::size_t>(sample_cov.rows()), static_cast<std::size_t>(g.rows()), "sample covariance");
  const Eigen::Index n = g.rows();
  InvertedMetric out;
  out.substituted = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, false);

  bool singular = !g.allFinite();
  EigenDecomp gd;
  if (!singular) {
    gd = eigendecompose_sym(0.5 * (g + g.transpose()), kInf);
    const double max_abs = gd.lambdas.cwiseAbs().maxCoeff();
    singular = !(max_abs > 0.0) || (gd.lambdas.cwiseAbs().array() <= cfg.eig_tol * max_abs).any();
  }
  if (singular) {
    out.sigma = 0.5 * (sample_cov + sample_cov.transpose());
    out.decomp = eigendecompose_sym(out.sigma, kInf);
    out.metric_eigs = out.decomp.lambdas.cwiseInverse();
    out.status = CorrectionStatus::FallbackSampleCov;
    return out;
  }

  // Descending covariance eigenvalues correspond to ascending metric
  // eigenvalues among the positive ones; sort explicitly below.
  Vector lam = gd.lambdas.cwiseInverse();
  double floor_value = cfg.fixed_floor;
  if (cfg.eig_floor_source == NegativeEigenvalueRule::SampleCovarianceMin) {
    floor_value = smallest_eigenvalue(sample_cov);
    if (!(floor_value > 0.0)) floor_value = std::max(1e-300, 1e-12 * sample_cov.diagonal().cwiseAbs().maxCoeff());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lam[i] < 0.0) {
      lam[i] = floor_value;
      out.substituted[i] = true;
      out.status = CorrectionStatus::NegEigSubstituted;
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return lam[a] > lam[b]; });

  out.decomp.q.resize(n, n);
  out.decomp.lambdas.resize(n);
  out.metric_eigs.resize(n);
  auto subst = out.substituted;
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index src = order[static_cast<std::size_t>(k)];
    out.decomp.q.col(k) = gd.q.col(src);
    out.decomp.lambdas[k] = lam[src];
    out.metric_eigs[k] = gd.lambdas[src];
    out.substituted[k] = subst[src];
  }
  out.sigma = out.decomp.reconstruct();
  return out;
}

/// Per-eigenvalue constants c_i in (0, 1] such that the endpoints
/// center +- sqrt(c_i lambda_i chi2) q_i lie inside the prior box extended by
/// rho times its side length on every side.
inline Vector extended_boundary_scaling(const EigenDecomp& decomp, const Eigen::Ref<const Vector>& center,
                                        const BoxPrior& prior, const CorrectionConfig& cfg) {
  const Eigen::Index n = decomp.lambdas.size();
  require_dims(static_cast<std::size_t>(center.size()), static_cast<std::size_t>(n), "extended_boundary_scaling");
  require_dims(prior.dim(), static_cast<std::size_t>(n), "extended_boundary_scaling prior");
  if (!prior.contains(center)) throw DomainError("extended_boundary_scaling: center outside the prior box");
  if (!(decomp.lambdas.array() > 0.0).all()) throw DomainError("extended_boundary_scaling: eigenvalues must be positive");

  const Vector width = prior.width();
  const Vector lo = prior.lower() - cfg.rho * width;
  const Vector hi = prior.upper() + cfg.rho * width;
  const double chi2 = chi2_upper_quantile(static_cast<std::size_t>(n), cfg.eta);

  Vector c = Vector::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale2 = decomp.lambdas[i] * chi2;
    const double semi = std::sqrt(scale2);
    for (const double sign : {1.0, -1.0}) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double qij = decomp.q(j, i);
        const double p = center[j] + sign * semi * qij;
        double bound;
        if (p < lo[j]) {
          bound = lo[j];
        } else if (p > hi[j]) {
          bound = hi[j];
        } else {
          continue;
        }
        const double t = (bound - center[j]) / qij;
        c[i] = std::min(c[i], t * t / scale2);
      }
    }
  }
  return c;
}

/// Corrected pseudo-covariance Sigma_hat = Q (C Lambda) Q^T.
struct CorrectedCovariance {
  Matrix sigma_hat;
  EigenDecomp decomp;     ///< of the pseudo-covariance before scaling
  Vector scaling;         ///< c_i
  Vector metric_eigs;     ///< eigenvalues of G in decomp order (fallback: inverse sample-cov eigenvalues)
  Eigen::Array<bool, Eigen::Dynamic, 1> substituted;
  CorrectionStatus status = CorrectionStatus::Unchanged;

  bool corrected() const { return status != CorrectionStatus::Unchanged; }
};

inline CorrectedCovariance correct_pseudo_covariance(const Eigen::Ref<const Matrix>& g,
                                                     const Eigen::Ref<const Vector>& center, const BoxPrior& prior,
                                                     const Eigen::Ref<const Matrix>& sample_cov,
                                                     const CorrectionConfig& cfg) {
  InvertedMetric inv = classify_and_invert_metric(g, sample_cov, cfg);
  CorrectedCovariance out;
  out.decomp = std::move(inv.decomp);
  out.metric_eigs = std::move(inv.metric_eigs);
  out.substituted = std::move(inv.substituted);
  out.status = inv.status;
  const Eigen::Index n = out.decomp.lambdas.size();
  if (inv.status == CorrectionStatus::FallbackSampleCov) {
    out.scaling = Vector::Ones(n);
    out.sigma_hat = std::move(inv.sigma);
    return out;
  }
  out.scaling = extended_boundary_scaling(out.decomp, center, prior, cfg);
  if ((out.scaling.array() < 1.0).any()) {
    out.status = std::max(out.status, CorrectionStatus::BoundaryScaled);
    const Vector scaled = out.scaling.cwiseProduct(out.decomp.lambdas);
    out.sigma_hat = out.decomp.q * scaled.asDiagonal() * out.decomp.q.transpose();
  } else {
    out.sigma_hat = std::move(inv.sigma);
  }
  out.sigma_hat = 0.5 * (out.sigma_hat + out.sigma_hat.transpose());
  return out;
}

/// Fallback and negative-eigenvalue handling only, no ellipsoid scaling.
inline CorrectedCovariance invert_without_scaling(const Eigen::Ref<const Matrix>& g,
                                                  const Eigen::Ref<const Matrix>& sample_cov,
                                                  const CorrectionConfig& cfg) {
  InvertedMetric inv = classify_and_invert_metric(g, sample_cov, cfg);
  CorrectedCovariance out;
  out.scaling = Vector::Ones(inv.decomp.lambdas.size());
  out.sigma_hat = std::move(inv.sigma);
  out.decomp = std::move(inv.decomp);
  out.metric_eigs = std::move(inv.metric_eigs);
  out.substituted = std::move(inv.substituted);
  out.status = inv.status;
  return out;
}

/// Derivative of f(A) = Q f(Lambda) Q^T given dA/dtheta, expressed through the
/// transformed eigenvalues f_i and their derivatives f'_i (ordered as the
/// columns of decomp.q). Near-degenerate pairs use f'_i.
inline Matrix transformed_matrix_derivative(const EigenDecomp& decomp, const Eigen::Ref<const Matrix>& da,
                                            const Eigen::Ref<const Vector>& f_vals,
                                            const Eigen::Ref<const Vector>& f_prime, double degenerate_tol = 1e-8) {
  const Eigen::Index n = decomp.lambdas.size();
  const double tol = degenerate_tol * std::max(decomp.lambdas.cwiseAbs().maxCoeff(), 1e-300);
  Matrix j(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const double gap = decomp.lambdas[a] - decomp.lambdas[b];
      j(a, b) = (a == b || std::abs(gap) <= tol) ? f_prime[a] : (f_vals[a] - f_vals[b]) / gap;
    }
  }
  const Matrix inner = decomp.q.transpose() * da * decomp.q;
  return decomp.q * j.cwiseProduct(inner) * decomp.q.transpose();
}

inline Matrix transformed_matrix_derivative(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& da,
                                            const std::function<double(double)>& f,
                                            const std::function<double(double)>& f_prime,
                                            double degenerate_tol = 1e-8) {
  const EigenDecomp d = eigendecompose_sym(a);
  const Eigen::Index n = d.lambdas.size();
  Vector fv(n), fp(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    fv[i] = f(d.lambdas[i]);
    fp[i] = f_prime(d.lambdas[i]);
  }
  return transformed_matrix_derivative(d, da, fv, fp, degenerate_tol);
}

}  // namespace mtmcmc
