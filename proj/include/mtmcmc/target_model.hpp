#pragma once

// Parameter spaces, uniform box priors and Gaussian-noise likelihoods with
// their first and second derivatives and Fisher information.

#include "mtmcmc/core.hpp"

#include <concepts>
#include <optional>
#include <utility>
#include <vector>

namespace mtmcmc {

/// Uniform prior on the box [lower, upper].
class BoxPrior {
 public:
  BoxPrior() = default;
  BoxPrior(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    require_dims(static_cast<std::size_t>(upper_.size()), static_cast<std::size_t>(lower_.size()),
                 "BoxPrior upper bound");
    if (lower_.size() == 0) throw DimensionError("BoxPrior: empty box");
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
      if (!(lower_[i] < upper_[i])) {
        throw DomainError("BoxPrior: lower bound must be below upper bound in coordinate " +
                          std::to_string(i));
      }
    }
    log_density_ = -(upper_ - lower_).array().log().sum();
  }

  static BoxPrior cube(std::size_t dim, double lo, double hi) {
    const auto n = static_cast<Eigen::Index>(dim);
    return BoxPrior(Vector::Constant(n, lo), Vector::Constant(n, hi));
  }

  std::size_t dim() const { return static_cast<std::size_t>(lower_.size()); }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  Vector width() const { return upper_ - lower_; }

  /// Strict interior test.
  bool contains(const Eigen::Ref<const Vector>& theta) const {
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
      if (!(theta[i] > lower_[i] && theta[i] < upper_[i])) return false;
    }
    return true;
  }

  /// Value of the log-density inside the box.
  double log_density() const { return log_density_; }

  Vector sample(Rng& rng) const {
    Vector out(lower_.size());
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
      // uniform01 may return exactly 0; keep strictly inside.
      double u = uniform01(rng);
      while (u <= 0.0) u = uniform01(rng);
      out[i] = lower_[i] + u * (upper_[i] - lower_[i]);
    }
    return out;
  }

 private:
  Vector lower_;
  Vector upper_;
  double log_density_ = 0.0;
};

/// log p(theta) for a uniform box prior: -sum log(b_i - a_i) inside, -inf outside.
inline double log_prior(const Eigen::Ref<const Vector>& theta, const BoxPrior& prior) {
  require_dims(static_cast<std::size_t>(theta.size()), prior.dim(), "log_prior");
  return prior.contains(theta) ? prior.log_density() : kNegInf;
}

/// Observations d_i taken at inputs x_i (observation times for ODE models).
class DataSet {
 public:
  DataSet() = default;
  DataSet(Vector inputs, Vector observations, bool time_series = true)
      : inputs_(std::move(inputs)), observations_(std::move(observations)) {
    if (inputs_.size() != observations_.size()) {
      throw DimensionError("DataSet: inputs and observations differ in length");
    }
    if (inputs_.size() < 1) throw DimensionError("DataSet: at least one observation required");
    if (time_series) {
      for (Eigen::Index i = 1; i < inputs_.size(); ++i) {
        if (!(inputs_[i] > inputs_[i - 1])) {
          throw DomainError("DataSet: observation times must be strictly increasing");
        }
      }
    }
  }

  std::size_t size() const { return static_cast<std::size_t>(observations_.size()); }
  const Vector& inputs() const { return inputs_; }
  const Vector& observations() const { return observations_; }

 private:
  Vector inputs_;
  Vector observations_;
};

/// Model observables f_i and their parameter derivatives.
struct ModelEvaluation {
  Vector f;                             ///< N_D values
  std::optional<Matrix> df;             ///< N_D x N_phi, df(i,k) = d f_i / d phi_k
  std::optional<std::vector<Matrix>> d2f;  ///< N_D entries, each N_phi x N_phi
};

namespace detail {

struct NoiseSplit {
  std::size_t n_data;
  std::size_t n_phi;
  double sigma;
  Vector residual;
};

inline NoiseSplit split_noise(const Eigen::Ref<const Vector>& theta, const DataSet& data,
                              const ModelEvaluation& eval) {
  if (theta.size() < 2) throw DimensionError("parameter vector needs a model part and a noise scale");
  const double sigma = theta[theta.size() - 1];
  if (!(sigma > 0.0)) throw DomainError("noise scale must be positive");
  require_dims(static_cast<std::size_t>(eval.f.size()), data.size(), "model evaluation");
  return {data.size(), static_cast<std::size_t>(theta.size() - 1), sigma, data.observations() - eval.f};
}

inline const Matrix& require_df(const ModelEvaluation& eval, const NoiseSplit& s) {
  if (!eval.df) throw std::invalid_argument("model evaluation lacks first derivatives");
  if (static_cast<std::size_t>(eval.df->rows()) != s.n_data ||
      static_cast<std::size_t>(eval.df->cols()) != s.n_phi) {
    throw DimensionError("model evaluation: df has wrong shape");
  }
  return *eval.df;
}

inline const std::vector<Matrix>& require_d2f(const ModelEvaluation& eval, const NoiseSplit& s) {
  if (!eval.d2f) throw std::invalid_argument("model evaluation lacks second derivatives");
  require_dims(eval.d2f->size(), s.n_data, "model evaluation d2f");
  return *eval.d2f;
}

}  // namespace detail

/// Gaussian i.i.d. noise log-likelihood log N(D | F(phi), sigma_n^2 I).
inline double log_likelihood(const Eigen::Ref<const Vector>& theta, const DataSet& data,
                             const ModelEvaluation& eval) {
  const auto s = detail::split_noise(theta, data, eval);
  const double n = static_cast<double>(s.n_data);
  return -0.5 * n * kLog2Pi - n * std::log(s.sigma) - 0.5 * s.residual.squaredNorm() / (s.sigma * s.sigma);
}

inline Vector grad_log_likelihood(const Eigen::Ref<const Vector>& theta, const DataSet& data,
                                  const ModelEvaluation& eval) {
  const auto s = detail::split_noise(theta, data, eval);
  const Matrix& df = detail::require_df(eval, s);
  const double inv2 = 1.0 / (s.sigma * s.sigma);
  Vector g(theta.size());
  g.head(static_cast<Eigen::Index>(s.n_phi)) = inv2 * (df.transpose() * s.residual);
  g[theta.size() - 1] = -static_cast<double>(s.n_data) / s.sigma + s.residual.squaredNorm() * inv2 / s.sigma;
  return g;
}

/// Second derivative of the log-likelihood. The (sigma, sigma) entry is
/// N_D/sigma^2 - 3 sum r^2 / sigma^4.
inline Matrix hessian_log_likelihood(const Eigen::Ref<const Vector>& theta, const DataSet& data,
                                     const ModelEvaluation& eval) {
  const auto s = detail::split_noise(theta, data, eval);
  const Matrix& df = detail::require_df(eval, s);
  const auto& d2f = detail::require_d2f(eval, s);
  const auto np = static_cast<Eigen::Index>(s.n_phi);
  const double inv2 = 1.0 / (s.sigma * s.sigma);
  Matrix h = Matrix::Zero(theta.size(), theta.size());
  Matrix curv = Matrix::Zero(np, np);
  for (std::size_t i = 0; i < s.n_data; ++i) {
    curv.noalias() += s.residual[static_cast<Eigen::Index>(i)] * d2f[i];
  }
  h.topLeftCorner(np, np) = inv2 * (curv - df.transpose() * df);
  const Vector cross = -2.0 * inv2 / s.sigma * (df.transpose() * s.residual);
  h.col(np).head(np) = cross;
  h.row(np).head(np) = cross.transpose();
  h(np, np) = static_cast<double>(s.n_data) * inv2 - 3.0 * inv2 * inv2 * s.residual.squaredNorm();
  return 0.5 * (h + h.transpose());
}

/// Expected negative Hessian under the Gaussian noise model.
inline Matrix fisher_information(const Eigen::Ref<const Vector>& theta, const DataSet& data,
                                 const ModelEvaluation& eval) {
  const auto s = detail::split_noise(theta, data, eval);
  const Matrix& df = detail::require_df(eval, s);
  const auto np = static_cast<Eigen::Index>(s.n_phi);
  const double inv2 = 1.0 / (s.sigma * s.sigma);
  Matrix fim = Matrix::Zero(theta.size(), theta.size());
  fim.topLeftCorner(np, np) = inv2 * (df.transpose() * df);
  fim(np, np) = 2.0 * static_cast<double>(s.n_data) * inv2;
  return fim;
}

/// d(Fisher)/d(theta_j) for every coordinate j; needs second model derivatives.
inline std::vector<Matrix> fisher_information_derivatives(const Eigen::Ref<const Vector>& theta,
                                                          const DataSet& data, const ModelEvaluation& eval) {
  const auto s = detail::split_noise(theta, data, eval);
  const Matrix& df = detail::require_df(eval, s);
  const auto& d2f = detail::require_d2f(eval, s);
  const auto np = static_cast<Eigen::Index>(s.n_phi);
  const Eigen::Index n = theta.size();
  const double inv2 = 1.0 / (s.sigma * s.sigma);
  std::vector<Matrix> out(static_cast<std::size_t>(n), Matrix::Zero(n, n));
  for (Eigen::Index j = 0; j < np; ++j) {
    Matrix block = Matrix::Zero(np, np);
    for (std::size_t i = 0; i < s.n_data; ++i) {
      const Vector dfi = df.row(static_cast<Eigen::Index>(i)).transpose();
      const Vector ddfi = d2f[i].col(j);
      block.noalias() += ddfi * dfi.transpose() + dfi * ddfi.transpose();
    }
    out[static_cast<std::size_t>(j)].topLeftCorner(np, np) = inv2 * block;
  }
  Matrix& ds = out[static_cast<std::size_t>(np)];
  ds.topLeftCorner(np, np) = -2.0 * inv2 / s.sigma * (df.transpose() * df);
  ds(np, np) = -4.0 * static_cast<double>(s.n_data) * inv2 / s.sigma;
  return out;
}

// ---------------------------------------------------------------------------
// Target models

enum class MetricKind { Hessian, Fisher, SampleCovariance };

enum class DerivativeOrder {
  Value,              ///< log-likelihood only
  Gradient,           ///< plus gradient
  Metric,             ///< plus metric G (negative Hessian or Fisher)
  MetricDerivatives,  ///< plus dG/dtheta_j
};

struct EvalRequest {
  DerivativeOrder order = DerivativeOrder::Value;
  MetricKind metric = MetricKind::Fisher;
};

/// Result of a target evaluation. Fields beyond `loglike` are empty when not
/// requested. `metric` is the untempered metric (gamma = 1).
struct TargetEvaluation {
  double loglike = kNegInf;
  Vector grad;
  Matrix metric;
  std::vector<Matrix> metric_derivs;

  bool inside() const { return loglike > kNegInf; }
};

template <class T>
concept TargetModel = requires(const T& t, const ParamVector& theta, EvalRequest req, MetricKind kind) {
  { t.dim() } -> std::convertible_to<std::size_t>;
  { t.prior() } -> std::convertible_to<const BoxPrior&>;
  { t.evaluate(theta, req) } -> std::same_as<TargetEvaluation>;
  { t.supports(kind) } -> std::convertible_to<bool>;
  { t.supports_metric_derivatives() } -> std::convertible_to<bool>;
};

/// Evaluates a target, short-circuiting to -inf outside the prior box so the
/// model is never invoked at invalid parameters.
template <TargetModel M>
TargetEvaluation evaluate_target(const M& model, const ParamVector& theta, EvalRequest req) {
  require_dims(static_cast<std::size_t>(theta.size()), model.dim(), "evaluate_target");
  if (!model.prior().contains(theta)) return {};
  return model.evaluate(theta, req);
}

/// Value zeta * loglike + log prior and its gradient (uniform prior adds none).
template <TargetModel M>
std::pair<double, Vector> annealed_log_posterior_and_grad(const ParamVector& theta, double zeta, const M& model) {
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw DomainError("annealing exponent must lie in [0, 1]");
  const double lp = log_prior(theta, model.prior());
  if (lp == kNegInf) return {kNegInf, Vector::Zero(theta.size())};
  const auto ev = model.evaluate(theta, {DerivativeOrder::Gradient, MetricKind::Fisher});
  // zeta = 0 still multiplies a finite log-likelihood; avoid 0 * -inf.
  const double value = (zeta == 0.0 ? 0.0 : zeta * ev.loglike) + lp;
  return {value, zeta * ev.grad};
}

/// Observable model f(x; phi) with analytic derivatives.
template <class T>
concept Observable = requires(const T& t, const Vector& phi, int order) {
  { t.param_dim() } -> std::convertible_to<std::size_t>;
  { t.evaluate(phi, order) } -> std::same_as<ModelEvaluation>;
};

/// Target built from an observable model, a data set and Gaussian noise with
/// unknown scale. theta = (phi, sigma_n).
template <Observable Obs>
class DataLikelihoodTarget {
 public:
  DataLikelihoodTarget(Obs observable, DataSet data, BoxPrior prior)
      : obs_(std::move(observable)), data_(std::move(data)), prior_(std::move(prior)) {
    require_dims(prior_.dim(), obs_.param_dim() + 1, "DataLikelihoodTarget prior");
  }

  std::size_t dim() const { return prior_.dim(); }
  const BoxPrior& prior() const { return prior_; }
  const DataSet& data() const { return data_; }
  const Obs& observable() const { return obs_; }

  bool supports(MetricKind kind) const { return kind != MetricKind::SampleCovariance; }
  bool supports_metric_derivatives() const { return true; }

  TargetEvaluation evaluate(const ParamVector& theta, EvalRequest req) const {
    TargetEvaluation out;
    const Vector phi = theta.head(theta.size() - 1);
    int order = 0;
    if (req.order != DerivativeOrder::Value) order = 1;
    if ((req.order >= DerivativeOrder::Metric && req.metric == MetricKind::Hessian) ||
        req.order == DerivativeOrder::MetricDerivatives) {
      order = 2;
    }
    ModelEvaluation ev;
    try {
      ev = obs_.evaluate(phi, order);
    } catch (const std::runtime_error&) {
      return out;  // model failure: zero likelihood
    }
    if (!ev.f.allFinite()) return out;
    out.loglike = log_likelihood(theta, data_, ev);
    if (req.order == DerivativeOrder::Value) return out;
    out.grad = grad_log_likelihood(theta, data_, ev);
    if (req.order == DerivativeOrder::Gradient) return out;
    out.metric = req.metric == MetricKind::Hessian ? Matrix(-hessian_log_likelihood(theta, data_, ev))
                                                   : fisher_information(theta, data_, ev);
    if (req.order == DerivativeOrder::MetricDerivatives) {
      out.metric_derivs = fisher_information_derivatives(theta, data_, ev);
    }
    return out;
  }

 private:
  Obs obs_;
  DataSet data_;
  BoxPrior prior_;
};

}  // namespace mtmcmc
