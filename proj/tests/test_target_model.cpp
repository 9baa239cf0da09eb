#include "mtmcmc/models.hpp"
#include "mtmcmc/target_model.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <numeric>

using namespace mtmcmc;
using mtmcmc::test::fd_gradient;
using mtmcmc::test::fd_jacobian;
using mtmcmc::test::rel_error;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

// f(x; a, b) = a exp(-b x) + a b x
struct CurvedObservable {
  Vector x;
  std::size_t param_dim() const { return 2; }
  ModelEvaluation evaluate(const Vector& phi, int order) const {
    const double a = phi[0], b = phi[1];
    ModelEvaluation ev;
    const Vector e = (-b * x.array()).exp();
    ev.f = a * e.array() + a * b * x.array();
    if (order >= 1) {
      Matrix df(x.size(), 2);
      df.col(0) = e.array() + b * x.array();
      df.col(1) = -a * x.array() * e.array() + a * x.array();
      ev.df = df;
    }
    if (order >= 2) {
      std::vector<Matrix> d2f;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        Matrix h(2, 2);
        h(0, 0) = 0.0;
        h(0, 1) = h(1, 0) = -x[i] * e[i] + x[i];
        h(1, 1) = a * x[i] * x[i] * e[i];
        d2f.push_back(h);
      }
      ev.d2f = d2f;
    }
    return ev;
  }
};

DataSet curved_data() { return DataSet(vec({0.2, 0.7, 1.1, 1.9, 2.5}), vec({1.3, 0.4, 1.8, 0.9, 2.2})); }

}  // namespace

TEST(LogPrior, UnitBoxInside) { EXPECT_DOUBLE_EQ(log_prior(vec({0.5}), BoxPrior::cube(1, 0, 1)), 0.0); }

TEST(LogPrior, Outside) { EXPECT_EQ(log_prior(vec({2.0}), BoxPrior::cube(1, 0, 1)), kNegInf); }

TEST(LogPrior, TwoDimensionalBox) {
  EXPECT_NEAR(log_prior(vec({5, 5}), BoxPrior::cube(2, 0, 10)), -4.605170185988091, 1e-12);
}

TEST(LogPrior, DimensionMismatchThrows) {
  EXPECT_THROW(log_prior(vec({0.5, 0.5}), BoxPrior::cube(1, 0, 1)), DimensionError);
}

TEST(BoxPrior, RejectsInvertedBounds) { EXPECT_THROW(BoxPrior(vec({1.0}), vec({0.0})), DomainError); }

TEST(DataSet, RejectsNonIncreasingTimes) {
  EXPECT_THROW(DataSet(vec({0, 1, 1}), vec({1, 2, 3})), DomainError);
  EXPECT_THROW(DataSet(vec({0, 1}), vec({1})), DimensionError);
}

TEST(LogLikelihood, ZeroResidualUnitNoise) {
  DataSet d(vec({1.0}), vec({3.0}));
  ModelEvaluation ev{vec({3.0}), std::nullopt, std::nullopt};
  EXPECT_NEAR(log_likelihood(vec({0.0, 1.0}), d, ev), -0.9189385332046727, 1e-12);
}

TEST(LogLikelihood, UnitResiduals) {
  DataSet d(vec({1.0, 2.0}), vec({1.0, 1.0}));
  ModelEvaluation ev{vec({0.0, 0.0}), std::nullopt, std::nullopt};
  EXPECT_NEAR(log_likelihood(vec({0.0, 1.0}), d, ev), -2.8378770664093453, 1e-12);
}

TEST(LogLikelihood, NoiseScaleTwo) {
  DataSet d(vec({1.0}), vec({0.0}));
  ModelEvaluation ev{vec({0.0}), std::nullopt, std::nullopt};
  EXPECT_NEAR(log_likelihood(vec({0.0, 2.0}), d, ev), -0.9189385332046727 - std::log(2.0), 1e-12);
}

TEST(LogLikelihood, NonPositiveNoiseThrows) {
  DataSet d(vec({1.0}), vec({0.0}));
  ModelEvaluation ev{vec({0.0}), std::nullopt, std::nullopt};
  EXPECT_THROW(log_likelihood(vec({0.0, 0.0}), d, ev), DomainError);
}

TEST(LogLikelihood, PermutationInvariant) {
  const DataSet d = curved_data();
  CurvedObservable obs{d.inputs()};
  const Vector theta = vec({1.2, 0.7, 0.8});
  const double base = log_likelihood(theta, d, obs.evaluate(theta.head(2), 0));
  // Shuffle (x, d) pairs; the time-series check is disabled for the shuffled copy.
  std::vector<Eigen::Index> perm(5);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  Vector xs(5), ds(5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    xs[i] = d.inputs()[perm[static_cast<std::size_t>(i)]];
    ds[i] = d.observations()[perm[static_cast<std::size_t>(i)]];
  }
  DataSet shuffled(xs, ds, false);
  CurvedObservable obs2{xs};
  EXPECT_NEAR(log_likelihood(theta, shuffled, obs2.evaluate(theta.head(2), 0)), base, 1e-12);
}

TEST(GradLogLikelihood, ZeroResiduals) {
  DataSet d(vec({1.0, 2.0, 3.0}), vec({1.0, 2.0, 3.0}));
  LinearObservable obs{d.inputs()};
  const Vector g = grad_log_likelihood(vec({1.0, 0.5}), d, obs.evaluate(vec({1.0}), 1));
  EXPECT_DOUBLE_EQ(g[0], 0.0);
  EXPECT_DOUBLE_EQ(g[1], -3.0 / 0.5);
}

TEST(GradLogLikelihood, LinearHandExample) {
  DataSet d(vec({1.0}), vec({2.0}));
  LinearObservable obs{d.inputs()};
  const Vector theta = vec({1.0, 1.0});
  const Vector g = grad_log_likelihood(theta, d, obs.evaluate(theta.head(1), 1));
  EXPECT_NEAR(g[0], 1.0, 1e-12);
  EXPECT_NEAR(g[1], 0.0, 1e-12);
  const Vector fd = fd_gradient([&](const Vector& t) { return log_likelihood(t, d, obs.evaluate(t.head(1), 0)); },
                                theta);
  EXPECT_LT(rel_error(g, fd, 1.0), 1e-6);
}

TEST(GradLogLikelihood, MissingDerivativesThrow) {
  DataSet d(vec({1.0}), vec({2.0}));
  ModelEvaluation ev{vec({1.0}), std::nullopt, std::nullopt};
  EXPECT_THROW(grad_log_likelihood(vec({1.0, 1.0}), d, ev), std::invalid_argument);
  EXPECT_THROW(hessian_log_likelihood(vec({1.0, 1.0}), d, ev), std::invalid_argument);
}

TEST(GradLogLikelihood, MatchesFiniteDifferences) {
  const DataSet d = curved_data();
  CurvedObservable obs{d.inputs()};
  const auto ll = [&](const Vector& t) { return log_likelihood(t, d, obs.evaluate(t.head(2), 0)); };
  Rng rng(11);
  for (int k = 0; k < 20; ++k) {
    const Vector theta = vec({0.5 + 2 * uniform01(rng), 0.1 + uniform01(rng), 0.3 + uniform01(rng)});
    const Vector g = grad_log_likelihood(theta, d, obs.evaluate(theta.head(2), 1));
    EXPECT_LT(rel_error(g, fd_gradient(ll, theta)), 1e-5);
  }
}

TEST(HessianLogLikelihood, LinearZeroResidual) {
  DataSet d(vec({1.0}), vec({1.5}));
  LinearObservable obs{d.inputs()};
  const Vector theta = vec({1.5, 1.0});
  const Matrix h = hessian_log_likelihood(theta, d, obs.evaluate(theta.head(1), 2));
  EXPECT_NEAR(h(0, 0), -1.0, 1e-12);
  EXPECT_NEAR(h(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(h(1, 0), 0.0, 1e-12);
}

TEST(HessianLogLikelihood, NoiseEntryMatchesRederivedForm) {
  // d2/dsigma2 of -N log s - R/(2 s^2) = N/s^2 - 3R/s^4
  DataSet d(vec({1.0, 2.0}), vec({0.5, 3.0}));
  LinearObservable obs{d.inputs()};
  const Vector theta = vec({1.0, 0.7});
  const Matrix h = hessian_log_likelihood(theta, d, obs.evaluate(theta.head(1), 2));
  const double r2 = 0.25 + 1.0;
  EXPECT_NEAR(h(1, 1), 2 / (0.7 * 0.7) - 3 * r2 / std::pow(0.7, 4), 1e-10);
}

TEST(HessianLogLikelihood, MatchesFiniteDifferencesOfGradient) {
  const DataSet d = curved_data();
  CurvedObservable obs{d.inputs()};
  const auto grad = [&](const Vector& t) { return grad_log_likelihood(t, d, obs.evaluate(t.head(2), 1)); };
  Rng rng(12);
  for (int k = 0; k < 20; ++k) {
    const Vector theta = vec({0.5 + 2 * uniform01(rng), 0.1 + uniform01(rng), 0.3 + uniform01(rng)});
    const Matrix h = hessian_log_likelihood(theta, d, obs.evaluate(theta.head(2), 2));
    EXPECT_LT(rel_error(h, fd_jacobian(grad, theta)), 1e-4);
    EXPECT_LT((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(FisherInformation, LinearClosedForm) {
  DataSet d(vec({1.0}), vec({0.3}));
  LinearObservable obs{d.inputs()};
  const Matrix f = fisher_information(vec({1.0, 1.0}), d, obs.evaluate(vec({1.0}), 1));
  EXPECT_NEAR(f(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(f(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(f(1, 1), 2.0, 1e-12);
}

TEST(FisherInformation, MonteCarloAverageOfNegativeHessian) {
  // E over data d ~ N(f, sigma^2) of -Hessian
  const Vector theta = vec({1.0, 1.0});
  LinearObservable obs{vec({1.0})};
  const ModelEvaluation ev = obs.evaluate(theta.head(1), 2);
  Rng rng(5);
  std::normal_distribution<double> nd;
  Matrix acc = Matrix::Zero(2, 2);
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    DataSet d(vec({1.0}), vec({ev.f[0] + nd(rng)}));
    acc -= hessian_log_likelihood(theta, d, ev);
  }
  acc /= n;
  const Matrix f = fisher_information(theta, DataSet(vec({1.0}), vec({1.0})), ev);
  EXPECT_NEAR(acc(0, 0), f(0, 0), 2e-2 * f(0, 0));
  EXPECT_NEAR(acc(1, 1), f(1, 1), 2e-2 * f(1, 1));
  EXPECT_NEAR(acc(0, 1), 0.0, 2e-2);
}

TEST(FisherInformation, ZeroSensitivities) {
  DataSet d(vec({1.0, 2.0, 3.0}), vec({0.0, 0.0, 0.0}));
  ModelEvaluation ev{vec({0.0, 0.0, 0.0}), Matrix::Zero(3, 2), std::nullopt};
  const Matrix f = fisher_information(vec({1.0, 1.0, 0.5}), d, ev);
  EXPECT_TRUE(f.topLeftCorner(2, 2).isZero(0.0));
  EXPECT_DOUBLE_EQ(f(2, 2), 2.0 * 3 / 0.25);
}

TEST(FisherInformation, PositiveSemidefinite) {
  const DataSet d = curved_data();
  CurvedObservable obs{d.inputs()};
  Rng rng(13);
  for (int k = 0; k < 20; ++k) {
    const Vector theta = vec({0.5 + 2 * uniform01(rng), 0.1 + uniform01(rng), 0.3 + uniform01(rng)});
    const Matrix f = fisher_information(theta, d, obs.evaluate(theta.head(2), 1));
    Eigen::SelfAdjointEigenSolver<Matrix> es(f);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * es.eigenvalues().maxCoeff());
  }
}

TEST(FisherInformation, DerivativesMatchFiniteDifferences) {
  const DataSet d = curved_data();
  CurvedObservable obs{d.inputs()};
  const Vector theta = vec({1.3, 0.6, 0.9});
  const auto dg = fisher_information_derivatives(theta, d, obs.evaluate(theta.head(2), 2));
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double h = 1e-6;
    Vector tp = theta, tm = theta;
    tp[j] += h;
    tm[j] -= h;
    const Matrix fd = (fisher_information(tp, d, obs.evaluate(tp.head(2), 1)) -
                       fisher_information(tm, d, obs.evaluate(tm.head(2), 1))) /
                      (2 * h);
    EXPECT_LT(rel_error(dg[static_cast<std::size_t>(j)], fd, 1e-3), 1e-5) << "j=" << j;
  }
}

TEST(AnnealedPosterior, PriorOnlyStage) {
  GaussianTarget t(vec({0, 0}), Matrix::Identity(2, 2), BoxPrior::cube(2, -10, 10));
  const auto [v, g] = annealed_log_posterior_and_grad(vec({1, 2}), 0.0, t);
  EXPECT_DOUBLE_EQ(v, log_prior(vec({1, 2}), t.prior()));
  EXPECT_TRUE(g.isZero(0.0));
}

TEST(AnnealedPosterior, PosteriorStageAndLinearity) {
  GaussianTarget t(vec({0.5, -1}), Matrix::Identity(2, 2), BoxPrior::cube(2, -10, 10));
  const Vector th = vec({1, 2});
  const auto [v1, g1] = annealed_log_posterior_and_grad(th, 1.0, t);
  const auto [vh, gh] = annealed_log_posterior_and_grad(th, 0.5, t);
  const double ll = t.evaluate(th, {}).loglike;
  EXPECT_NEAR(v1, ll + log_prior(th, t.prior()), 1e-12);
  EXPECT_TRUE((gh - 0.5 * g1).isZero(0.0));
  EXPECT_THROW(annealed_log_posterior_and_grad(th, 1.5, t), DomainError);
}

TEST(EvaluateTarget, OutsideBoxSkipsModel) {
  struct Counting {
    mutable int calls = 0;
    BoxPrior box = BoxPrior::cube(1, 0, 1);
    std::size_t dim() const { return 1; }
    const BoxPrior& prior() const { return box; }
    bool supports(MetricKind) const { return true; }
    bool supports_metric_derivatives() const { return false; }
    TargetEvaluation evaluate(const ParamVector&, EvalRequest) const {
      ++calls;
      return {0.0, {}, {}, {}};
    }
  } c;
  EXPECT_EQ(evaluate_target(c, vec({2.0}), {}).loglike, kNegInf);
  EXPECT_EQ(c.calls, 0);
  EXPECT_EQ(evaluate_target(c, vec({0.5}), {}).loglike, 0.0);
  EXPECT_EQ(c.calls, 1);
}

TEST(GaussianMixture, DerivativesMatchFiniteDifferences) {
  Rng rng(3);
  const Matrix c = random_correlation_matrix(3, rng);
  GaussianMixtureTarget t({vec({-1, -1, -1}), vec({1, 1, 1})}, {c, c}, BoxPrior::cube(3, -10, 10));
  const auto ll = [&](const Vector& x) { return t.evaluate(x, {}).loglike; };
  const auto grad = [&](const Vector& x) { return t.evaluate(x, {DerivativeOrder::Gradient, MetricKind::Hessian}).grad; };
  for (int k = 0; k < 10; ++k) {
    const Vector x = standard_normal(3, rng);
    const auto ev = t.evaluate(x, {DerivativeOrder::Metric, MetricKind::Hessian});
    EXPECT_LT(rel_error(ev.grad, fd_gradient(ll, x)), 1e-5);
    EXPECT_LT(rel_error(ev.metric, -fd_jacobian(grad, x)), 1e-4);
  }
}

TEST(RandomCorrelation, UnitDiagonalAndPositiveDefinite) {
  Rng rng(9);
  const Matrix c = random_correlation_matrix(6, rng);
  EXPECT_TRUE(c.diagonal().isOnes(1e-14));
  EXPECT_LT((c - c.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(Eigen::LLT<Matrix>(c).info(), Eigen::Success);
}
