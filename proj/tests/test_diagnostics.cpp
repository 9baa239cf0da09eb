#include "mtmcmc/diagnostics.hpp"
#include "test_util.hpp"

using namespace mtmcmc;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

// Two-pass oracle for the moment errors.
MomentErrors moment_oracle(const Matrix& s, const Vector& mu, const Matrix& sigma) {
  const auto n = s.rows();
  const auto d = s.cols();
  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) mean[static_cast<std::size_t>(j)] += s(i, j);
    mean[static_cast<std::size_t>(j)] /= static_cast<double>(n);
  }
  MomentErrors e;
  for (Eigen::Index j = 0; j < d; ++j) e.e1 += std::abs(mean[static_cast<std::size_t>(j)] - mu[j]) / static_cast<double>(d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      double c = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        c += (s(i, a) - mean[static_cast<std::size_t>(a)]) * (s(i, b) - mean[static_cast<std::size_t>(b)]);
      c /= static_cast<double>(n - 1);
      e.e2 += std::abs(c - sigma(a, b)) / static_cast<double>(d * d);
    }
  }
  e.total = 0.5 * (e.e1 + e.e2);
  return e;
}

}  // namespace

TEST(KlHistogram, TwoBinHandValue) {
  EXPECT_NEAR(kl_histogram({0.5, 0.5}, {0.25, 0.75}, 1.0), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(kl_histogram({0.5, 0.5}, {0.25, 0.75}, 1.0), 0.14384, 1e-5);
}

TEST(KlHistogram, EmptyBinsAndZeroTarget) {
  EXPECT_DOUBLE_EQ(kl_histogram({0.0, 1.0}, {0.5, 1.0}, 1.0), 0.0);
  EXPECT_EQ(kl_histogram({0.5, 0.5}, {0.0, 1.0}, 1.0), kInf);
}

TEST(KlMarginals, ExactSamplesGiveSmallDecreasingKl) {
  const double lo = -1.0, hi = 2.0;
  const auto m = truncated_normal_marginal(0.5, 0.4, lo, hi);
  const BoxPrior box(vec({lo}), vec({hi}));
  Rng rng(1);
  std::normal_distribution<double> nd(0.5, std::sqrt(0.4));
  const auto draw = [&](std::size_t n) {
    Matrix s(static_cast<Eigen::Index>(n), 1);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      double x;
      do x = nd(rng);
      while (x < lo || x > hi);
      s(i, 0) = x;
    }
    return s;
  };
  double small = 0, large = 0;
  for (int r = 0; r < 20; ++r) {
    small += kl_divergence_marginals(draw(500), {m}, box).total / 20;
    large += kl_divergence_marginals(draw(20000), {m}, box).total / 20;
  }
  EXPECT_LT(large, small);
  EXPECT_LT(small, 0.05);
  EXPECT_GE(large, 0.0);
}

TEST(KlMarginals, MassWhereTargetIsSmallGivesLargeKl) {
  const auto m = truncated_normal_marginal(0.0, 0.01, -5.0, 5.0);
  Matrix s = Matrix::Constant(100, 1, 4.0);
  EXPECT_GT(kl_divergence_marginals(s, {m}, BoxPrior(vec({-5.0}), vec({5.0}))).total, 10.0);
}

TEST(KlMarginals, TotalIsSumOverDimensions) {
  const auto m = truncated_normal_marginal(0.0, 1.0, -3.0, 3.0);
  Rng rng(2);
  Matrix s(300, 2);
  for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) = standard_normal(2, rng).cwiseMax(-2.9).cwiseMin(2.9).transpose();
  const auto kl = kl_divergence_marginals(s, {m, m}, BoxPrior::cube(2, -3.0, 3.0), 20);
  ASSERT_EQ(kl.marginals.size(), 2u);
  EXPECT_NEAR(kl.total, kl.marginals[0] + kl.marginals[1], 1e-15);
  EXPECT_EQ(kl.bins, 20u);
}

TEST(TruncatedNormal, DensityIntegratesToOne) {
  const auto m = truncated_normal_marginal(1.0, 2.0, -0.5, 3.0);
  double integral = 0.0;
  const int k = 20000;
  const double h = 3.5 / k;
  for (int i = 0; i < k; ++i) integral += m.pdf(-0.5 + (i + 0.5) * h) * h;
  EXPECT_NEAR(integral, 1.0, 1e-8);
  EXPECT_NEAR(m.bin_average(0.0, 1.0), m.cdf(1.0) - m.cdf(0.0), 1e-15);
}

TEST(MomentErrors, PerfectRecoveryIsZero) {
  const Vector mu = vec({1.0, -1.0});
  const Matrix sigma = vec({2.0, 3.0}).asDiagonal();
  const auto e = moment_errors_from(mu, sigma, mu, sigma);
  EXPECT_EQ(e.total, 0.0);
}

TEST(MomentErrors, OneDimensionalFormula) {
  const auto e = moment_errors_from(vec({1.2}), Matrix::Constant(1, 1, 1.1), vec({1.0}), Matrix::Constant(1, 1, 1.0));
  EXPECT_NEAR(e.e1, 0.2, 1e-15);
  EXPECT_NEAR(e.e2, 0.1, 1e-15);
  EXPECT_NEAR(e.total, 0.15, 1e-15);
}

TEST(MomentErrors, MatchesTwoPassOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix s(50, 3);
    for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) = standard_normal(3, rng).transpose();
    const Vector mu = standard_normal(3, rng);
    const Matrix sigma = mtmcmc::test::random_spd(3, rng);
    const auto got = moment_errors(s, mu, sigma);
    const auto want = moment_oracle(s, mu, sigma);
    EXPECT_NEAR(got.e1, want.e1, 1e-12);
    EXPECT_NEAR(got.e2, want.e2, 1e-12);
    EXPECT_NEAR(got.total, want.total, 1e-12);
    // permutation invariance
    Matrix rev = s.colwise().reverse();
    EXPECT_NEAR(moment_errors(rev, mu, sigma).total, got.total, 1e-12);
  }
}

TEST(BimodalErrors, PointMassesAtBothMeans) {
  const std::size_t d = 3;
  const Vector mu1 = Vector::Zero(d), mu2 = Vector::Constant(d, 5.0);
  Matrix s(10, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < 10; ++i) s.row(i) = (i < 5 ? mu1 : mu2).transpose();
  const Matrix id = Matrix::Identity(d, d);
  const auto e = bimodal_errors(s, mu1, mu2, id, id);
  EXPECT_FALSE(e.mode_missed);
  for (const auto& m : e.per_mode) {
    EXPECT_EQ(m.e1, 0.0);
    EXPECT_NEAR(m.e2, 1.0 / d, 1e-15);
  }
  EXPECT_NEAR(e.total, 0.5 / d, 1e-15);
}

TEST(BimodalErrors, MissedModeIsReported) {
  const Vector mu1 = Vector::Zero(2), mu2 = Vector::Constant(2, 5.0);
  Rng rng(4);
  Matrix s(20, 2);
  for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) = 0.1 * standard_normal(2, rng).transpose();
  const auto e = bimodal_errors(s, mu1, mu2, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  EXPECT_TRUE(e.mode_missed);
  EXPECT_EQ(e.counts[1], 0u);
  EXPECT_EQ(e.total, kInf);
}

TEST(BimodalErrors, ComposesPerModeErrors) {
  const Vector mu1 = vec({-3.0, 0.0}), mu2 = vec({3.0, 0.0});
  Rng rng(5);
  Matrix s(400, 2), a(200, 2), b(200, 2);
  for (Eigen::Index i = 0; i < 200; ++i) {
    a.row(i) = (mu1 + standard_normal(2, rng)).cwiseMin(-0.01).transpose();
    b.row(i) = (mu2 + standard_normal(2, rng)).cwiseMax(0.01).transpose();
  }
  // keep the x coordinate on the mode's side so the partition is known
  a.col(1) = a.col(1).cwiseMax(-2.0).cwiseMin(2.0);
  b.col(1) = b.col(1).cwiseMax(-2.0).cwiseMin(2.0);
  s << a, b;
  const Matrix id = Matrix::Identity(2, 2);
  const auto e = bimodal_errors(s, mu1, mu2, id, id);
  EXPECT_EQ(e.counts[0], 200u);
  EXPECT_NEAR(e.total, 0.5 * (moment_oracle(a, mu1, id).total + moment_oracle(b, mu2, id).total), 1e-12);
}

TEST(EvolutionStrategy, RecoversQuadraticMaximum) {
  const Vector opt = vec({0.3, -1.2});
  Matrix p(2, 2);
  p << 2.0, 0.6, 0.6, 1.0;
  const Objective f = [&](const Vector& x) { return -0.5 * (x - opt).dot(p * (x - opt)) + 4.0; };
  EsConfig cfg;
  cfg.budget = 2000;
  const auto r = maximize_loglikelihood(f, BoxPrior::cube(2, -5, 5), cfg);
  EXPECT_LE(r.evaluations, 2000u);
  EXPECT_LT((r.theta - opt).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_NEAR(r.value, 4.0, 1e-8);
}

TEST(EvolutionStrategy, DeterministicForSeed) {
  const Objective f = [](const Vector& x) { return -x.squaredNorm() + std::sin(3 * x[0]); };
  EsConfig cfg;
  cfg.budget = 1000;
  const auto a = maximize_loglikelihood(f, BoxPrior::cube(2, -2, 2), cfg);
  const auto b = maximize_loglikelihood(f, BoxPrior::cube(2, -2, 2), cfg);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.value, b.value);
}

TEST(EvolutionStrategy, FlatObjectiveStaysInside) {
  const Objective f = [](const Vector&) { return -7.0; };
  const BoxPrior box = BoxPrior::cube(3, 1.0, 2.0);
  EsConfig cfg;
  cfg.budget = 500;
  const auto r = maximize_loglikelihood(f, box, cfg);
  EXPECT_TRUE(box.contains(r.theta));
  EXPECT_EQ(r.value, -7.0);
}

TEST(ProfileLikelihood, SeparableGaussianHasClosedForm) {
  const double m0 = 0.4, s0 = 0.5, m1 = -1.0, s1 = 2.0;
  const Objective f = [&](const Vector& x) {
    return -0.5 * std::pow((x[0] - m0) / s0, 2) - 0.5 * std::pow((x[1] - m1) / s1, 2) + 1.0;
  };
  const std::vector<double> grid{-0.5, 0.0, 0.4, 1.0, 1.5};
  const auto pl = profile_loglikelihood(f, BoxPrior::cube(2, -5, 5), 0, grid);
  ASSERT_EQ(pl.size(), grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    EXPECT_EQ(pl[i].value, grid[i]);
    EXPECT_NEAR(pl[i].profile, -0.5 * std::pow((grid[i] - m0) / s0, 2) + 1.0, 1e-6);
    EXPECT_NEAR(pl[i].theta[1], m1, 1e-3);
    EXPECT_EQ(pl[i].theta[0], grid[i]);
  }
}

TEST(ProfileLikelihood, UnidentifiableDirectionIsFlat) {
  const Objective f = [](const Vector& x) { return -std::pow(x[1] - 0.2, 2) - std::pow(x[2] + 0.1, 2); };
  const auto pl = profile_loglikelihood(f, BoxPrior::cube(3, -1, 1), 0, {-0.9, -0.3, 0.3, 0.9});
  for (const auto& p : pl) EXPECT_NEAR(p.profile, 0.0, 1e-6);
}

TEST(ProfileLikelihood, RejectsGridOutsideBox) {
  const Objective f = [](const Vector& x) { return -x.squaredNorm(); };
  EXPECT_THROW(profile_loglikelihood(f, BoxPrior::cube(2, -1, 1), 0, {2.0}), DomainError);
  EXPECT_THROW(profile_loglikelihood(f, BoxPrior::cube(2, -1, 1), 0, {1.0}), DomainError);
}
