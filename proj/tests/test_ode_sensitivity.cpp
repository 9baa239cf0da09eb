#include "mtmcmc/ode_sensitivity.hpp"
#include "mtmcmc/pharma_model.hpp"
#include "test_util.hpp"

using namespace mtmcmc;
using mtmcmc::test::rel_error;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::copy(v.begin(), v.end(), out.data());
  return out;
}

Vector pharma_truth_phi() { return PharmaScenario::reference().truth.head(kPharmaParams); }

// dY/dt = 0, Y(0) = 3: no parameter dependence at all.
OdeSystem constant_system() {
  OdeSystem s;
  s.n_state = 1;
  s.n_param = 2;
  s.rhs = [](const Vector&, const Vector&, Vector& dy) { dy[0] = 0.0; };
  s.jac_state = [](const Vector&, const Vector&, Matrix& a) { a.setZero(); };
  s.jac_param = [](const Vector&, const Vector&, Matrix& b) { b.setZero(); };
  s.hess_state = [](const Vector&, const Vector&, std::vector<Matrix>& c) { c[0].setZero(); };
  s.hess_param_state = [](const Vector&, const Vector&, std::vector<Matrix>& d) {
    for (auto& m : d) m.setZero();
  };
  s.hess_param = [](const Vector&, const Vector&, std::vector<Matrix>& j) { j[0].setZero(); };
  s.init = [](const Vector&) { return Vector::Constant(1, 3.0); };
  s.init_jac = [](const Vector&) { return Matrix::Zero(1, 2); };
  s.init_hess = [](const Vector&) { return std::vector<Matrix>{Matrix::Zero(2, 2)}; };
  return s;
}

SensitivitySolution pharma_solution(const Vector& phi, const std::vector<double>& times, double tol, int order,
                                    bool with_doses = true) {
  const auto sc = PharmaScenario::reference();
  static const OdeSystem sys = pharma_system_unchecked(sc.d1, sc.capacity);
  DoseSchedule doses;
  if (with_doses) doses.times = sc.dose_times;
  IntegrationOptions opt;
  opt.tol = tol;
  opt.order = order;
  return integrate_extended(sys, phi, times, doses, opt);
}

}  // namespace

TEST(Integrate, ExponentialDecayMatchesClosedForm) {
  const OdeSystem sys = exponential_decay_system();
  const double a = 0.7, y0 = 2.5, t = 2.0;
  IntegrationOptions opt;
  opt.tol = 1e-10;
  const auto sol = integrate_extended(sys, vec({a, y0}), {t}, {}, opt);
  const double e = std::exp(-a * t);
  EXPECT_NEAR(sol.y[0][0], y0 * e, 1e-6);
  EXPECT_NEAR(sol.s[0](0, 0), -t * y0 * e, 1e-6);
  EXPECT_NEAR(sol.s[0](0, 1), e, 1e-6);
  EXPECT_NEAR(sol.h[0][0](0, 0), t * t * y0 * e, 1e-6);
  EXPECT_NEAR(sol.h[0][0](0, 1), -t * e, 1e-6);
  EXPECT_NEAR(sol.h[0][0](1, 1), 0.0, 1e-12);
}

TEST(Integrate, ErrorShrinksWithTolerance) {
  const OdeSystem sys = exponential_decay_system();
  const double a = 1.3, y0 = 1.0;
  double prev = kInf;
  for (double tol : {1e-4, 1e-7, 1e-10}) {
    IntegrationOptions opt;
    opt.tol = tol;
    const auto sol = integrate_extended(sys, vec({a, y0}), {1.0, 3.0}, {}, opt);
    const double err = std::abs(sol.y[1][0] - std::exp(-3.0 * a)) + std::abs(sol.s[1](0, 0) + 3.0 * std::exp(-3.0 * a));
    EXPECT_LT(err, 100 * tol);
    EXPECT_LT(err, prev);
    prev = err;
  }
}

TEST(Integrate, NoParameterDependenceGivesZeroSensitivities) {
  const auto sol = integrate_extended(constant_system(), vec({1, 2}), {0.0, 1.0, 5.0}, {});
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(sol.y[i][0], 3.0);
    EXPECT_TRUE(sol.s[i].isZero(0.0));
    EXPECT_TRUE(sol.h[i][0].isZero(0.0));
  }
}

TEST(Integrate, RepeatedAndZeroOutputTimes) {
  const OdeSystem sys = exponential_decay_system();
  const auto sol = integrate_extended(sys, vec({1.0, 2.0}), {0.0, 0.0, 1.0, 1.0}, {});
  ASSERT_EQ(sol.y.size(), 4u);
  EXPECT_EQ(sol.y[0][0], 2.0);
  EXPECT_EQ(sol.y[1][0], 2.0);
  EXPECT_EQ(sol.y[2][0], sol.y[3][0]);
}

TEST(Integrate, RejectsDecreasingOutputTimes) {
  EXPECT_THROW(integrate_extended(exponential_decay_system(), vec({1, 1}), {2.0, 1.0}, {}), DomainError);
}

TEST(Integrate, FirstOrderRunMatchesSecondOrderRun) {
  const Vector phi = pharma_truth_phi();
  const auto s1 = pharma_solution(phi, {30.0, 60.0}, 1e-10, 1);
  const auto s2 = pharma_solution(phi, {30.0, 60.0}, 1e-10, 2);
  EXPECT_TRUE(s1.h.empty());
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_LT(rel_error(s1.y[i], s2.y[i], 1e-6), 1e-7);
    EXPECT_LT(rel_error(s1.s[i], s2.s[i], 1e-6), 1e-6);
  }
}

TEST(DerivativeCheck, ExponentialDecayCallbacks) {
  const auto chk = check_ode_derivatives(exponential_decay_system(), vec({1.3}), vec({0.4, 2.0}));
  EXPECT_TRUE(chk.ok) << chk.detail;
}

TEST(DerivativeCheck, DetectsWrongJacobian) {
  OdeSystem sys = exponential_decay_system();
  sys.jac_state = [](const Vector&, const Vector& phi, Matrix& a) { a(0, 0) = -2.0 * phi[0]; };
  EXPECT_FALSE(check_ode_derivatives(sys, vec({1.3}), vec({0.4, 2.0})).ok);
}

TEST(Pharma, SystemPassesDerivativeCheck) {
  PharmaParams p;
  p.phi = pharma_truth_phi();
  EXPECT_NO_THROW(pharma_system(p));
}

TEST(Pharma, SensitivitiesMatchFiniteDifferences) {
  const Vector phi = pharma_truth_phi();
  const std::vector<double> t{30.0};
  const auto sol = pharma_solution(phi, t, 1e-11, 2);
  for (Eigen::Index k = 0; k < phi.size(); ++k) {
    const double h = 1e-5 * std::max(1.0, std::abs(phi[k]));
    Vector pp = phi, pm = phi;
    pp[k] += h;
    pm[k] -= h;
    const auto up = pharma_solution(pp, t, 1e-11, 1);
    const auto dn = pharma_solution(pm, t, 1e-11, 1);
    const Vector fd_s = (up.y[0] - dn.y[0]) / (2 * h);
    EXPECT_LT(rel_error(Vector(sol.s[0].col(k)), fd_s, 1e-3), 1e-4) << "parameter " << k;
    // second derivatives from differences of first sensitivities
    const Matrix fd_h = (up.s[0] - dn.s[0]) / (2 * h);
    for (std::size_t i = 0; i < kPharmaStates; ++i) {
      const Vector analytic = sol.h[0][i].row(k).transpose();
      EXPECT_LT(rel_error(analytic, Vector(fd_h.row(static_cast<Eigen::Index>(i)).transpose()), 1e-2), 1e-3)
          << "state " << i << " parameter " << k;
    }
  }
}

TEST(Pharma, SecondSensitivitiesAreSymmetric) {
  const auto sol = pharma_solution(pharma_truth_phi(), {20.0, 72.0}, 1e-8, 2);
  for (const auto& per_time : sol.h)
    for (const auto& h : per_time) EXPECT_TRUE(h.isApprox(h.transpose()));
}

TEST(Pharma, DoseResetsDrugAndKeepsCellsContinuous) {
  const auto sol = pharma_solution(pharma_truth_phi(), {12.0, 12.0 + 1e-7}, 1e-10, 1);
  EXPECT_NEAR(sol.y[0][0], 0.0, 1e-12);
  EXPECT_NEAR(sol.y[1][0], 1.0, 1e-6);
  EXPECT_TRUE(sol.s[1].row(0).isZero(1e-6));
  EXPECT_LT((sol.y[1].tail(3) - sol.y[0].tail(3)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Pharma, DrugDecaysExponentiallyBetweenDoses) {
  const Vector phi = pharma_truth_phi();
  const auto sol = pharma_solution(phi, {14.0}, 1e-10, 0);
  EXPECT_NEAR(sol.y[0][0], std::exp(-phi[0] * 0.5), 1e-8);
}

TEST(Pharma, UntreatedLogisticGrowth) {
  // No drug, no transfer to Q and Q0 = 0: P follows the logistic curve.
  const auto sc = PharmaScenario::reference();
  Vector phi = pharma_truth_phi();
  phi[2] = 0.0;
  phi[6] = sc.d1;
  const auto sol = pharma_solution(phi, {10.0, 50.0}, 1e-11, 0, false);
  const double lam = phi[3], k = sc.capacity, p0 = sc.d1;
  for (std::size_t i = 0; i < 2; ++i) {
    const double t = sol.times[i];
    EXPECT_NEAR(sol.y[i][1], k / (1 + (k / p0 - 1) * std::exp(-lam * t)), 1e-7);
    EXPECT_NEAR(sol.y[i][0], 0.0, 1e-14);
    EXPECT_NEAR(sol.y[i][2], 0.0, 1e-14);
  }
}

TEST(Pharma, ObservableStartsAtFirstObservation) {
  const auto sc = PharmaScenario::reference();
  const PharmaObservable obs(sc.times, sc.dose_times, sc.d1, sc.capacity);
  const auto ev = obs.evaluate(pharma_truth_phi(), 2);
  EXPECT_DOUBLE_EQ(ev.f[0], sc.d1);
  EXPECT_TRUE(ev.df->row(0).isZero(1e-15));
  ASSERT_EQ(ev.f.size(), 25);
}

TEST(Pharma, InvalidParametersRejected) {
  PharmaParams p;
  p.phi = pharma_truth_phi();
  p.phi[6] = 50.0;
  EXPECT_THROW(p.validate(), DomainError);
  p.phi[6] = 0.9;
  p.phi[0] = -1.0;
  EXPECT_THROW(p.validate(), DomainError);
}

TEST(Pharma, SyntheticDataIsReproducible) {
  const auto sc = PharmaScenario::reference();
  const DataSet a = generate_pharma_data(sc, 3), b = generate_pharma_data(sc, 3), c = generate_pharma_data(sc, 4);
  EXPECT_EQ(a.observations(), b.observations());
  EXPECT_NE(a.observations(), c.observations());
  EXPECT_EQ(a.observations()[0], sc.d1);
}
