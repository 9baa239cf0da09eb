#pragma once

// Tumor growth / drug response model with state Y = (C, P, Q, Q_P):
//
//   dC/dt   = -phi1 C
//   dP/dt   = phi4 P (1 - (P+Q+Q_P)/K) + phi5 Q_P - phi3 P - phi1 phi2 C P
//   dQ/dt   = phi3 P - phi1 phi2 C Q
//   dQ_P/dt = phi1 phi2 C Q - phi5 Q_P - phi6 Q_P
//
// with C(0) = 0, P(0) = phi7, Q(0) = d1 - phi7, Q_P(0) = 0, and C reset to 1
// at every dose time. The observable is P + Q + Q_P.

#include "mtmcmc/ode_sensitivity.hpp"

#include <array>
#include <memory>

namespace mtmcmc {

inline constexpr std::size_t kPharmaStates = 4;
inline constexpr std::size_t kPharmaParams = 7;

/// Prior box for (phi1..phi7, sigma_n).
inline BoxPrior pharma_prior() {
  Vector a(8), b(8);
  a << 1e-2, 1e-2, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5;
  b << 20, 20, 2.5, 0.3, 0.05, 0.6, 1, 33;
  return BoxPrior(a, b);
}

struct PharmaParams {
  Vector phi = Vector::Zero(kPharmaParams);  ///< KDE, gamma, k_PQ, lambda_P, k_QPP, delta_QP, P0
  double d1 = 40.0;                           ///< first observation; Q0 = d1 - P0
  double capacity = 100.0;                    ///< K

  void validate() const {
    require_dims(static_cast<std::size_t>(phi.size()), kPharmaParams, "PharmaParams");
    if (!phi.allFinite() || !(phi.array() >= 0.0).all()) throw DomainError("pharma parameters must be non-negative");
    if (!(capacity > 0.0)) throw DomainError("carrying capacity must be positive");
    if (!(phi[6] < d1)) throw DomainError("P0 must be below the first observation");
  }
};

/// Unchecked system; `pharma_system` validates the derivatives.
inline OdeSystem pharma_system_unchecked(double d1, double capacity) {
  OdeSystem s;
  s.n_state = kPharmaStates;
  s.n_param = kPharmaParams;
  const double k = capacity;

  s.rhs = [k](const Vector& y, const Vector& p, Vector& dy) {
    const double c = y[0], pp = y[1], q = y[2], qp = y[3];
    const double kill = p[0] * p[1] * c;
    dy[0] = -p[0] * c;
    dy[1] = p[3] * pp * (1.0 - (pp + q + qp) / k) + p[4] * qp - p[2] * pp - kill * pp;
    dy[2] = p[2] * pp - kill * q;
    dy[3] = kill * q - p[4] * qp - p[5] * qp;
  };

  s.jac_state = [k](const Vector& y, const Vector& p, Matrix& a) {
    const double c = y[0], pp = y[1], q = y[2], qp = y[3];
    const double g = p[0] * p[1];
    const double tot = pp + q + qp;
    a.setZero();
    a(0, 0) = -p[0];
    a(1, 0) = -g * pp;
    a(1, 1) = p[3] * (1.0 - tot / k) - p[3] * pp / k - p[2] - g * c;
    a(1, 2) = -p[3] * pp / k;
    a(1, 3) = -p[3] * pp / k + p[4];
    a(2, 0) = -g * q;
    a(2, 1) = p[2];
    a(2, 2) = -g * c;
    a(3, 0) = g * q;
    a(3, 2) = g * c;
    a(3, 3) = -p[4] - p[5];
  };

  s.jac_param = [k](const Vector& y, const Vector& p, Matrix& b) {
    const double c = y[0], pp = y[1], q = y[2], qp = y[3];
    b.setZero();
    b(0, 0) = -c;
    b(1, 0) = -p[1] * c * pp;
    b(1, 1) = -p[0] * c * pp;
    b(1, 2) = -pp;
    b(1, 3) = pp * (1.0 - (pp + q + qp) / k);
    b(1, 4) = qp;
    b(2, 0) = -p[1] * c * q;
    b(2, 1) = -p[0] * c * q;
    b(2, 2) = pp;
    b(3, 0) = p[1] * c * q;
    b(3, 1) = p[0] * c * q;
    b(3, 4) = -qp;
    b(3, 5) = -qp;
  };

  s.hess_state = [k](const Vector&, const Vector& p, std::vector<Matrix>& h) {
    const double g = p[0] * p[1];
    for (auto& m : h) m.setZero();
    h[1](0, 1) = h[1](1, 0) = -g;
    h[1](1, 1) = -2.0 * p[3] / k;
    h[1](1, 2) = h[1](2, 1) = -p[3] / k;
    h[1](1, 3) = h[1](3, 1) = -p[3] / k;
    h[2](0, 2) = h[2](2, 0) = -g;
    h[3](0, 2) = h[3](2, 0) = g;
  };

  s.hess_param_state = [k](const Vector& y, const Vector& p, std::vector<Matrix>& d) {
    const double c = y[0], pp = y[1], q = y[2], qp = y[3];
    for (auto& m : d) m.setZero();
    // d/dphi1
    d[0](0, 0) = -1.0;
    d[0](1, 0) = -p[1] * pp;
    d[0](1, 1) = -p[1] * c;
    d[0](2, 0) = -p[1] * q;
    d[0](2, 2) = -p[1] * c;
    d[0](3, 0) = p[1] * q;
    d[0](3, 2) = p[1] * c;
    // d/dphi2
    d[1](1, 0) = -p[0] * pp;
    d[1](1, 1) = -p[0] * c;
    d[1](2, 0) = -p[0] * q;
    d[1](2, 2) = -p[0] * c;
    d[1](3, 0) = p[0] * q;
    d[1](3, 2) = p[0] * c;
    // d/dphi3
    d[2](1, 1) = -1.0;
    d[2](2, 1) = 1.0;
    // d/dphi4
    d[3](1, 1) = (1.0 - (pp + q + qp) / k) - pp / k;
    d[3](1, 2) = -pp / k;
    d[3](1, 3) = -pp / k;
    // d/dphi5
    d[4](1, 3) = 1.0;
    d[4](3, 3) = -1.0;
    // d/dphi6
    d[5](3, 3) = -1.0;
  };

  s.hess_param = [](const Vector& y, const Vector&, std::vector<Matrix>& j) {
    const double c = y[0], pp = y[1], q = y[2];
    for (auto& m : j) m.setZero();
    j[1](0, 1) = j[1](1, 0) = -c * pp;
    j[2](0, 1) = j[2](1, 0) = -c * q;
    j[3](0, 1) = j[3](1, 0) = c * q;
  };

  s.init = [d1](const Vector& p) {
    Vector y(4);
    y << 0.0, p[6], d1 - p[6], 0.0;
    return y;
  };
  s.init_jac = [](const Vector&) {
    Matrix g = Matrix::Zero(4, 7);
    g(1, 6) = 1.0;
    g(2, 6) = -1.0;
    return g;
  };
  s.init_hess = [](const Vector&) { return std::vector<Matrix>(4, Matrix::Zero(7, 7)); };
  return s;
}

/// Builds the pharma system and checks every derivative callback against
/// finite differences at probe states around the given parameters.
inline OdeSystem pharma_system(const PharmaParams& params) {
  params.validate();
  OdeSystem sys = pharma_system_unchecked(params.d1, params.capacity);
  const std::array<std::array<double, 4>, 3> probes{{
      {0.0, params.phi[6], params.d1 - params.phi[6], 0.0},
      {1.0, 0.5 * params.d1, 0.3 * params.d1, 0.2 * params.d1},
      {0.3, 2.0, 5.0, 1.0},
  }};
  Vector phi_probe = params.phi;
  for (Eigen::Index i = 0; i < phi_probe.size(); ++i) phi_probe[i] = std::max(phi_probe[i], 1e-3);
  for (const auto& p : probes) {
    const Vector y = Eigen::Map<const Vector>(p.data(), 4);
    const DerivativeCheck chk = check_ode_derivatives(sys, y, phi_probe, 1e-5);
    if (!chk.ok) throw std::logic_error("pharma derivative callback mismatch: " + chk.detail);
  }
  return sys;
}

/// f = P + Q + Q_P at the solution times, with derivatives from S and H.
inline ModelEvaluation pharma_observable(const SensitivitySolution& sol) {
  const auto nd = static_cast<Eigen::Index>(sol.y.size());
  ModelEvaluation ev;
  ev.f.resize(nd);
  for (Eigen::Index i = 0; i < nd; ++i) ev.f[i] = sol.y[static_cast<std::size_t>(i)].tail(3).sum();
  if (sol.order >= 1) {
    Matrix df(nd, static_cast<Eigen::Index>(kPharmaParams));
    for (Eigen::Index i = 0; i < nd; ++i) df.row(i) = sol.s[static_cast<std::size_t>(i)].bottomRows(3).colwise().sum();
    ev.df = std::move(df);
  }
  if (sol.order >= 2) {
    std::vector<Matrix> d2f;
    d2f.reserve(sol.h.size());
    for (const auto& h : sol.h) d2f.push_back(h[1] + h[2] + h[3]);
    ev.d2f = std::move(d2f);
  }
  return ev;
}

/// Observable for a fixed observation and dose schedule.
class PharmaObservable {
 public:
  PharmaObservable(std::vector<double> times, std::vector<double> dose_times, double d1, double capacity = 100.0,
                   double tol = 1e-8)
      : times_(std::move(times)), d1_(d1), capacity_(capacity), tol_(tol),
        sys_(std::make_shared<const OdeSystem>(pharma_system_unchecked(d1, capacity))) {
    doses_.times = std::move(dose_times);
    doses_.reset_component = 0;
    doses_.reset_value = 1.0;
    doses_.validate(kPharmaStates);
    if (!(capacity > 0.0)) throw DomainError("carrying capacity must be positive");
  }

  std::size_t param_dim() const { return kPharmaParams; }
  const std::vector<double>& times() const { return times_; }
  const DoseSchedule& doses() const { return doses_; }
  double d1() const { return d1_; }
  double capacity() const { return capacity_; }
  const OdeSystem& system() const { return *sys_; }

  ModelEvaluation evaluate(const Vector& phi, int order) const {
    IntegrationOptions opt;
    opt.tol = tol_;
    opt.order = order;
    return pharma_observable(integrate_extended(*sys_, phi, times_, doses_, opt));
  }

 private:
  std::vector<double> times_;
  DoseSchedule doses_;
  double d1_;
  double capacity_;
  double tol_;
  std::shared_ptr<const OdeSystem> sys_;
};

using PharmaTarget = DataLikelihoodTarget<PharmaObservable>;

/// Reference synthetic scenario: monthly time unit, observations every three
/// months, six doses between months 12 and 19.5.
struct PharmaScenario {
  Vector truth;  ///< (phi1..phi7, sigma_n)
  double d1 = 40.0;
  double capacity = 100.0;
  std::vector<double> times;
  std::vector<double> dose_times;

  static PharmaScenario reference() {
    PharmaScenario s;
    s.truth.resize(8);
    s.truth << 0.24, 0.729, 0.0295, 0.121, 0.0031, 0.00867, 0.9, 1.0;
    for (int i = 0; i <= 24; ++i) s.times.push_back(3.0 * i);
    s.dose_times = {12.0, 13.5, 15.0, 16.5, 18.0, 19.5};
    return s;
  }
};

/// Simulates the scenario at its truth and adds i.i.d. Gaussian noise. The
/// first observation equals d1 exactly.
inline DataSet generate_pharma_data(const PharmaScenario& sc, std::uint64_t seed) {
  PharmaParams params{sc.truth.head(kPharmaParams), sc.d1, sc.capacity};
  params.validate();
  const PharmaObservable obs(sc.times, sc.dose_times, sc.d1, sc.capacity, 1e-10);
  const ModelEvaluation ev = obs.evaluate(params.phi, 0);
  Rng rng = make_stream(seed, 0, 0);
  const double sigma = sc.truth[static_cast<Eigen::Index>(kPharmaParams)];
  Vector d = ev.f + sigma * standard_normal(static_cast<std::size_t>(ev.f.size()), rng);
  if (!sc.times.empty() && sc.times.front() == 0.0) d[0] = sc.d1;
  return DataSet(Eigen::Map<const Vector>(sc.times.data(), static_cast<Eigen::Index>(sc.times.size())), d);
}

inline PharmaTarget make_pharma_target(const PharmaScenario& sc, const DataSet& data, double tol = 1e-8) {
  std::vector<double> times(data.inputs().data(), data.inputs().data() + data.inputs().size());
  return PharmaTarget(PharmaObservable(std::move(times), sc.dose_times, sc.d1, sc.capacity, tol), data,
                      pharma_prior());
}

}  // namespace mtmcmc
