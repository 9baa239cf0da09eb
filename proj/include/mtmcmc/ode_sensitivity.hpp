#pragma once

// Forward sensitivities of ODE systems. The state Y, the first sensitivities
// S_k = dY/dphi_k and the second sensitivities H_kl = d2Y/dphi_k dphi_l are
// integrated together as one extended system:
//
//   dS_k/dt  = A S_k + B_k
//   dH_kl/dt = A H_kl + [S_k^T C_i S_l]_i + D_k S_l + D_l S_k + J_kl
//
// with A = dG/dY, B_k = dG/dphi_k, C_i = d2G_i/dY dY, D_k = d2G/dphi_k dY and
// J_kl = d2G/dphi_k dphi_l. Integration uses an embedded Dormand-Prince 4(5)
// pair with dense output and restarts at dose times.

#include "mtmcmc/target_model.hpp"

#include <boost/numeric/odeint.hpp>

#include <functional>
#include <sstream>
#include <vector>

namespace mtmcmc {

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double time)
      : std::runtime_error(what + " (t = " + std::to_string(time) + ")"), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

/// dY/dt = G(Y; phi), Y(0) = g(phi), with hand-coded derivative callbacks.
/// Output arguments are pre-sized by the caller and must be fully written.
struct OdeSystem {
  std::size_t n_state = 0;
  std::size_t n_param = 0;

  std::function<void(const Vector& y, const Vector& phi, Vector& dy)> rhs;
  std::function<void(const Vector& y, const Vector& phi, Matrix& a)> jac_state;    ///< A, n x n
  std::function<void(const Vector& y, const Vector& phi, Matrix& b)> jac_param;    ///< B, n x p
  /// C_i = d2 G_i / dY dY, one n x n matrix per component i
  std::function<void(const Vector& y, const Vector& phi, std::vector<Matrix>& c)> hess_state;
  /// D_k(i, j) = d2 G_i / dphi_k dY_j, one n x n matrix per parameter k
  std::function<void(const Vector& y, const Vector& phi, std::vector<Matrix>& d)> hess_param_state;
  /// J_i(k, l) = d2 G_i / dphi_k dphi_l, one p x p matrix per component i
  std::function<void(const Vector& y, const Vector& phi, std::vector<Matrix>& j)> hess_param;

  std::function<Vector(const Vector& phi)> init;              ///< g
  std::function<Matrix(const Vector& phi)> init_jac;          ///< g^1, n x p
  std::function<std::vector<Matrix>(const Vector& phi)> init_hess;  ///< g^2, per component p x p
};

/// Restart times with a reset of one state component to a constant value.
struct DoseSchedule {
  std::vector<double> times;
  std::size_t reset_component = 0;
  double reset_value = 1.0;

  void validate(std::size_t n_state) const {
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) throw DomainError("dose times must be strictly increasing");
    }
    if (!times.empty() && reset_component >= n_state) throw DimensionError("dose reset component out of range");
  }
};

struct SensitivitySolution {
  std::vector<double> times;
  std::vector<Vector> y;                ///< n per time
  std::vector<Matrix> s;                ///< n x p per time
  std::vector<std::vector<Matrix>> h;   ///< per time, per component: p x p (empty when order < 2)
  int order = 0;
};

namespace detail {

using OdeState = std::vector<double>;

inline std::size_t pair_count(std::size_t p) { return p * (p + 1) / 2; }

/// Extended right-hand side. Layout: Y, S column by column, then H_kl for
/// k <= l in row-major pair order.
class ExtendedRhs {
 public:
  ExtendedRhs(const OdeSystem& sys, const Vector& phi, int order)
      : sys_(&sys), phi_(phi), order_(order), n_(sys.n_state), p_(sys.n_param) {
    const auto n = static_cast<Eigen::Index>(n_);
    const auto p = static_cast<Eigen::Index>(p_);
    y_.resize(n);
    dy_.resize(n);
    a_.resize(n, n);
    b_.resize(n, p);
    if (order_ >= 2) {
      c_.assign(n_, Matrix::Zero(n, n));
      d_.assign(p_, Matrix::Zero(n, n));
      j_.assign(n_, Matrix::Zero(p, p));
      cs_.assign(n_, Matrix::Zero(n, p));
      ds_.assign(p_, Matrix::Zero(n, p));
    }
  }

  std::size_t size() const {
    std::size_t total = n_;
    if (order_ >= 1) total += n_ * p_;
    if (order_ >= 2) total += n_ * pair_count(p_);
    return total;
  }

  void operator()(const OdeState& x, OdeState& dxdt, double /*t*/) {
    const auto n = static_cast<Eigen::Index>(n_);
    const auto p = static_cast<Eigen::Index>(p_);
    y_ = Eigen::Map<const Vector>(x.data(), n);
    sys_->rhs(y_, phi_, dy_);
    Eigen::Map<Vector>(dxdt.data(), n) = dy_;
    if (order_ < 1) return;
    sys_->jac_state(y_, phi_, a_);
    sys_->jac_param(y_, phi_, b_);
    Eigen::Map<const Matrix> s(x.data() + n_, n, p);
    Eigen::Map<Matrix> ds(dxdt.data() + n_, n, p);
    ds.noalias() = a_ * s + b_;
    if (order_ < 2) return;
    sys_->hess_state(y_, phi_, c_);
    sys_->hess_param_state(y_, phi_, d_);
    sys_->hess_param(y_, phi_, j_);
    for (std::size_t i = 0; i < n_; ++i) cs_[i].noalias() = c_[i] * s;
    for (std::size_t k = 0; k < p_; ++k) ds_[k].noalias() = d_[k] * s;
    const std::size_t base = n_ + n_ * p_;
    std::size_t pair = 0;
    for (Eigen::Index k = 0; k < p; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      for (Eigen::Index l = k; l < p; ++l, ++pair) {
        const auto lu = static_cast<std::size_t>(l);
        Eigen::Map<const Vector> h(x.data() + base + pair * n_, n);
        Eigen::Map<Vector> dh(dxdt.data() + base + pair * n_, n);
        dh.noalias() = a_ * h;
        dh += ds_[ku].col(l) + ds_[lu].col(k);
        for (Eigen::Index i = 0; i < n; ++i) {
          const auto iu = static_cast<std::size_t>(i);
          dh[i] += s.col(k).dot(cs_[iu].col(l)) + j_[iu](k, l);
        }
      }
    }
  }

 private:
  const OdeSystem* sys_;
  Vector phi_;
  int order_;
  std::size_t n_;
  std::size_t p_;
  Vector y_, dy_;
  Matrix a_, b_;
  std::vector<Matrix> c_, d_, j_, cs_, ds_;
};

}  // namespace detail

struct IntegrationOptions {
  double tol = 1e-8;             ///< absolute and relative local error tolerance
  double initial_step = 1e-3;
  std::size_t max_steps = 200000;  ///< per segment
  int order = 2;                 ///< 0: state, 1: + first, 2: + second sensitivities
};

/// Integrates state and sensitivities and reports them at `output_times`
/// (non-decreasing, first entry >= 0; integration starts at t = 0). Outputs at
/// a dose time report the value just before the reset.
inline SensitivitySolution integrate_extended(const OdeSystem& sys, const Vector& phi,
                                              const std::vector<double>& output_times, const DoseSchedule& doses,
                                              const IntegrationOptions& opt = {}) {
  namespace odeint = boost::numeric::odeint;
  if (!(opt.tol > 0.0)) throw DomainError("integration tolerance must be positive");
  if (opt.order < 0 || opt.order > 2) throw DomainError("sensitivity order must be 0, 1 or 2");
  require_dims(static_cast<std::size_t>(phi.size()), sys.n_param, "integrate_extended parameters");
  doses.validate(sys.n_state);
  for (std::size_t i = 0; i < output_times.size(); ++i) {
    if (output_times[i] < 0.0 || (i > 0 && output_times[i] < output_times[i - 1])) {
      throw DomainError("output times must be non-negative and non-decreasing");
    }
  }

  const std::size_t n = sys.n_state;
  const std::size_t p = sys.n_param;
  const auto ni = static_cast<Eigen::Index>(n);
  const auto pi = static_cast<Eigen::Index>(p);
  detail::ExtendedRhs rhs(sys, phi, opt.order);
  detail::OdeState x(rhs.size(), 0.0);

  {
    const Vector y0 = sys.init(phi);
    require_dims(static_cast<std::size_t>(y0.size()), n, "initial state");
    Eigen::Map<Vector>(x.data(), ni) = y0;
    if (opt.order >= 1) Eigen::Map<Matrix>(x.data() + n, ni, pi) = sys.init_jac(phi);
    if (opt.order >= 2) {
      const std::vector<Matrix> g2 = sys.init_hess(phi);
      const std::size_t base = n + n * p;
      std::size_t pair = 0;
      for (std::size_t k = 0; k < p; ++k) {
        for (std::size_t l = k; l < p; ++l, ++pair) {
          for (std::size_t i = 0; i < n; ++i) {
            x[base + pair * n + i] = g2[i](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
          }
        }
      }
    }
  }

  SensitivitySolution sol;
  sol.order = opt.order;
  sol.times = output_times;
  sol.y.reserve(output_times.size());

  const auto record = [&](const detail::OdeState& state) {
    sol.y.emplace_back(Eigen::Map<const Vector>(state.data(), ni));
    if (opt.order >= 1) sol.s.emplace_back(Eigen::Map<const Matrix>(state.data() + n, ni, pi));
    if (opt.order >= 2) {
      std::vector<Matrix> h(n, Matrix(pi, pi));
      const std::size_t base = n + n * p;
      std::size_t pair = 0;
      for (std::size_t k = 0; k < p; ++k) {
        for (std::size_t l = k; l < p; ++l, ++pair) {
          for (std::size_t i = 0; i < n; ++i) {
            const double v = state[base + pair * n + i];
            h[i](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) = v;
            h[i](static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k)) = v;
          }
        }
      }
      sol.h.push_back(std::move(h));
    }
  };

  const auto reset = [&](detail::OdeState& state) {
    const std::size_t c = doses.reset_component;
    state[c] = doses.reset_value;
    if (opt.order >= 1) {
      for (std::size_t k = 0; k < p; ++k) state[n + k * n + c] = 0.0;
    }
    if (opt.order >= 2) {
      const std::size_t base = n + n * p;
      for (std::size_t pair = 0; pair < detail::pair_count(p); ++pair) state[base + pair * n + c] = 0.0;
    }
  };

  std::size_t next_out = 0;
  while (next_out < output_times.size() && output_times[next_out] <= 0.0) {
    record(x);
    ++next_out;
  }

  double t0 = 0.0;
  std::size_t dose_idx = 0;
  while (dose_idx < doses.times.size() && doses.times[dose_idx] <= 0.0) {
    reset(x);
    ++dose_idx;
  }
  while (next_out < output_times.size()) {
    const double t_end = dose_idx < doses.times.size() ? std::min(doses.times[dose_idx], output_times.back())
                                                       : output_times.back();
    std::vector<double> times{t0};
    std::vector<bool> is_output{false};
    std::size_t probe = next_out;
    while (probe < output_times.size() && output_times[probe] <= t_end) {
      if (output_times[probe] > times.back()) {
        times.push_back(output_times[probe]);
        is_output.push_back(true);
      } else {
        is_output.back() = true;
        // repeated output time: recorded below as a duplicate
      }
      ++probe;
    }
    if (times.back() < t_end) {
      times.push_back(t_end);
      is_output.push_back(false);
    }
    if (times.size() > 1) {
      std::size_t seen = 0;
      double last_t = t0;
      auto stepper = odeint::make_dense_output(opt.tol, opt.tol, odeint::runge_kutta_dopri5<detail::OdeState>());
      try {
        odeint::integrate_times(
            stepper, std::ref(rhs), x, times.begin(), times.end(), std::min(opt.initial_step, times.back() - t0),
            [&](const detail::OdeState& state, double t) {
              last_t = t;
              if (seen > 0 && is_output[seen]) {
                // count duplicates of this time among the requested outputs
                while (next_out < output_times.size() && output_times[next_out] == t) {
                  record(state);
                  ++next_out;
                }
              }
              ++seen;
            },
            odeint::max_step_checker(static_cast<int>(opt.max_steps)));
      } catch (const std::runtime_error& e) {
        throw IntegrationError(std::string("ODE integration failed: ") + e.what(), last_t);
      }
      for (double v : x) {
        if (!std::isfinite(v)) throw IntegrationError("ODE integration produced a non-finite state", last_t);
      }
    }
    t0 = t_end;
    if (dose_idx < doses.times.size() && doses.times[dose_idx] <= t_end) {
      reset(x);
      ++dose_idx;
    } else if (next_out < output_times.size()) {
      throw IntegrationError("output schedule could not be completed", t0);
    }
  }
  return sol;
}

/// Result of checking derivative callbacks against central differences.
struct DerivativeCheck {
  bool ok = true;
  double worst = 0.0;
  std::string detail;
};

/// Compares A, B, C, D, J and the initial-condition derivatives against
/// central finite differences at (y, phi).
inline DerivativeCheck check_ode_derivatives(const OdeSystem& sys, const Vector& y, const Vector& phi,
                                             double rel_tol = 1e-5) {
  const auto n = static_cast<Eigen::Index>(sys.n_state);
  const auto p = static_cast<Eigen::Index>(sys.n_param);
  DerivativeCheck out;
  const auto compare = [&](const std::string& name, double analytic, double numeric, double scale) {
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), scale});
    if (err > out.worst) out.worst = err;
    if (err > rel_tol && out.ok) {
      out.ok = false;
      std::ostringstream ss;
      ss << name << ": analytic " << analytic << " vs numeric " << numeric;
      out.detail = ss.str();
    }
  };
  const auto step = [](double v) { return 1e-6 * std::max(1.0, std::abs(v)); };

  Vector f(n), fp(n), fm(n);
  Matrix a(n, n), ap(n, n), am(n, n), b(n, p), bp(n, p), bm(n, p);
  std::vector<Matrix> c(static_cast<std::size_t>(n), Matrix(n, n)), d(static_cast<std::size_t>(p), Matrix(n, n)),
      jm(static_cast<std::size_t>(n), Matrix(p, p));
  sys.rhs(y, phi, f);
  sys.jac_state(y, phi, a);
  sys.jac_param(y, phi, b);
  sys.hess_state(y, phi, c);
  sys.hess_param_state(y, phi, d);
  sys.hess_param(y, phi, jm);
  const double fscale = std::max(1.0, f.cwiseAbs().maxCoeff());
  const double ascale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double bscale = std::max(1.0, b.cwiseAbs().maxCoeff());

  for (Eigen::Index j = 0; j < n; ++j) {
    Vector yp = y, ym = y;
    const double h = step(y[j]);
    yp[j] += h;
    ym[j] -= h;
    sys.rhs(yp, phi, fp);
    sys.rhs(ym, phi, fm);
    sys.jac_state(yp, phi, ap);
    sys.jac_state(ym, phi, am);
    for (Eigen::Index i = 0; i < n; ++i) {
      compare("A", a(i, j), (fp[i] - fm[i]) / (2 * h), fscale);
      for (Eigen::Index m = 0; m < n; ++m) {
        compare("C", c[static_cast<std::size_t>(i)](m, j), (ap(i, m) - am(i, m)) / (2 * h), ascale);
      }
    }
  }
  for (Eigen::Index k = 0; k < p; ++k) {
    Vector php = phi, phm = phi;
    const double h = step(phi[k]);
    php[k] += h;
    phm[k] -= h;
    sys.rhs(y, php, fp);
    sys.rhs(y, phm, fm);
    sys.jac_state(y, php, ap);
    sys.jac_state(y, phm, am);
    sys.jac_param(y, php, bp);
    sys.jac_param(y, phm, bm);
    for (Eigen::Index i = 0; i < n; ++i) {
      compare("B", b(i, k), (fp[i] - fm[i]) / (2 * h), fscale);
      for (Eigen::Index j = 0; j < n; ++j) {
        compare("D", d[static_cast<std::size_t>(k)](i, j), (ap(i, j) - am(i, j)) / (2 * h), ascale);
      }
      for (Eigen::Index l = 0; l < p; ++l) {
        compare("J", jm[static_cast<std::size_t>(i)](l, k), (bp(i, l) - bm(i, l)) / (2 * h), bscale);
      }
    }
    const Vector gp = sys.init(php), gm = sys.init(phm);
    const Matrix g1 = sys.init_jac(phi);
    const Matrix g1p = sys.init_jac(php), g1m = sys.init_jac(phm);
    const std::vector<Matrix> g2 = sys.init_hess(phi);
    for (Eigen::Index i = 0; i < n; ++i) {
      compare("g1", g1(i, k), (gp[i] - gm[i]) / (2 * h), 1.0);
      for (Eigen::Index l = 0; l < p; ++l) {
        compare("g2", g2[static_cast<std::size_t>(i)](l, k), (g1p(i, l) - g1m(i, l)) / (2 * h), 1.0);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exponential decay dY/dt = -phi_0 Y, Y(0) = phi_1.

inline OdeSystem exponential_decay_system() {
  OdeSystem s;
  s.n_state = 1;
  s.n_param = 2;
  s.rhs = [](const Vector& y, const Vector& phi, Vector& dy) { dy[0] = -phi[0] * y[0]; };
  s.jac_state = [](const Vector&, const Vector& phi, Matrix& a) { a(0, 0) = -phi[0]; };
  s.jac_param = [](const Vector& y, const Vector&, Matrix& b) {
    b(0, 0) = -y[0];
    b(0, 1) = 0.0;
  };
  s.hess_state = [](const Vector&, const Vector&, std::vector<Matrix>& c) { c[0].setZero(); };
  s.hess_param_state = [](const Vector&, const Vector&, std::vector<Matrix>& d) {
    d[0](0, 0) = -1.0;
    d[1](0, 0) = 0.0;
  };
  s.hess_param = [](const Vector&, const Vector&, std::vector<Matrix>& j) { j[0].setZero(); };
  s.init = [](const Vector& phi) { return Vector::Constant(1, phi[1]); };
  s.init_jac = [](const Vector&) {
    Matrix g(1, 2);
    g << 0.0, 1.0;
    return g;
  };
  s.init_hess = [](const Vector&) { return std::vector<Matrix>{Matrix::Zero(2, 2)}; };
  return s;
}

/// Observable Y(t) of the exponential decay model at the data times.
struct ExponentialDecayObservable {
  std::vector<double> times;
  double tol = 1e-9;

  std::size_t param_dim() const { return 2; }

  ModelEvaluation evaluate(const Vector& phi, int order) const {
    static const OdeSystem sys = exponential_decay_system();
    IntegrationOptions opt;
    opt.tol = tol;
    opt.order = order;
    const SensitivitySolution sol = integrate_extended(sys, phi, times, {}, opt);
    const auto nd = static_cast<Eigen::Index>(times.size());
    ModelEvaluation ev;
    ev.f.resize(nd);
    for (Eigen::Index i = 0; i < nd; ++i) ev.f[i] = sol.y[static_cast<std::size_t>(i)][0];
    if (order >= 1) {
      Matrix df(nd, 2);
      for (Eigen::Index i = 0; i < nd; ++i) df.row(i) = sol.s[static_cast<std::size_t>(i)].row(0);
      ev.df = std::move(df);
    }
    if (order >= 2) {
      std::vector<Matrix> d2f;
      for (Eigen::Index i = 0; i < nd; ++i) d2f.push_back(sol.h[static_cast<std::size_t>(i)][0]);
      ev.d2f = std::move(d2f);
    }
    return ev;
  }
};

}  // namespace mtmcmc
