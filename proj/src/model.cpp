#include "linorbits/model.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "linorbits/error.hpp"

namespace linorbits {

Mat fd_jacobian(const VectorFieldModel& m, const Vec& x, const Vec& p) {
  const int n = m.dim();
  Mat J(n, n);
  const Vec f0 = m.rhs(x, p);
  Vec xp = x;
  for (int j = 0; j < n; ++j) {
    const double h = std::max(1e-7, 1e-7 * std::abs(x[j]));
    xp[j] = x[j] + h;
    J.col(j) = (m.rhs(xp, p) - f0) / h;
    xp[j] = x[j];
  }
  return J;
}

Mat VectorFieldModel::jacobian(const Vec& x, const Vec& p) const {
  return fd_jacobian(*this, x, p);
}

namespace {

void check_args(const VectorFieldModel& m, const Vec& x, const Vec& p) {
  if (x.size() != m.dim())
    fail(errc::input, m.name() + ": state has size " + std::to_string(x.size()) +
                          ", expected " + std::to_string(m.dim()));
  if (p.size() != m.n_params())
    fail(errc::input, m.name() + ": parameter vector has size " + std::to_string(p.size()) +
                          ", expected " + std::to_string(m.n_params()));
}

// Planar linear field x' = A x. Covers the diag(1,-1) saddle and the
// rotation field (0,-1;1,0) used by the section tests.
class Linear2D final : public VectorFieldModel {
 public:
  std::string name() const override { return "linear2d"; }
  int dim() const override { return 2; }
  std::vector<std::string> param_names() const override { return {"a11", "a12", "a21", "a22"}; }
  Vec default_params() const override {
    Vec p(4);
    p << 1.0, 0.0, 0.0, -1.0;
    return p;
  }
  Vec rhs(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    Vec f(2);
    f[0] = p[0] * x[0] + p[1] * x[1];
    f[1] = p[2] * x[0] + p[3] * x[1];
    return f;
  }
  Mat jacobian(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    Mat J(2, 2);
    J << p[0], p[1], p[2], p[3];
    return J;
  }
  bool has_analytic_jacobian() const override { return true; }
};

// r' = r(1-r^2), theta' = 1, z' = -z in Cartesian coordinates. The unit
// circle {r=1, z=0} is a hyperbolic cycle with period 2*pi and Floquet
// multipliers exp(-4*pi) (radial) and exp(-2*pi) (axial).
class Cycle3D final : public VectorFieldModel {
 public:
  std::string name() const override { return "cycle3d"; }
  int dim() const override { return 3; }
  std::vector<std::string> param_names() const override { return {}; }
  Vec default_params() const override { return Vec(0); }
  Vec rhs(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    const double a = 1.0 - x[0] * x[0] - x[1] * x[1];
    Vec f(3);
    f[0] = x[0] * a - x[1];
    f[1] = x[1] * a + x[0];
    f[2] = -x[2];
    return f;
  }
  Mat jacobian(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    const double a = 1.0 - x[0] * x[0] - x[1] * x[1];
    Mat J = Mat::Zero(3, 3);
    J(0, 0) = a - 2.0 * x[0] * x[0];
    J(0, 1) = -2.0 * x[0] * x[1] - 1.0;
    J(1, 0) = -2.0 * x[0] * x[1] + 1.0;
    J(1, 1) = a - 2.0 * x[1] * x[1];
    J(2, 2) = -1.0;
    return J;
  }
  bool has_analytic_jacobian() const override { return true; }
};

// Cycle {r=1, z=0} whose normal dynamics rotate: (r-1, z)' = [-sig,-c; c,-sig]
// times (r-1, z), theta' = 1. Floquet multipliers exp(2*pi(-sig +/- i c)) are
// a complex pair, so the real-leading-multiplier hypothesis fails by design.
class TwistCycle final : public VectorFieldModel {
 public:
  std::string name() const override { return "twistcycle"; }
  int dim() const override { return 3; }
  std::vector<std::string> param_names() const override { return {"sigma", "twist"}; }
  Vec default_params() const override {
    Vec p(2);
    p << 0.3, 0.25;
    return p;
  }
  Vec rhs(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    const double r = std::hypot(x[0], x[1]);
    const double u = r - 1.0;
    const double rdot = -p[0] * u - p[1] * x[2];
    const double zdot = p[1] * u - p[0] * x[2];
    Vec f(3);
    f[0] = x[0] / r * rdot - x[1];
    f[1] = x[1] / r * rdot + x[0];
    f[2] = zdot;
    return f;
  }
};

// Saddle-node-Hopf truncation with global reinjection in the angle phi.
// State (x, y, phi); the cos(phi)^2-shaped drift terms reinject orbits that
// travel once around the phi circle. Constants other than (lambda1, lambda2)
// are fixed.
class InjModel final : public VectorFieldModel {
 public:
  static constexpr double kOmega = 1.0;
  static constexpr double kAlpha = -1.0;
  static constexpr double kBeta = 0.0;
  static constexpr double kS = -1.0;
  static constexpr double kC = 0.0;
  static constexpr double kD = 0.01;
  // f = pi * d couples the two drift terms incommensurately.
  static constexpr double kF = 3.14159265358979323846 * kD;

  std::string name() const override { return "inj"; }
  int dim() const override { return 3; }
  std::vector<std::string> param_names() const override { return {"lambda1", "lambda2"}; }
  Vec default_params() const override { return Vec::Zero(2); }
  Vec rhs(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    const double l1 = p[0], l2 = p[1];
    const double sp = std::sin(x[2]), cp = std::cos(x[2]);
    const double r2 = x[0] * x[0] + x[1] * x[1];
    const double drift = 2.0 * cp + l2;
    Vec f(3);
    f[0] = l1 * x[0] - kOmega * x[1] - (kAlpha * x[0] - kBeta * x[1]) * sp - r2 * x[0] +
           kD * drift * drift;
    f[1] = l1 * x[1] + kOmega * x[0] - (kAlpha * x[1] + kBeta * x[0]) * sp - r2 * x[1] +
           kF * drift * drift;
    f[2] = l2 + kS * r2 + 2.0 * cp + kC * r2 * r2;
    return f;
  }
  Mat jacobian(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    const double l1 = p[0], l2 = p[1];
    const double sp = std::sin(x[2]), cp = std::cos(x[2]);
    const double r2 = x[0] * x[0] + x[1] * x[1];
    const double drift = 2.0 * cp + l2;
    Mat J(3, 3);
    J(0, 0) = l1 - kAlpha * sp - (3.0 * x[0] * x[0] + x[1] * x[1]);
    J(0, 1) = -kOmega + kBeta * sp - 2.0 * x[0] * x[1];
    J(0, 2) = -(kAlpha * x[0] - kBeta * x[1]) * cp - 4.0 * kD * drift * sp;
    J(1, 0) = kOmega - kBeta * sp - 2.0 * x[0] * x[1];
    J(1, 1) = l1 - kAlpha * sp - (x[0] * x[0] + 3.0 * x[1] * x[1]);
    J(1, 2) = -(kAlpha * x[1] + kBeta * x[0]) * cp - 4.0 * kF * drift * sp;
    J(2, 0) = 2.0 * kS * x[0] + 4.0 * kC * r2 * x[0];
    J(2, 1) = 2.0 * kS * x[1] + 4.0 * kC * r2 * x[1];
    J(2, 2) = -2.0 * sp;
    return J;
  }
  bool has_analytic_jacobian() const override { return true; }
};

// Benchmark system built around the invariant cylinder {r=1}, state (x,y,w).
// P = {r=1, w=0} has period 2*pi and multipliers exp(-4*pi*rho0),
// exp(2*pi*gu); E = (1,0,1) has eigenvalues {-gu, kappa, 2(rho1-rho0)}.
// The curve {r=1, theta = ln(w)/gu} is invariant for all parameter values
// and forms the P-to-E connection; lambda_r breaks it at known linear rate.
// lambda_l shifts the downward drift that steers W^u(E) relative to W^s(P).
class DesignedModel final : public VectorFieldModel {
 public:
  static constexpr double kGu = 0.22;
  static constexpr double kRho0 = 0.15;
  static constexpr double kWb = 0.25 * 0.25 * 0.25 * 0.25;
  // kRho1*band(1) = 1/2 exactly, so the radial rates at the equilibrium and
  // at the orbit stay at the designed values under the band profile.
  static constexpr double kRho1 = 0.5 * (1.0 + kWb);
  static constexpr double kKappa = 0.45;
  static constexpr double kCg0 = 0.2;
  static constexpr double kFloor = 4.0;

  std::string name() const override { return "designed"; }
  int dim() const override { return 3; }
  std::vector<std::string> param_names() const override { return {"lambda_r", "lambda_l"}; }
  Vec default_params() const override { return Vec::Zero(2); }

  Vec rhs(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    const double X = x[0], Y = x[1], w = x[2];
    const double r2 = X * X + Y * Y;
    const double u = (1.0 + X) / 2.0;
    const double w4 = w > 0.0 ? w * w * w * w : 0.0;
    // band rises from 0 at the orbit height to ~1 above w ~ 0.25, turning the
    // radial attraction to r = 1 into repulsion over the mid heights; the
    // escape in r is what arms the global w drawdown that reinjects unstable
    // flights toward the orbit.
    const double band = w4 / (w4 + kWb);
    const double rho = kRho0 - kRho1 * band * (2.0 * u * u / (1.0 + u * u * u * u));
    const double A = (1.0 - r2) * rho;
    // u_s measures (x,y) against the W^s(E) phase ln(w)/gu; its w^4 factor
    // keeps the w->0+ limit smooth.
    double us = 0.0;
    if (w > 0.0) {
      const double lw = std::log(w) / kGu;
      us = Y * std::cos(lw) - X * std::sin(lw);
    }
    const double q = w * (1.0 - w);
    const double g = (w - 0.5) / 0.2;
    const double psi = 16.0 * q * q * std::exp(-g * g);
    const double theta_dot = (1.0 - w) + kKappa * w4 * us + p[0] * psi;
    // the quadratic floor catches drawdown overshoot below w = 0; it has no
    // value or slope at w = 0, so the orbit's rates are untouched
    const double wneg = w < 0.0 ? w : 0.0;
    const double wdot = kGu * w * (1.0 - w) + kFloor * wneg * wneg -
                        (kCg0 + p[1]) * (1.0 - r2) * (1.0 - r2) / (1.0 + w * w);
    Vec f(3);
    f[0] = X * A - Y * theta_dot;
    f[1] = Y * A + X * theta_dot;
    f[2] = wdot;
    return f;
  }

  Mat jacobian(const Vec& x, const Vec& p) const override {
    check_args(*this, x, p);
    const double X = x[0], Y = x[1], w = x[2];
    const double r2 = X * X + Y * Y;
    const double u = (1.0 + X) / 2.0;
    const double u4 = u * u * u * u;
    const double w4 = w > 0.0 ? w * w * w * w : 0.0;
    const double dw4 = w > 0.0 ? 4.0 * w * w * w : 0.0;
    const double gu_fun = 2.0 * u * u / (1.0 + u4);
    const double dgu_fun = (4.0 * u - 4.0 * u4 * u) / ((1.0 + u4) * (1.0 + u4));
    const double band = w4 / (w4 + kWb);
    const double dband = dw4 * kWb / ((w4 + kWb) * (w4 + kWb));
    const double rho = kRho0 - kRho1 * band * gu_fun;
    const double drho_dx = -kRho1 * band * dgu_fun * 0.5;
    const double drho_dw = -kRho1 * dband * gu_fun;
    const double A = (1.0 - r2) * rho;
    const double dA_dx = -2.0 * X * rho + (1.0 - r2) * drho_dx;
    const double dA_dy = -2.0 * Y * rho;
    const double dA_dw = (1.0 - r2) * drho_dw;

    double us = 0.0, dus_dw = 0.0, cl = 0.0, sl = 0.0;
    if (w > 0.0) {
      const double lw = std::log(w) / kGu;
      cl = std::cos(lw);
      sl = std::sin(lw);
      const double uc = X * cl + Y * sl;
      us = Y * cl - X * sl;
      dus_dw = -uc / (kGu * w);
    }

    const double q = w * (1.0 - w);
    const double dq = 1.0 - 2.0 * w;
    const double g = (w - 0.5) / 0.2;
    const double eg = std::exp(-g * g);
    const double psi = 16.0 * q * q * eg;
    const double dpsi = 16.0 * (2.0 * q * dq * eg + q * q * eg * (-2.0 * g / 0.2));

    const double theta_dot = (1.0 - w) + kKappa * w4 * us + p[0] * psi;
    const double dth_dx = kKappa * w4 * (-sl);
    const double dth_dy = kKappa * w4 * cl;
    const double dth_dw = -1.0 + kKappa * (dw4 * us + w4 * dus_dw) + p[0] * dpsi;

    const double cg = kCg0 + p[1];
    const double denw = 1.0 + w * w;
    const double dh_dx = -4.0 * X * (1.0 - r2) / denw;
    const double dh_dy = -4.0 * Y * (1.0 - r2) / denw;
    const double dh_dw = -(1.0 - r2) * (1.0 - r2) * 2.0 * w / (denw * denw);

    Mat J(3, 3);
    J(0, 0) = A + X * dA_dx - Y * dth_dx;
    J(0, 1) = X * dA_dy - theta_dot - Y * dth_dy;
    J(0, 2) = X * dA_dw - Y * dth_dw;
    J(1, 0) = Y * dA_dx + theta_dot + X * dth_dx;
    J(1, 1) = A + Y * dA_dy + X * dth_dy;
    J(1, 2) = Y * dA_dw + X * dth_dw;
    const double wneg = w < 0.0 ? w : 0.0;
    J(2, 0) = -cg * dh_dx;
    J(2, 1) = -cg * dh_dy;
    J(2, 2) = kGu * (1.0 - 2.0 * w) + 2.0 * kFloor * wneg - cg * dh_dw;
    return J;
  }
  bool has_analytic_jacobian() const override { return true; }
};

using Factory = std::function<std::shared_ptr<const VectorFieldModel>()>;

const std::map<std::string, Factory>& registry() {
  static const std::map<std::string, Factory> reg = {
      {"linear2d", [] { return std::make_shared<const Linear2D>(); }},
      {"cycle3d", [] { return std::make_shared<const Cycle3D>(); }},
      {"twistcycle", [] { return std::make_shared<const TwistCycle>(); }},
      {"inj", [] { return std::make_shared<const InjModel>(); }},
      {"designed", [] { return std::make_shared<const DesignedModel>(); }},
  };
  return reg;
}

}  // namespace

std::shared_ptr<const VectorFieldModel> make_model(const std::string& name) {
  auto it = registry().find(name);
  if (it == registry().end()) fail(errc::input, "unknown model '" + name + "'");
  return it->second();
}

std::vector<std::string> model_names() {
  std::vector<std::string> out;
  for (const auto& [k, v] : registry()) out.push_back(k);
  return out;
}

const char* errc_name(errc c) {
  switch (c) {
    case errc::input: return "input";
    case errc::integration_failure: return "integration_failure";
    case errc::no_crossing: return "no_crossing";
    case errc::convergence: return "convergence";
    case errc::escape: return "escape";
    case errc::degeneracy: return "degeneracy";
    case errc::ill_conditioned_frame: return "ill_conditioned_frame";
    case errc::insufficient_data: return "insufficient_data";
    case errc::domain: return "domain";
  }
  return "unknown";
}

}  // namespace linorbits
