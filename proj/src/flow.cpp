#include "linorbits/flow.hpp"

#include <algorithm>
#include <cmath>

#include "linorbits/error.hpp"

namespace linorbits {

namespace {

// Dormand-Prince 5(4) tableau (FSAL: k7 of a step is k1 of the next).
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
// b5 - b4 of the embedded pair.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
// Extra weights of the quartic dense-output polynomial.
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

double initial_step(const std::function<Vec(double, const Vec&)>& f, const Vec& x0, const Vec& f0,
                    double t0, double dir, double atol, double rtol, double h_cap) {
  const auto scnorm = [&](const Vec& v, const Vec& ref) {
    double s = 0.0;
    for (int i = 0; i < v.size(); ++i) {
      const double sc = atol + rtol * std::abs(ref[i]);
      s += (v[i] / sc) * (v[i] / sc);
    }
    return std::sqrt(s / v.size());
  };
  const double d0 = scnorm(x0, x0), dd1 = scnorm(f0, x0);
  double h0 = (d0 < 1e-5 || dd1 < 1e-5) ? 1e-6 : 0.01 * d0 / dd1;
  h0 = std::min(h0, h_cap);
  const Vec x1 = x0 + dir * h0 * f0;
  const Vec f1 = f(t0 + dir * h0, x1);
  const double d2 = scnorm(f1 - f0, x0) / h0;
  double h1;
  if (std::max(dd1, d2) <= 1e-15)
    h1 = std::max(1e-6, h0 * 1e-3);
  else
    h1 = std::pow(0.01 / std::max(dd1, d2), 0.2);
  return dir * std::min({100.0 * h0, h1, h_cap});
}

}  // namespace

Trajectory integrate_fn(const std::function<Vec(double, const Vec&)>& f, const Vec& x0, double t0,
                        double t1, const IntegratorOptions& opt) {
  Trajectory tr;
  tr.n_ = static_cast<int>(x0.size());
  tr.tb_ = t0;
  tr.te_ = t0;
  if (t1 == t0) return tr;
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);
  const double h_cap = opt.h_max > 0.0 ? std::min(opt.h_max, span) : span;

  double t = t0;
  Vec y = x0;
  Vec k1 = f(t, y);
  double h = opt.h_init != 0.0 ? dir * std::min(std::abs(opt.h_init), h_cap)
                               : initial_step(f, y, k1, t, dir, opt.atol, opt.rtol, h_cap);

  const long n = x0.size();
  Vec k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ynew(n), yerr(n);
  for (long step = 0; step < opt.max_steps; ++step) {
    if (dir * (t + h - t1) > 0.0) h = t1 - t;
    const bool last = std::abs(t + h - t1) <= 1e-14 * span;

    k2 = f(t + c2 * h, y + h * (a21 * k1));
    k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = f(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    k7 = f(t + h, ynew);
    yerr = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double err = 0.0;
    for (long i = 0; i < n; ++i) {
      const double sc = opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      err += (yerr[i] / sc) * (yerr[i] / sc);
    }
    err = std::sqrt(err / n);

    if (err <= 1.0) {
      DenseStep ds;
      ds.t0 = t;
      ds.h = h;
      ds.r1 = y;
      ds.r2 = ynew - y;
      ds.r3 = h * k1 - ds.r2;
      ds.r4 = ds.r2 - h * k7 - ds.r3;
      ds.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      tr.steps_.push_back(std::move(ds));
      t += h;
      y = ynew;
      k1 = k7;  // FSAL
      tr.te_ = t;
      if (last) return tr;
    }
    const double fac = std::clamp(0.9 * std::pow(std::max(err, 1e-16), -0.2), 0.2, 5.0);
    h *= fac;
    if (std::abs(h) > h_cap) h = dir * h_cap;
    if (std::abs(h) < 1e-14 * std::max(1.0, std::abs(t))) {
      auto e = solver_error(errc::integration_failure,
                            "step size underflow at t=" + std::to_string(t));
      e.last_time = t;
      e.last_state.assign(y.data(), y.data() + n);
      throw e;
    }
  }
  auto e = solver_error(errc::integration_failure,
                        "max step count exceeded at t=" + std::to_string(t));
  e.last_time = t;
  e.last_state.assign(y.data(), y.data() + y.size());
  throw e;
}

Trajectory integrate(const VectorFieldModel& m, const Vec& x0, const Vec& p, double t0, double t1,
                     const IntegratorOptions& opt) {
  return integrate_fn([&m, &p](double, const Vec& x) { return m.rhs(x, p); }, x0, t0, t1, opt);
}

const DenseStep& Trajectory::locate(double t) const {
  if (steps_.empty()) fail(errc::domain, "empty trajectory");
  const double slack = 1e-9 * (std::abs(te_ - tb_) + std::abs(tb_));
  const bool fwd = forward();
  if ((fwd && (t < tb_ - slack || t > te_ + slack)) ||
      (!fwd && (t > tb_ + slack || t < te_ - slack)))
    fail(errc::domain, "time " + std::to_string(t) + " outside trajectory span [" +
                           std::to_string(tb_) + ", " + std::to_string(te_) + "]");
  // First step whose end lies at or past t.
  auto it = std::lower_bound(steps_.begin(), steps_.end(), t,
                             [fwd](const DenseStep& s, double tt) {
                               return fwd ? s.t0 + s.h < tt : s.t0 + s.h > tt;
                             });
  if (it == steps_.end()) --it;
  return *it;
}

Vec Trajectory::state(double t) const {
  const DenseStep& s = locate(t);
  const double th = (t - s.t0) / s.h;
  const double th1 = 1.0 - th;
  return s.r1 + th * (s.r2 + th1 * (s.r3 + th * (s.r4 + th1 * s.r5)));
}

Vec Trajectory::end_state() const {
  if (steps_.empty()) fail(errc::domain, "empty trajectory");
  return state(te_);
}

double Trajectory::quadrature(const std::function<double(double, const Vec&)>& g) const {
  // 5-point Gauss-Legendre nodes on [0,1].
  static const double xs[5] = {0.046910077030668, 0.230765344947158, 0.5, 0.769234655052841,
                               0.953089922969332};
  static const double ws[5] = {0.118463442528095, 0.239314335249683, 0.284444444444444,
                               0.239314335249683, 0.118463442528095};
  double total = 0.0;
  for (const auto& s : steps_) {
    double acc = 0.0;
    for (int q = 0; q < 5; ++q) {
      const double t = s.t0 + xs[q] * s.h;
      acc += ws[q] * g(t, state(t));
    }
    total += acc * s.h;
  }
  return total;
}

Mat VariationalPath::transition(double t) const {
  const Vec z = joint_.state(t);
  return Eigen::Map<const Mat>(z.data() + n_, n_, n_);
}

VariationalPath variational_flow(const VectorFieldModel& m, const Vec& x0, const Vec& p, double t0,
                                 double t1, const IntegratorOptions& opt) {
  const int n = m.dim();
  Vec z0(n + n * n);
  z0.head(n) = x0;
  Eigen::Map<Mat>(z0.data() + n, n, n) = Mat::Identity(n, n);
  auto f = [&m, &p, n](double, const Vec& z) {
    const Vec x = z.head(n);
    const Eigen::Map<const Mat> Phi(z.data() + n, n, n);
    Vec dz(n + n * n);
    dz.head(n) = m.rhs(x, p);
    Eigen::Map<Mat>(dz.data() + n, n, n) = m.jacobian(x, p) * Phi;
    return dz;
  };
  return VariationalPath(integrate_fn(f, z0, t0, t1, opt), n);
}

namespace {

// Newton on the dense interpolant with a bisection-maintained bracket.
Crossing refine_crossing(const Trajectory& tr, const Section& sec, double ta, double tb) {
  double ga = sec.offset(tr.state(ta));
  double gb = sec.offset(tr.state(tb));
  const double scale = 1.0 + sec.point.norm();
  double t = std::abs(ga) < std::abs(gb) ? ta : tb;
  for (int it = 0; it < 60; ++it) {
    const double g = sec.offset(tr.state(t));
    if (std::abs(g) < 1e-13 * scale) break;
    const double dh = 1e-7 * (std::abs(tb - ta) + 1e-12);
    double tl = std::max(std::min(ta, tb), t - dh), tu = std::min(std::max(ta, tb), t + dh);
    const double dg = (sec.offset(tr.state(tu)) - sec.offset(tr.state(tl))) / (tu - tl);
    double tn = dg != 0.0 ? t - g / dg : 0.5 * (ta + tb);
    if ((tn - ta) * (tn - tb) >= 0.0) tn = 0.5 * (ta + tb);  // outside bracket: bisect
    // Keep the sign-change bracket tight.
    const double gn = sec.offset(tr.state(tn));
    if (ga * gn <= 0.0) {
      tb = tn;
      gb = gn;
    } else {
      ta = tn;
      ga = gn;
    }
    if (std::abs(tb - ta) < 1e-15 * (1.0 + std::abs(ta))) {
      t = tn;
      break;
    }
    t = tn;
  }
  Crossing c;
  c.t = t;
  c.x = tr.state(t);
  // Slope sign over the final bracket decides the direction label.
  const double w = std::max(std::abs(tb - ta), 1e-12);
  const double s =
      sec.offset(tr.state(std::min(t + w, std::max(ta, tb)))) -
      sec.offset(tr.state(std::max(t - w, std::min(ta, tb))));
  c.direction = s >= 0.0 ? 1 : -1;
  return c;
}

}  // namespace

std::vector<Crossing> find_crossings(const Trajectory& tr, const Section& sec, int direction,
                                     double t_min, double t_max) {
  std::vector<Crossing> out;
  if (tr.steps().empty()) return out;
  const int samples = 8;  // sub-samples per accepted step
  double tprev = tr.t_begin();
  double gprev = sec.offset(tr.state(tprev));
  for (const auto& s : tr.steps()) {
    for (int q = 1; q <= samples; ++q) {
      const double t = s.t0 + s.h * q / samples;
      const double g = sec.offset(tr.state(t));
      if (gprev == 0.0 && g == 0.0) {
        tprev = t;
        continue;  // sliding inside the section, no transversal crossing
      }
      if (gprev * g <= 0.0 && !(gprev == 0.0 && std::abs(tprev - tr.t_begin()) < 1e-300)) {
        Crossing c = refine_crossing(tr, sec, tprev, t);
        const bool in_window = c.t > std::min(t_min, t_max) && c.t < std::max(t_min, t_max);
        const bool want = direction == 0 || c.direction == direction;
        // In backward runs the offset slope is measured in trajectory time;
        // the direction filter refers to actual flow time.
        if (in_window && want) out.push_back(c);
      }
      tprev = t;
      gprev = g;
    }
  }
  return out;
}

Crossing find_crossing(const Trajectory& tr, const Section& sec, int direction, double t_min) {
  const double lo = tr.forward() ? t_min : -1e300;
  const double hi = tr.forward() ? 1e300 : t_min;
  auto all = find_crossings(tr, sec, direction, lo, hi);
  if (all.empty())
    fail(errc::no_crossing, "no section crossing in [" + std::to_string(tr.t_begin()) + ", " +
                                std::to_string(tr.t_end()) + "]");
  return all.front();
}

}  // namespace linorbits
