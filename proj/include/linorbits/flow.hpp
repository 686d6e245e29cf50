#pragma once

#include <functional>
#include <vector>

#include "linorbits/model.hpp"

namespace linorbits {

struct IntegratorOptions {
  double atol = 1e-10;
  double rtol = 1e-8;
  double h_init = 0.0;  // 0 = choose automatically
  double h_max = 0.0;   // 0 = whole interval
  long max_steps = 2000000;
};

// One accepted step with the quartic dense-output coefficients of the
// embedded 5(4) pair. Evaluation at t0 + theta*h, theta in [0,1]:
//   y = r1 + theta*(r2 + (1-theta)*(r3 + theta*(r4 + (1-theta)*r5)))
struct DenseStep {
  double t0;
  double h;  // signed
  Vec r1, r2, r3, r4, r5;
};

class Trajectory {
 public:
  Trajectory() = default;

  double t_begin() const { return tb_; }
  double t_end() const { return te_; }
  int dim() const { return n_; }
  bool forward() const { return te_ >= tb_; }

  // Dense evaluation. Throws errc::domain outside [t_begin, t_end]
  // (up to a 1e-9 relative slack at the ends).
  Vec state(double t) const;
  Vec end_state() const;

  const std::vector<DenseStep>& steps() const { return steps_; }

  // Composite 5-point Gauss quadrature of g(t, x(t)) over the accepted steps.
  double quadrature(const std::function<double(double, const Vec&)>& g) const;

 private:
  friend Trajectory integrate_fn(const std::function<Vec(double, const Vec&)>&, const Vec&,
                                 double, double, const IntegratorOptions&);
  const DenseStep& locate(double t) const;

  int n_ = 0;
  double tb_ = 0.0, te_ = 0.0;
  std::vector<DenseStep> steps_;
};

// Core adaptive integrator (Dormand-Prince 5(4), FSAL, dense output).
// Integrates x' = f(t, x) from t0 to t1; t1 < t0 integrates backward.
Trajectory integrate_fn(const std::function<Vec(double, const Vec&)>& f, const Vec& x0, double t0,
                        double t1, const IntegratorOptions& opt = {});

Trajectory integrate(const VectorFieldModel& m, const Vec& x0, const Vec& p, double t0, double t1,
                     const IntegratorOptions& opt = {});

// Joint integration of the state with its transition matrix: the n + n^2
// system (x, Phi)' = (f(x), Df(x) Phi), Phi(t0) = I.
class VariationalPath {
 public:
  VariationalPath() = default;
  VariationalPath(Trajectory joint, int n) : joint_(std::move(joint)), n_(n) {}

  double t_begin() const { return joint_.t_begin(); }
  double t_end() const { return joint_.t_end(); }
  Vec state(double t) const { return joint_.state(t).head(n_); }
  // Phi(t, t_begin)
  Mat transition(double t) const;
  Vec end_state() const { return joint_.state(joint_.t_end()).head(n_); }
  Mat end_transition() const { return transition(joint_.t_end()); }

 private:
  Trajectory joint_;
  int n_ = 0;
};

VariationalPath variational_flow(const VectorFieldModel& m, const Vec& x0, const Vec& p, double t0,
                                 double t1, const IntegratorOptions& opt = {});

// Affine section {x : <normal, x - point> = 0}.
struct Section {
  Vec point;
  Vec normal;
  double offset(const Vec& x) const { return normal.dot(x - point); }
};

struct Crossing {
  double t;
  Vec x;
  int direction;  // sign of d/dt offset at the crossing
};

// Crossings of the section along a stored trajectory, ordered in the
// trajectory's own time direction. direction: +1 keeps offset-increasing
// crossings, -1 decreasing, 0 both. Only times strictly between t_min and
// t_max are considered; a start point lying exactly on the section is
// skipped by passing a t_min slightly past t_begin.
std::vector<Crossing> find_crossings(const Trajectory& tr, const Section& sec, int direction = 0,
                                     double t_min = -1e300, double t_max = 1e300);

// First crossing after t_min (in the trajectory's own time direction).
// Throws errc::no_crossing when none exists.
Crossing find_crossing(const Trajectory& tr, const Section& sec, int direction = 0,
                       double t_min = -1e300);

}  // namespace linorbits
