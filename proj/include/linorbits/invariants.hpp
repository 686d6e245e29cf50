#pragma once

#include <complex>

#include "linorbits/flow.hpp"

namespace linorbits {

using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;

struct EquilibriumRecord {
  Vec x;
  Vec params;
  VecC eigenvalues;   // ascending real part; ties broken by imaginary part
  MatC eigenvectors;  // columns matching eigenvalues, unit norm
  int n_unstable = 0;
  bool hyperbolic = false;
};

// Damped Newton from guess until ||f|| < tol. Backtracking halves the step
// until the residual decreases (factor >= 2^-20), then errc::convergence.
EquilibriumRecord find_equilibrium(const VectorFieldModel& m, const Vec& guess, const Vec& p,
                                   double tol = 1e-10, int max_iter = 50);

struct PeriodicOrbitRecord {
  Vec point;   // base point p on the orbit, lies on `section`
  double period = 0.0;
  Vec params;
  Section section;    // through `point` with normal f(point)/|f(point)|
  Mat section_basis;  // n x (n-1), orthonormal basis Y of the section
  Mat monodromy;      // Phi(period) at `point`
  VecC multipliers;   // of the monodromy; ascending modulus, ties by real part
  Mat dpi;            // return-map derivative at `point`, in the Y basis
  // Leading stable / unstable data of dpi; valid only when `saddle` is set
  // (real, simple, mu_s inside and mu_u outside the unit circle).
  bool saddle = false;
  double mu_s = 0.0, mu_u = 0.0;
  Vec v_s, v_u;  // unit eigenvectors lifted to R^n (tangent to the section)
  Trajectory orbit;  // one period from `point`, for tube distance queries
};

struct PeriodicOrbitOptions {
  double tol = 1e-11;    // on the section-coordinate displacement norm
  int max_iter = 30;
  IntegratorOptions integ{};
};

// Newton on the (n-1)-dimensional return displacement. The period guess must
// be within 30% of the true return time; the matched crossing is the
// same-direction crossing closest to it.
PeriodicOrbitRecord find_periodic_orbit(const VectorFieldModel& m, const Vec& guess, const Vec& p,
                                        double period_guess,
                                        const PeriodicOrbitOptions& opt = {});

// Distance from x to the stored orbit curve (dense minimization over one
// period, refined locally).
double orbit_distance(const PeriodicOrbitRecord& po, const Vec& x);

struct PoincareResult {
  Vec y1;         // landing point on the section
  double flight;  // return time
  Mat dmap;       // (n-1)x(n-1) derivative in the section basis (if requested)
};

// Return map of the orbit's own section, valid inside a tube around the
// orbit: the trajectory must stay within tube_radius of the orbit curve or
// errc::escape is thrown.
PoincareResult poincare_map(const VectorFieldModel& m, const PeriodicOrbitRecord& po, const Vec& y,
                            const Vec& p, bool want_derivative = false, double tube_radius = 0.5,
                            const IntegratorOptions& integ = {});

struct BundleProjections {
  Mat q_s;  // (n-1)^2 oblique spectral projection onto the stable direction
  Mat q_u;  // complement, q_s + q_u = I
};

// Spectral projections of dpi. Throws errc::degeneracy when the multipliers
// are complex or closer than 1e-6 to each other.
BundleProjections bundle_projections(const PeriodicOrbitRecord& po);

// Eigen ordering helpers shared by the records.
void sort_eigen_by_real(VecC& vals, MatC& vecs);
void sort_eigen_by_modulus(VecC& vals, MatC& vecs);

}  // namespace linorbits
