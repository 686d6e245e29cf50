#include "linorbits/invariants.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "linorbits/error.hpp"

namespace linorbits {

namespace {

std::vector<int> sorted_order(const VecC& vals, bool by_modulus) {
  std::vector<int> idx(vals.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    const auto &va = vals[a], &vb = vals[b];
    if (by_modulus) {
      if (std::abs(std::abs(va) - std::abs(vb)) > 1e-14 * (1.0 + std::abs(va)))
        return std::abs(va) < std::abs(vb);
      return va.real() < vb.real();
    }
    if (std::abs(va.real() - vb.real()) > 1e-14 * (1.0 + std::abs(va))) return va.real() < vb.real();
    return va.imag() < vb.imag();
  });
  return idx;
}

void apply_order(VecC& vals, MatC& vecs, const std::vector<int>& idx) {
  VecC v2(vals.size());
  MatC m2(vecs.rows(), vecs.cols());
  for (size_t k = 0; k < idx.size(); ++k) {
    v2[k] = vals[idx[k]];
    m2.col(k) = vecs.col(idx[k]);
  }
  vals = v2;
  vecs = m2;
}

}  // namespace

void sort_eigen_by_real(VecC& vals, MatC& vecs) { apply_order(vals, vecs, sorted_order(vals, false)); }
void sort_eigen_by_modulus(VecC& vals, MatC& vecs) { apply_order(vals, vecs, sorted_order(vals, true)); }

EquilibriumRecord find_equilibrium(const VectorFieldModel& m, const Vec& guess, const Vec& p,
                                   double tol, int max_iter) {
  Vec x = guess;
  Vec f = m.rhs(x, p);
  std::vector<double> history{f.norm()};
  for (int it = 0; it < max_iter && f.norm() >= tol; ++it) {
    const Vec dx = m.jacobian(x, p).partialPivLu().solve(-f);
    double damp = 1.0;
    while (true) {
      const Vec xn = x + damp * dx;
      const Vec fn = m.rhs(xn, p);
      if (fn.norm() < f.norm() || f.norm() < tol) {
        x = xn;
        f = fn;
        break;
      }
      damp *= 0.5;
      if (damp < std::pow(2.0, -20)) {
        auto e = solver_error(errc::convergence, "equilibrium Newton stalled, |f|=" +
                                                     std::to_string(f.norm()));
        e.residual_history = history;
        throw e;
      }
    }
    history.push_back(f.norm());
  }
  if (f.norm() >= tol) {
    auto e = solver_error(errc::convergence,
                          "equilibrium Newton: |f|=" + std::to_string(f.norm()) + " after " +
                              std::to_string(max_iter) + " iterations");
    e.residual_history = history;
    throw e;
  }
  EquilibriumRecord rec;
  rec.x = x;
  rec.params = p;
  Eigen::EigenSolver<Mat> es(m.jacobian(x, p));
  rec.eigenvalues = es.eigenvalues();
  rec.eigenvectors = es.eigenvectors();
  sort_eigen_by_real(rec.eigenvalues, rec.eigenvectors);
  rec.n_unstable = 0;
  rec.hyperbolic = true;
  for (int i = 0; i < rec.eigenvalues.size(); ++i) {
    if (rec.eigenvalues[i].real() > 0.0) ++rec.n_unstable;
    if (std::abs(rec.eigenvalues[i].real()) < 1e-8) rec.hyperbolic = false;
  }
  return rec;
}

namespace {

Mat orthonormal_complement(const Vec& v) {
  const int n = static_cast<int>(v.size());
  Eigen::HouseholderQR<Mat> qr(v);
  const Mat Q = qr.householderQ();
  Mat B = Q.rightCols(n - 1);
  // Householder may flip orientation; irrelevant, columns are orthonormal
  // and orthogonal to v.
  return B;
}

// State-space derivative of the section-to-section flight map at the landing
// point: projects the transition matrix along the flow onto the section.
Mat flight_derivative(const Vec& f_land, const Section& sec, const Mat& Phi) {
  const double fn = sec.normal.dot(f_land);
  return Phi - f_land * (sec.normal.transpose() * Phi) / fn;
}

// Same-direction return crossing closest to the expected flight time.
Crossing matched_return(const VectorFieldModel& m, const Vec& y, const Vec& p, const Section& sec,
                        double t_expect, const IntegratorOptions& integ, Trajectory* out_tr) {
  const Trajectory tr = integrate(m, y, p, 0.0, 1.5 * t_expect, integ);
  auto cs = find_crossings(tr, sec, +1, 1e-6 * t_expect, 1.5 * t_expect);
  if (cs.empty())
    fail(errc::no_crossing, "no same-direction return within 1.5x the expected flight time");
  size_t best = 0;
  for (size_t i = 1; i < cs.size(); ++i)
    if (std::abs(cs[i].t - t_expect) < std::abs(cs[best].t - t_expect)) best = i;
  if (std::abs(cs[best].t - t_expect) > 0.35 * t_expect)
    fail(errc::no_crossing, "return time " + std::to_string(cs[best].t) +
                                " too far from expected " + std::to_string(t_expect));
  if (out_tr) *out_tr = tr;
  return cs[best];
}

}  // namespace

PeriodicOrbitRecord find_periodic_orbit(const VectorFieldModel& m, const Vec& guess, const Vec& p,
                                        double period_guess, const PeriodicOrbitOptions& opt) {
  const int n = m.dim();
  const Vec f0 = m.rhs(guess, p);
  if (f0.norm() < 1e-12) fail(errc::input, "periodic orbit guess is an equilibrium");
  Section sec{guess, f0.normalized()};
  const Mat B = orthonormal_complement(sec.normal);

  Vec c = Vec::Zero(n - 1);
  double t_ret = period_guess;
  std::vector<double> history;
  const auto displacement = [&](const Vec& cc, double* t_out) {
    const Vec y = sec.point + B * cc;
    const Crossing cr = matched_return(m, y, p, sec, period_guess, opt.integ, nullptr);
    if (t_out) *t_out = cr.t;
    return Vec(B.transpose() * (cr.x - y));
  };

  Vec F = displacement(c, &t_ret);
  history.push_back(F.norm());
  for (int it = 0; it < opt.max_iter && F.norm() >= opt.tol; ++it) {
    // Finite-difference Jacobian of the return displacement.
    Mat J(n - 1, n - 1);
    const double h = 1e-7;
    for (int j = 0; j < n - 1; ++j) {
      Vec cj = c;
      cj[j] += h;
      J.col(j) = (displacement(cj, nullptr) - F) / h;
    }
    const Vec dc = J.partialPivLu().solve(-F);
    double damp = 1.0;
    while (true) {
      const Vec cn = c + damp * dc;
      double tn;
      const Vec Fn = displacement(cn, &tn);
      if (Fn.norm() < F.norm()) {
        c = cn;
        F = Fn;
        t_ret = tn;
        break;
      }
      damp *= 0.5;
      if (damp < 1.0 / 1024) {
        auto e = solver_error(errc::convergence, "periodic orbit Newton stalled, |F|=" +
                                                     std::to_string(F.norm()));
        e.residual_history = history;
        throw e;
      }
    }
    history.push_back(F.norm());
  }
  if (F.norm() >= opt.tol) {
    auto e = solver_error(errc::convergence, "periodic orbit Newton: |F|=" +
                                                 std::to_string(F.norm()));
    e.residual_history = history;
    throw e;
  }

  PeriodicOrbitRecord rec;
  rec.point = sec.point + B * c;
  rec.params = p;
  // Re-center the section at the converged point, keeping the normal
  // aligned with the local flow direction.
  rec.section.point = rec.point;
  rec.section.normal = m.rhs(rec.point, p).normalized();
  rec.section_basis = orthonormal_complement(rec.section.normal);

  // Period and monodromy from the variational flow at the fixed point.
  IntegratorOptions vi = opt.integ;
  const VariationalPath vp = variational_flow(m, rec.point, p, 0.0, 1.5 * t_ret, vi);
  Trajectory vtr = integrate(m, rec.point, p, 0.0, 1.5 * t_ret, vi);
  auto cs = find_crossings(vtr, rec.section, +1, 1e-6 * t_ret, 1.5 * t_ret);
  if (cs.empty()) fail(errc::no_crossing, "converged orbit lost its return crossing");
  size_t best = 0;
  for (size_t i = 1; i < cs.size(); ++i)
    if (std::abs(cs[i].t - t_ret) < std::abs(cs[best].t - t_ret)) best = i;
  rec.period = cs[best].t;
  rec.monodromy = vp.transition(rec.period);
  rec.orbit = integrate(m, rec.point, p, 0.0, rec.period, vi);

  Eigen::EigenSolver<Mat> es(rec.monodromy);
  rec.multipliers = es.eigenvalues();
  MatC vecs = es.eigenvectors();
  sort_eigen_by_modulus(rec.multipliers, vecs);

  const Vec f_land = m.rhs(rec.point, p);
  const Mat dfl = flight_derivative(f_land, rec.section, rec.monodromy);
  rec.dpi = rec.section_basis.transpose() * dfl * rec.section_basis;

  Eigen::EigenSolver<Mat> eps(rec.dpi);
  VecC pvals = eps.eigenvalues();
  MatC pvecs = eps.eigenvectors();
  sort_eigen_by_modulus(pvals, pvecs);
  const int k = static_cast<int>(pvals.size());
  bool real_simple = true;
  for (int i = 0; i < k; ++i)
    if (std::abs(pvals[i].imag()) > 1e-9 * (1.0 + std::abs(pvals[i]))) real_simple = false;
  if (real_simple && k >= 2 && std::abs(pvals[0]) < 1.0 && std::abs(pvals[k - 1]) > 1.0) {
    rec.saddle = true;
    rec.mu_s = pvals[0].real();
    rec.mu_u = pvals[k - 1].real();
    rec.v_s = (rec.section_basis * pvecs.col(0).real()).normalized();
    rec.v_u = (rec.section_basis * pvecs.col(k - 1).real()).normalized();
  }
  return rec;
}

double orbit_distance(const PeriodicOrbitRecord& po, const Vec& x) {
  // Coarse scan over dense samples, then local refinement.
  const int N = 256;
  double best_t = po.orbit.t_begin(), best_d = 1e300;
  for (int i = 0; i <= N; ++i) {
    const double t = po.period * i / N;
    const double d = (po.orbit.state(t) - x).norm();
    if (d < best_d) {
      best_d = d;
      best_t = t;
    }
  }
  double lo = best_t - po.period / N, hi = best_t + po.period / N;
  lo = std::max(lo, po.orbit.t_begin());
  hi = std::min(hi, po.orbit.t_end());
  for (int it = 0; it < 40; ++it) {
    const double t1 = lo + (hi - lo) / 3.0, t2 = hi - (hi - lo) / 3.0;
    if ((po.orbit.state(t1) - x).norm() < (po.orbit.state(t2) - x).norm())
      hi = t2;
    else
      lo = t1;
  }
  return (po.orbit.state(0.5 * (lo + hi)) - x).norm();
}

PoincareResult poincare_map(const VectorFieldModel& m, const PeriodicOrbitRecord& po, const Vec& y,
                            const Vec& p, bool want_derivative, double tube_radius,
                            const IntegratorOptions& integ) {
  if (orbit_distance(po, y) > tube_radius)
    fail(errc::escape, "return map queried outside the validity tube");
  PoincareResult res;
  Crossing cr;
  Mat Phi;
  if (want_derivative) {
    const VariationalPath vp = variational_flow(m, y, p, 0.0, 1.5 * po.period, integ);
    Trajectory tr = integrate(m, y, p, 0.0, 1.5 * po.period, integ);
    auto cs = find_crossings(tr, po.section, +1, 1e-6 * po.period, 1.5 * po.period);
    if (cs.empty()) fail(errc::no_crossing, "no same-direction return crossing");
    size_t best = 0;
    for (size_t i = 1; i < cs.size(); ++i)
      if (std::abs(cs[i].t - po.period) < std::abs(cs[best].t - po.period)) best = i;
    cr = cs[best];
    Phi = vp.transition(cr.t);
    // Tube check on the flight.
    for (const auto& s : tr.steps()) {
      if (s.t0 > cr.t) break;
      if (orbit_distance(po, tr.state(std::min(s.t0 + s.h, cr.t))) > tube_radius)
        fail(errc::escape, "trajectory left the validity tube before returning");
    }
    const Vec f_land = m.rhs(cr.x, p);
    res.dmap = po.section_basis.transpose() * flight_derivative(f_land, po.section, Phi) *
               po.section_basis;
  } else {
    Trajectory tr;
    cr = matched_return(m, y, p, po.section, po.period, integ, &tr);
    for (const auto& s : tr.steps()) {
      if (s.t0 > cr.t) break;
      if (orbit_distance(po, tr.state(std::min(s.t0 + s.h, cr.t))) > tube_radius)
        fail(errc::escape, "trajectory left the validity tube before returning");
    }
  }
  res.y1 = cr.x;
  res.flight = cr.t;
  return res;
}

BundleProjections bundle_projections(const PeriodicOrbitRecord& po) {
  Eigen::EigenSolver<Mat> es(po.dpi);
  VecC vals = es.eigenvalues();
  MatC vecs = es.eigenvectors();
  sort_eigen_by_modulus(vals, vecs);
  const int k = static_cast<int>(vals.size());
  for (int i = 0; i < k; ++i) {
    if (std::abs(vals[i].imag()) > 1e-9 * (1.0 + std::abs(vals[i])))
      fail(errc::degeneracy, "complex return-map multipliers");
    for (int j = i + 1; j < k; ++j)
      if (std::abs(vals[i] - vals[j]) < 1e-6)
        fail(errc::degeneracy, "return-map multipliers closer than 1e-6");
  }
  // Oblique projection onto the leading stable eigenvector along the others:
  // right eigenvector v, left eigenvector l, Q = v l^T / (l^T v).
  Eigen::EigenSolver<Mat> esl(Mat(po.dpi.transpose()));
  VecC lvals = esl.eigenvalues();
  MatC lvecs = esl.eigenvectors();
  sort_eigen_by_modulus(lvals, lvecs);
  const Vec v = vecs.col(0).real();
  const Vec l = lvecs.col(0).real();
  BundleProjections bp;
  bp.q_s = v * l.transpose() / l.dot(v);
  bp.q_u = Mat::Identity(k, k) - bp.q_s;
  return bp;
}

}  // namespace linorbits
