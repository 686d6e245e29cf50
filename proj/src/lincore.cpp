#include "linorbits/lincore.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "linorbits/error.hpp"

namespace linorbits {

namespace {

// Orthonormal basis of the column span (SVD, relative rank cutoff).
Mat orth(const Mat& X, double tol = 1e-10) {
  if (X.cols() == 0) return Mat(X.rows(), 0);
  Eigen::JacobiSVD<Mat> svd(X, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  int r = 0;
  while (r < s.size() && s[r] > tol * s[0]) ++r;
  return svd.matrixU().leftCols(r);
}

Mat project_out(const Mat& X, const Mat& Q) {
  if (Q.cols() == 0) return X;
  return X - Q * (Q.transpose() * X);
}

// Deterministic eigenvector sign: largest-magnitude entry positive.
Vec fix_sign(const Vec& v) {
  int imax = 0;
  for (int i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
  return v[imax] < 0.0 ? Vec(-v) : v;
}

}  // namespace

Vec CrossSectionFrame::z() const {
  if (dz() != 1) fail(errc::input, "frame has dim Z = " + std::to_string(dz()) + ", expected 1");
  return Z.col(0);
}

Vec CrossSectionFrame::coords(const Vec& x) const { return lu.solve(x - q0); }

Vec CrossSectionFrame::point(double phi, const Vec& wp_, const Vec& wm_, const Vec& u_,
                             const Vec& zc) const {
  Vec x = q0 + phi * f0.normalized();
  if (wp_.size()) x += Wp * wp_;
  if (wm_.size()) x += Wm * wm_;
  if (u_.size()) x += U * u_;
  if (zc.size()) x += Z * zc;
  return x;
}

CrossSectionFrame build_frame(const Vec& q0, const Vec& f0, const Mat& tangent_unstable,
                              const Mat& tangent_stable, double angle_common, double angle_ill,
                              const Vec& plane_normal) {
  const int n = static_cast<int>(q0.size());
  const Vec fh = f0.normalized();
  const Vec nrm = plane_normal.size() ? Vec(plane_normal.normalized()) : fh;
  const double nf = nrm.dot(f0);
  if (std::abs(nf) < 1e-10 * f0.norm()) fail(errc::input, "section plane tangent to the flow");
  // Section parts of the two tangent spaces: projected along the flow onto
  // the plane. Both contain the flow direction (the projection kernel), so
  // each dimension drops by exactly one.
  auto chop = [&](const Mat& T) {
    Mat R = T;
    for (int j = 0; j < R.cols(); ++j) R.col(j) -= f0 * (nrm.dot(R.col(j)) / nf);
    return R;
  };
  const Mat A = orth(chop(tangent_unstable));
  const Mat B = orth(chop(tangent_stable));
  if (A.cols() != tangent_unstable.cols() - 1)
    fail(errc::input, "unstable tangent does not contain the flow direction");
  if (B.cols() != tangent_stable.cols() - 1)
    fail(errc::input, "stable tangent does not contain the flow direction");

  CrossSectionFrame fr;
  fr.q0 = q0;
  fr.f0 = f0;
  fr.normal = nrm;
  fr.tangent_unstable = tangent_unstable;
  fr.tangent_stable = tangent_stable;

  // Principal angles via the cross Gram matrix; the sine is recovered from
  // the orthogonal residual so tiny angles stay the resolvable quantity.
  std::vector<int> common_a, other_a, common_b, other_b;
  Mat Ua, Vb;
  if (A.cols() > 0 && B.cols() > 0) {
    Eigen::JacobiSVD<Mat> svd(A.transpose() * B, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Ua = A * svd.matrixU();
    Vb = B * svd.matrixV();
    const int npairs = static_cast<int>(svd.singularValues().size());
    for (int i = 0; i < npairs; ++i) {
      const double c = std::min(1.0, svd.singularValues()[i]);
      const double s = (Vb.col(i) - Ua.col(i) * (Ua.col(i).dot(Vb.col(i)))).norm();
      fr.angles.push_back(std::atan2(s, c));
    }
    for (int i = 0; i < npairs; ++i) {
      if (fr.angles[i] < angle_common) {
        common_a.push_back(i);
        common_b.push_back(i);
      } else if (fr.angles[i] < angle_ill) {
        auto e = solver_error(errc::ill_conditioned_frame,
                              "principal angle " + std::to_string(fr.angles[i]) +
                                  " inside the ambiguous band [" + std::to_string(angle_common) +
                                  ", " + std::to_string(angle_ill) + ")");
        e.angle_spectrum = fr.angles;
        throw e;
      } else {
        other_a.push_back(i);
        other_b.push_back(i);
      }
    }
    // Extra columns beyond the min dimension are automatically transverse.
    for (int i = npairs; i < A.cols(); ++i) other_a.push_back(i);
    for (int i = npairs; i < B.cols(); ++i) other_b.push_back(i);
  } else {
    Ua = A;
    Vb = B;
    for (int i = 0; i < A.cols(); ++i) other_a.push_back(i);
    for (int i = 0; i < B.cols(); ++i) other_b.push_back(i);
  }

  Mat U(n, common_a.size());
  for (size_t i = 0; i < common_a.size(); ++i) U.col(i) = Ua.col(common_a[i]);
  fr.U = orth(U);
  // Transverse remainders, re-orthogonalized against U so the [Wm U Z] and
  // [Wp U Z] blocks are exactly orthonormal.
  Mat Wm(n, other_a.size()), Wp(n, other_b.size());
  for (size_t i = 0; i < other_a.size(); ++i) Wm.col(i) = Ua.col(other_a[i]);
  for (size_t i = 0; i < other_b.size(); ++i) Wp.col(i) = Vb.col(other_b[i]);
  fr.Wm = orth(project_out(Wm, fr.U));
  fr.Wp = orth(project_out(Wp, fr.U));

  // Z = orthogonal complement of the other blocks within the plane.
  {
    const Mat nrm_col(nrm);
    Eigen::HouseholderQR<Mat> qr(nrm_col);
    const Mat Pl = Mat(qr.householderQ()).rightCols(n - 1);
    Mat blocks(n, fr.Wp.cols() + fr.Wm.cols() + fr.U.cols());
    int bc = 0;
    for (int i = 0; i < fr.Wp.cols(); ++i) blocks.col(bc++) = fr.Wp.col(i);
    for (int i = 0; i < fr.Wm.cols(); ++i) blocks.col(bc++) = fr.Wm.col(i);
    for (int i = 0; i < fr.U.cols(); ++i) blocks.col(bc++) = fr.U.col(i);
    const Mat in_plane = Pl.transpose() * blocks;
    Mat rest = Mat::Identity(n - 1, n - 1);
    fr.Z = Pl * orth(project_out(rest, orth(in_plane)), 1e-8);
  }
  if (1 + fr.dwp() + fr.dwm() + fr.du() + fr.dz() != n)
    fail(errc::degeneracy, "frame blocks do not fill the section");
  for (int i = 0; i < fr.Z.cols(); ++i) fr.Z.col(i) = fix_sign(fr.Z.col(i));

  Mat M(n, n);
  M.col(0) = fh;
  int c = 1;
  for (int i = 0; i < fr.Wp.cols(); ++i) M.col(c++) = fr.Wp.col(i);
  for (int i = 0; i < fr.Wm.cols(); ++i) M.col(c++) = fr.Wm.col(i);
  for (int i = 0; i < fr.U.cols(); ++i) M.col(c++) = fr.U.col(i);
  for (int i = 0; i < fr.Z.cols(); ++i) M.col(c++) = fr.Z.col(i);
  fr.lu = Eigen::PartialPivLU<Mat>(M);
  return fr;
}

double off_z_norm(const CrossSectionFrame& frame, const Vec& xi) {
  const Vec c = frame.coords(frame.q0 + xi);
  const int head = 1 + frame.dwp() + frame.dwm() + frame.du();
  return c.head(head).norm();
}

Vec HalfOrbit::at(double tau) const {
  const double t = t_hit + tau;
  const bool in_run = run.forward() ? (t >= run.t_begin() - 1e-12 && t <= run.t_end() + 1e-12)
                                    : (t <= run.t_begin() + 1e-12 && t >= run.t_end() - 1e-12);
  if (in_run) return run.state(t);
  return ext.state(t);
}

double HalfOrbit::tau_lo() const {
  double lo = std::min(run.t_begin(), run.t_end());
  if (!ext.steps().empty()) lo = std::min(lo, std::min(ext.t_begin(), ext.t_end()));
  return lo - t_hit;
}

double HalfOrbit::tau_hi() const {
  double hi = std::max(run.t_begin(), run.t_end());
  if (!ext.steps().empty()) hi = std::max(hi, std::max(ext.t_begin(), ext.t_end()));
  return hi - t_hit;
}

std::vector<std::pair<double, Vec>> HalfOrbit::crossings(const Section& sec, int direction) const {
  std::vector<std::pair<double, Vec>> out;
  for (const auto& c : find_crossings(run, sec, direction)) out.push_back({c.t - t_hit, c.x});
  if (!ext.steps().empty())
    for (const auto& c : find_crossings(ext, sec, direction)) out.push_back({c.t - t_hit, c.x});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

namespace {

struct SeedFamily {
  int k = 0;
  // s -> (seed point, time direction of the flight to the section: +1
  // unstable, -1 stable)
  std::function<Vec(const Vec&)> seed;
};

HalfOrbit fly_to_section(const VectorFieldModel& m, const Vec& p, const Vec& seed, int flight_dir,
                         const Section& sigma, const Vec& near_point, const TraceOptions& opt) {
  HalfOrbit h;
  h.seed = seed;
  // Flights that leave the valid region blow up in finite time. A crossing
  // before the blow-up is still a crossing, so keep halving the horizon
  // until the integrator survives.
  double span = opt.t_max;
  for (;;) {
    try {
      h.run = integrate(m, seed, p, 0.0, flight_dir * span, opt.integ);
      break;
    } catch (const solver_error&) {
      span *= 0.5;
      if (span < opt.t_max / 256.0) throw;
    }
  }
  double best = 1e300;
  bool found = false;
  for (const auto& c : find_crossings(h.run, sigma)) {
    if (opt.crossing_ok && !opt.crossing_ok(c.x)) continue;
    const double d = (c.x - near_point).norm();
    best = std::min(best, d);
    // earliest capture-ball crossing, not the closest: once the flight has
    // been through a contracting funnel its later passes barely depend on
    // the seed, and a trace point that ignores the seed is useless
    if (d < opt.capture_radius) {
      h.t_hit = c.t;
      found = true;
      break;
    }
  }
  if (!found)
    fail(errc::no_crossing, "manifold flight missed the capture ball (closest approach " +
                                std::to_string(best) + ")");
  if (opt.extend_time > 0.0)
    h.ext = integrate(m, seed, p, 0.0, -flight_dir * opt.extend_time, opt.integ);
  return h;
}

ManifoldTrace trace_from_seeds(const VectorFieldModel& m, const Vec& p, const SeedFamily& fam,
                               int flight_dir, const Section& sigma, const Vec& near_point,
                               const TraceOptions& opt) {
  ManifoldTrace tr;
  tr.k = fam.k;
  auto seed = fam.seed;
  tr.point = [&m, p, seed, flight_dir, sigma, near_point, opt](const Vec& s) {
    TraceOptions o = opt;
    o.extend_time = 0.0;  // point queries never need the extension
    return fly_to_section(m, p, seed(s), flight_dir, sigma, near_point, o).at(0.0);
  };
  tr.orbit = [&m, p, seed, flight_dir, sigma, near_point, opt](const Vec& s) {
    return fly_to_section(m, p, seed(s), flight_dir, sigma, near_point, opt);
  };
  return tr;
}

// Real basis of the invariant subspace on one side of the spectrum. A
// complex pair contributes the real and imaginary parts of its eigenvector.
std::vector<Vec> real_eigvecs(const EquilibriumRecord& eq, bool unstable) {
  std::vector<int> idx;
  for (int i = 0; i < eq.eigenvalues.size(); ++i) {
    const auto ev = eq.eigenvalues[i];
    if ((unstable && ev.real() > 0.0) || (!unstable && ev.real() < 0.0)) idx.push_back(i);
  }
  std::vector<Vec> out;
  for (size_t k = 0; k < idx.size(); ++k) {
    const auto ev = eq.eigenvalues[idx[k]];
    if (std::abs(ev.imag()) < 1e-10 * (1.0 + std::abs(ev))) {
      out.push_back(fix_sign(eq.eigenvectors.col(idx[k]).real()).normalized());
      continue;
    }
    // conjugates are adjacent in the real-then-imag eigenvalue order
    if (k + 1 >= idx.size() ||
        std::abs(eq.eigenvalues[idx[k + 1]].imag() + ev.imag()) > 1e-9 * (1.0 + std::abs(ev)))
      fail(errc::degeneracy, "unpaired complex eigenvalue of the equilibrium");
    Vec re = eq.eigenvectors.col(idx[k]).real();
    Vec im = eq.eigenvectors.col(idx[k]).imag();
    re.normalize();
    im -= re * re.dot(im);
    if (im.norm() < 1e-12) fail(errc::degeneracy, "collapsed complex eigenplane");
    im.normalize();
    out.push_back(fix_sign(re));
    out.push_back(fix_sign(im));
    ++k;
  }
  return out;
}

SeedFamily equilibrium_seeds(const EquilibriumRecord& eq, bool unstable, int branch,
                             double delta) {
  auto dirs = real_eigvecs(eq, unstable);
  if (dirs.empty()) fail(errc::input, "equilibrium has no manifold on the requested side");
  if (dirs.size() > 2) fail(errc::input, "manifolds of dimension > 2 are not traceable");
  SeedFamily fam;
  fam.k = static_cast<int>(dirs.size()) - 1;
  const Vec x0 = eq.x;
  if (fam.k == 0) {
    const Vec d = dirs[0];
    fam.seed = [x0, d, branch, delta](const Vec&) { return Vec(x0 + branch * delta * d); };
  } else {
    const Vec d1 = dirs[0], d2 = dirs[1];
    fam.seed = [x0, d1, d2, delta](const Vec& s) {
      return Vec(x0 + delta * (std::cos(s[0]) * d1 + std::sin(s[0]) * d2));
    };
  }
  return fam;
}

// Floquet bundle direction at phase theta, transported from the base point.
struct BundleCache {
  VariationalPath vp;
  double period;
  Vec v0;
  Trajectory orbit;
  Vec dir(double theta) const {
    double th = std::fmod(theta, period);
    if (th < 0.0) th += period;
    return (vp.transition(th) * v0).normalized();
  }
  Vec base(double theta) const {
    double th = std::fmod(theta, period);
    if (th < 0.0) th += period;
    return orbit.state(th);
  }
};

SeedFamily periodic_seeds(const VectorFieldModel& m, const PeriodicOrbitRecord& po, const Vec& p,
                          bool unstable, int branch, double delta,
                          const IntegratorOptions& integ) {
  if (!po.saddle) fail(errc::degeneracy, "orbit is not a real-multiplier saddle");
  auto cache = std::make_shared<BundleCache>(BundleCache{
      variational_flow(m, po.point, p, 0.0, po.period, integ), po.period,
      unstable ? po.v_u : po.v_s, po.orbit});
  SeedFamily fam;
  fam.k = 1;
  fam.seed = [cache, branch, delta](const Vec& s) {
    return Vec(cache->base(s[0]) + branch * delta * cache->dir(s[0]));
  };
  return fam;
}

}  // namespace

Mat invariant_directions(const EquilibriumRecord& eq, bool unstable) {
  auto dirs = real_eigvecs(eq, unstable);
  Mat A(eq.x.size(), static_cast<int>(dirs.size()));
  for (int j = 0; j < A.cols(); ++j) A.col(j) = dirs[static_cast<size_t>(j)];
  return orth(A);
}

ManifoldTrace unstable_trace(const VectorFieldModel& m, const EquilibriumRecord& eq, const Vec& p,
                             const Section& sigma, const Vec& near_point, int branch,
                             const TraceOptions& opt) {
  return trace_from_seeds(m, p, equilibrium_seeds(eq, true, branch, opt.delta), +1, sigma,
                          near_point, opt);
}

ManifoldTrace stable_trace(const VectorFieldModel& m, const EquilibriumRecord& eq, const Vec& p,
                           const Section& sigma, const Vec& near_point, int branch,
                           const TraceOptions& opt) {
  return trace_from_seeds(m, p, equilibrium_seeds(eq, false, branch, opt.delta), -1, sigma,
                          near_point, opt);
}

ManifoldTrace unstable_trace(const VectorFieldModel& m, const PeriodicOrbitRecord& po, const Vec& p,
                             const Section& sigma, const Vec& near_point, int branch,
                             const TraceOptions& opt) {
  return trace_from_seeds(m, p, periodic_seeds(m, po, p, true, branch, opt.delta, opt.integ), +1,
                          sigma, near_point, opt);
}

ManifoldTrace stable_trace(const VectorFieldModel& m, const PeriodicOrbitRecord& po, const Vec& p,
                           const Section& sigma, const Vec& near_point, int branch,
                           const TraceOptions& opt) {
  return trace_from_seeds(m, p, periodic_seeds(m, po, p, false, branch, opt.delta, opt.integ), -1,
                          sigma, near_point, opt);
}

ReferencePair reference_segments(const CrossSectionFrame& frame, const ManifoldTrace& tr_minus,
                                 const ManifoldTrace& tr_plus, const Vec& u, const Vec& s_minus0,
                                 const Vec& s_plus0, double tol, int max_iter) {
  const int km = tr_minus.k, kp = tr_plus.k;
  const int du = frame.du(), dwp = frame.dwp(), dwm = frame.dwm();
  if (u.size() != du) fail(errc::input, "u has wrong dimension for the frame");
  if (km + kp != 2 * du + dwp + dwm)
    fail(errc::input, "trace parameter count does not match the frame splitting");

  const int iwp = 1, iwm = iwp + dwp, iu = iwm + dwm;  // coord block offsets
  auto resid = [&](const Vec& s) {
    const Vec cm = frame.coords(tr_minus.point(s.head(km)));
    const Vec cp = frame.coords(tr_plus.point(s.tail(kp)));
    Vec r(km + kp);
    int row = 0;
    for (int i = 0; i < du; ++i) r[row++] = cm[iu + i] - u[i];
    for (int i = 0; i < du; ++i) r[row++] = cp[iu + i] - u[i];
    for (int i = 0; i < dwp; ++i) r[row++] = cm[iwp + i] - cp[iwp + i];
    for (int i = 0; i < dwm; ++i) r[row++] = cm[iwm + i] - cp[iwm + i];
    return r;
  };

  Vec s(km + kp);
  s.head(km) = s_minus0;
  s.tail(kp) = s_plus0;
  Vec r = s.size() ? resid(s) : Vec(0);
  for (int it = 0; s.size() && it < max_iter && r.norm() >= tol; ++it) {
    Mat J(s.size(), s.size());
    for (int j = 0; j < s.size(); ++j) {
      Vec sj = s;
      const double h = 1e-6;
      sj[j] += h;
      J.col(j) = (resid(sj) - r) / h;
    }
    const Vec ds = J.partialPivLu().solve(-r);
    if (std::getenv("LINORBITS_DEBUG")) {
      std::fprintf(stderr, "[dbg] refmatch it=%d |r|=%.6g s0=%.12g J00=%.6g ds0=%.6g\n", it,
                   r.norm(), s[0], J(0, 0), ds[0]);
      if (it == 0 && std::getenv("LINORBITS_PROBE")) {
        for (double off : {-1e-2, -1e-3, -1e-4, -1e-5, -1e-6, 0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2}) {
          Vec sp = s;
          sp[0] += off;
          const Vec rp = resid(sp);
          const Vec pm = tr_minus.point(sp.head(km));
          std::fprintf(stderr, "[dbg]   probe off=%+.0e r0=%.10g pm=(%.10g,%.10g,%.10g)\n", off,
                       rp[0], pm[0], pm[1], pm[2]);
        }
      }
    }
    double damp = 1.0;
    while (true) {
      const Vec sn = s + damp * ds;
      const Vec rn = resid(sn);
      if (rn.norm() < r.norm()) {
        s = sn;
        r = rn;
        break;
      }
      damp *= 0.5;
      if (damp < 1.0 / 4096)
        fail(errc::convergence, "reference matching stalled at |r|=" + std::to_string(r.norm()));
    }
  }
  if (s.size() && r.norm() >= tol)
    fail(errc::convergence, "reference matching: |r|=" + std::to_string(r.norm()));

  ReferencePair rp;
  rp.s_minus = s.head(km);
  rp.s_plus = s.tail(kp);
  rp.minus = tr_minus.orbit(rp.s_minus);
  rp.plus = tr_plus.orbit(rp.s_plus);
  rp.q_minus0 = rp.minus.at(0.0);
  rp.q_plus0 = rp.plus.at(0.0);
  rp.xi_inf = rp.q_minus0 - rp.q_plus0;
  if (frame.dz() == 1) rp.gap_inf = frame.z().dot(rp.xi_inf);
  return rp;
}

ProjectionFamily::ProjectionFamily(const VectorFieldModel& m, const Vec& p, const HalfOrbit& half,
                                   Mat im0, Mat ker0, double tau_from, double tau_to,
                                   const IntegratorOptions& integ)
    : im0_(std::move(im0)), ker0_(std::move(ker0)) {
  // Transition matrices along the half orbit, based at tau = tau_from with
  // the origin shifted so transition(tau) maps tau_from data; we instead
  // base at tau = 0 (the section point) which every caller uses.
  (void)tau_from;
  vp_ = variational_flow(m, half.at(0.0), p, 0.0, tau_to, integ);
}

Mat ProjectionFamily::transition(double tau) const { return vp_.transition(tau); }

Mat ProjectionFamily::im_basis(double tau) const { return orth(vp_.transition(tau) * im0_); }

Mat ProjectionFamily::at(double tau) const {
  const Mat Phi = vp_.transition(tau);
  const int n = static_cast<int>(Phi.rows());
  Mat M(n, n);
  M.leftCols(im0_.cols()) = Phi * im0_;
  M.rightCols(ker0_.cols()) = Phi * ker0_;
  Mat picker = Mat::Zero(n, n);
  picker.topLeftCorner(im0_.cols(), im0_.cols()).setIdentity();
  // P = [Im 0] [Im Ker]^{-1}
  return M * picker * M.partialPivLu().inverse();
}

ProjectionFamily dichotomy_projection(const VectorFieldModel& m, const Vec& p,
                                      const CrossSectionFrame& frame, const HalfOrbit& half,
                                      int side, double tau_extent, const IntegratorOptions& integ) {
  Mat im, ker;
  const int n = frame.dim();
  int kc = 0;
  if (side < 0) {
    im = frame.tangent_unstable;
    ker = Mat(n, frame.dwp() + frame.dz());
    for (int i = 0; i < frame.Wp.cols(); ++i) ker.col(kc++) = frame.Wp.col(i);
  } else {
    im = frame.tangent_stable;
    ker = Mat(n, frame.dwm() + frame.dz());
    for (int i = 0; i < frame.Wm.cols(); ++i) ker.col(kc++) = frame.Wm.col(i);
  }
  for (int i = 0; i < frame.Z.cols(); ++i) ker.col(kc++) = frame.Z.col(i);
  return ProjectionFamily(m, p, half, im, ker, 0.0, tau_extent, integ);
}

namespace {

// Mesh fine enough that each interval's transition stays below the
// conditioning cap, judged by the sampled Jacobian norm along the reference.
int mesh_count(const VectorFieldModel& m, const Vec& p, const HalfOrbit& ref, double tau_a,
               double tau_b, double cond_cap) {
  double rate = 0.0;
  for (int i = 0; i <= 16; ++i) {
    const double tau = tau_a + (tau_b - tau_a) * i / 16.0;
    rate = std::max(rate, m.jacobian(ref.at(tau), p).norm());
  }
  const double cap_time = std::log(cond_cap) / std::max(rate, 1e-6);
  return std::max(1, static_cast<int>(std::ceil(std::abs(tau_b - tau_a) / cap_time)));
}

struct SideLayout {
  int m = 1;            // intervals
  bool section = false; // far end pinned to a plane with free flight time
  int kc = 0;           // far-end coefficient count
  Mat A;                // manifold kind: transported tangent basis at the far end
  Vec far_base;         // manifold: ref.at(tau) + a ; section: pt + S a
  Mat free_dirs;        // section kind: S * V
  double tau_far = 0.0;
};

}  // namespace

ShortSegmentResult solve_short_segment(const VectorFieldModel& m, const Vec& p,
                                       const CrossSectionFrame& frame, const ReferencePair& refs,
                                       const FarEnd& far_minus, const FarEnd& far_plus,
                                       const Vec& u, const ShortSegmentOptions& opt,
                                       const ShortSegmentResult* warm) {
  const int n = frame.dim();
  const int dwp = frame.dwp(), dwm = frame.dwm(), du = frame.du(), dz = frame.dz();
  if (u.size() != du) fail(errc::input, "u has wrong dimension for the frame");

  // Far-end descriptions.
  auto make_side = [&](const FarEnd& fe, const HalfOrbit& ref) {
    SideLayout sl;
    sl.tau_far = fe.tau;
    sl.m = mesh_count(m, p, ref, fe.tau, 0.0, opt.cond_cap);
    if (fe.kind == FarEnd::Kind::manifold) {
      if (fe.A.cols() == 0) fail(errc::input, "manifold far end needs a tangent basis");
      sl.A = orth(fe.A);
      sl.kc = static_cast<int>(sl.A.cols());
      sl.far_base = ref.at(fe.tau) + fe.a;
    } else {
      sl.section = true;
      sl.far_base = fe.pt + fe.S * fe.a;
      sl.free_dirs = fe.S * fe.V;
      sl.kc = static_cast<int>(fe.V.cols());
    }
    return sl;
  };
  SideLayout Lm = make_side(far_minus, refs.minus);
  SideLayout Lp = make_side(far_plus, refs.plus);

  // Unknown vector layout:
  //   [nodes- (m-1)*n | c- | tau-? | nodes+ (m-1)*n | c+ | tau+? |
  //    wp | wm | z- | z+]
  const int o_nodes_m = 0;
  const int o_cm = o_nodes_m + (Lm.m - 1) * n;
  const int o_taum = o_cm + Lm.kc;
  const int o_nodes_p = o_taum + (Lm.section ? 1 : 0);
  const int o_cp = o_nodes_p + (Lp.m - 1) * n;
  const int o_taup = o_cp + Lp.kc;
  const int o_wp = o_taup + (Lp.section ? 1 : 0);
  const int o_wm = o_wp + dwp;
  const int o_zm = o_wm + dwm;
  const int o_zp = o_zm + dz;
  const int NX = o_zp + dz;
  const int NR = n * (Lm.m + Lp.m);
  if (NX != NR)
    fail(errc::input, "segment boundary data gives a non-square system (" + std::to_string(NX) +
                          " unknowns, " + std::to_string(NR) + " equations)");

  Vec X = Vec::Zero(NX);
  // Initial guess: nodes along the references, coordinates from the
  // reference pair, far coefficients zero.
  {
    const Vec cm0 = frame.coords(refs.q_minus0);
    const Vec cp0 = frame.coords(refs.q_plus0);
    for (int i = 0; i < dwp; ++i) X[o_wp + i] = 0.5 * (cm0[1 + i] + cp0[1 + i]);
    for (int i = 0; i < dwm; ++i) X[o_wm + i] = 0.5 * (cm0[1 + dwp + i] + cp0[1 + dwp + i]);
    for (int i = 0; i < dz; ++i) X[o_zm + i] = cm0[1 + dwp + dwm + du + i];
    for (int i = 0; i < dz; ++i) X[o_zp + i] = cp0[1 + dwp + dwm + du + i];
    for (int j = 1; j < Lm.m; ++j) {
      const double tau = Lm.tau_far * (1.0 - static_cast<double>(j) / Lm.m);
      X.segment(o_nodes_m + (j - 1) * n, n) = refs.minus.at(tau);
    }
    for (int j = 1; j < Lp.m; ++j) {
      const double tau = Lp.tau_far * static_cast<double>(j) / Lp.m;
      X.segment(o_nodes_p + (j - 1) * n, n) = refs.plus.at(tau);
    }
    if (Lm.section) X[o_taum] = Lm.tau_far;
    if (Lp.section) X[o_taup] = Lp.tau_far;
    if (warm && warm->nodes_minus.size() == static_cast<size_t>(Lm.m + 1) &&
        warm->nodes_plus.size() == static_cast<size_t>(Lp.m + 1)) {
      for (int j = 1; j < Lm.m; ++j) X.segment(o_nodes_m + (j - 1) * n, n) = warm->nodes_minus[j];
      for (int j = 1; j < Lp.m; ++j) X.segment(o_nodes_p + (j - 1) * n, n) = warm->nodes_plus[j];
      X.segment(o_cm, Lm.kc) = warm->c_minus;
      X.segment(o_cp, Lp.kc) = warm->c_plus;
      if (Lm.section) X[o_taum] = warm->tau_minus;
      if (Lp.section) X[o_taup] = warm->tau_plus;
      X.segment(o_wp, dwp) = warm->wp;
      X.segment(o_wm, dwm) = warm->wm;
      X.segment(o_zm, dz) = warm->z_minus;
      X.segment(o_zp, dz) = warm->z_plus;
    }
  }

  const Vec fhat = frame.f0.normalized();
  auto sigma_point = [&](const Vec& Xv, int which) {  // which: -1 or +1
    Vec x = frame.q0;
    x += frame.Wp * Xv.segment(o_wp, dwp);
    x += frame.Wm * Xv.segment(o_wm, dwm);
    if (du) x += frame.U * u;
    x += frame.Z * Xv.segment(which < 0 ? o_zm : o_zp, dz);
    return x;
  };
  auto far_point = [&](const Vec& Xv, const SideLayout& sl, int o_c) {
    Vec x = sl.far_base;
    if (sl.section)
      x += sl.free_dirs * Xv.segment(o_c, sl.kc);
    else
      x += sl.A * Xv.segment(o_c, sl.kc);
    return x;
  };
  // Node sequence of one side, far end first.
  auto side_nodes = [&](const Vec& Xv, const SideLayout& sl, int o_nodes, int o_c, int which) {
    std::vector<Vec> nodes(sl.m + 1);
    nodes[0] = which < 0 ? far_point(Xv, sl, o_c) : sigma_point(Xv, which);
    for (int j = 1; j < sl.m; ++j) nodes[j] = Xv.segment(o_nodes + (j - 1) * n, n);
    nodes[sl.m] = which < 0 ? sigma_point(Xv, which) : far_point(Xv, sl, o_c);
    return nodes;
  };
  // Interval durations. Minus side: from tau_far to 0, the first interval
  // absorbs the free time; plus side: from 0 to tau_far, the last does.
  auto side_times = [&](const Vec& Xv, const SideLayout& sl, int o_tau, int which) {
    const double tf = sl.section ? Xv[o_tau] : sl.tau_far;
    std::vector<double> t(sl.m + 1);
    if (which < 0) {
      // interior mesh keeps the reference spacing; only the far time moves
      t[0] = tf;
      for (int j = 1; j < sl.m; ++j) t[j] = sl.tau_far * (1.0 - static_cast<double>(j) / sl.m);
      t[sl.m] = 0.0;
    } else {
      t[0] = 0.0;
      for (int j = 1; j < sl.m; ++j) t[j] = sl.tau_far * static_cast<double>(j) / sl.m;
      t[sl.m] = tf;
    }
    return t;
  };

  struct IntervalData {
    Vec end;
    Mat Phi;
    Vec f_end;
  };
  auto shoot = [&](const Vec& from, double h) {
    IntervalData d;
    const VariationalPath vp = variational_flow(m, from, p, 0.0, h, opt.integ);
    d.end = vp.end_state();
    d.Phi = vp.end_transition();
    d.f_end = m.rhs(d.end, p);
    return d;
  };

  Vec R(NR);
  Mat J(NR, NX);
  double res_norm = 1e300;
  int iters = 0;
  std::vector<IntervalData> dm(Lm.m), dp(Lp.m);

  auto assemble = [&](const Vec& Xv, bool with_jacobian) {
    if (with_jacobian) J.setZero();
    auto nm = side_nodes(Xv, Lm, o_nodes_m, o_cm, -1);
    auto np = side_nodes(Xv, Lp, o_nodes_p, o_cp, +1);
    auto tm = side_times(Xv, Lm, o_taum, -1);
    auto tp = side_times(Xv, Lp, o_taup, +1);
    int row = 0;
    auto do_side = [&](const SideLayout& sl, std::vector<Vec>& nodes, std::vector<double>& times,
                       std::vector<IntervalData>& data, int o_nodes, int o_c, int o_tau,
                       int which) {
      for (int j = 0; j < sl.m; ++j) {
        data[j] = shoot(nodes[j], times[j + 1] - times[j]);
        R.segment(row, n) = data[j].end - nodes[j + 1];
        if (with_jacobian) {
          // d res / d nodes[j]
          auto put_start = [&](int col_base, const Mat& dstart) {
            J.block(row, col_base, n, dstart.cols()) += data[j].Phi * dstart;
          };
          if (j == 0) {
            if (which < 0) {
              // far end: depends on c (and tau via the duration)
              put_start(o_c, sl.section ? sl.free_dirs : sl.A);
              if (sl.section) J.block(row, o_tau, n, 1) -= data[j].Phi * m.rhs(nodes[0], p);
            } else {
              // sigma point: wp, wm, z+
              put_start(o_wp, frame.Wp);
              put_start(o_wm, frame.Wm);
              put_start(o_zp, frame.Z);
            }
          } else {
            J.block(row, o_nodes + (j - 1) * n, n, n) = data[j].Phi;
          }
          // d res / d nodes[j+1]
          if (j + 1 == sl.m) {
            if (which < 0) {
              J.block(row, o_wp, n, dwp) -= frame.Wp;
              J.block(row, o_wm, n, dwm) -= frame.Wm;
              J.block(row, o_zm, n, dz) -= frame.Z;
            } else {
              if (sl.section) {
                J.block(row, o_c, n, sl.kc) -= sl.free_dirs;
                J.block(row, o_tau, n, 1) += data[j].f_end;
              } else {
                J.block(row, o_c, n, sl.kc) -= sl.A;
              }
            }
          } else {
            J.block(row, o_nodes + j * n, n, n) -= Mat::Identity(n, n);
          }
        }
        row += n;
      }
    };
    do_side(Lm, nm, tm, dm, o_nodes_m, o_cm, o_taum, -1);
    do_side(Lp, np, tp, dp, o_nodes_p, o_cp, o_taup, +1);
  };

  std::vector<double> history;
  for (iters = 0; iters < opt.max_iter; ++iters) {
    assemble(X, true);
    res_norm = R.norm();
    history.push_back(res_norm);
    if (res_norm < opt.tol) break;
    const Vec dX = J.partialPivLu().solve(-R);
    double damp = 1.0;
    bool accepted = false;
    while (damp >= 1.0 / 1024) {
      const Vec Xn = X + damp * dX;
      assemble(Xn, false);
      if (R.norm() < res_norm) {
        X = Xn;
        accepted = true;
        break;
      }
      damp *= 0.5;
    }
    if (!accepted) {
      auto e = solver_error(errc::convergence,
                            "segment Newton stalled at |R|=" + std::to_string(res_norm));
      e.residual_history = history;
      throw e;
    }
  }
  assemble(X, false);
  res_norm = R.norm();
  if (res_norm >= opt.tol) {
    auto e = solver_error(errc::convergence,
                          "segment Newton: |R|=" + std::to_string(res_norm) + " after " +
                              std::to_string(opt.max_iter) + " iterations");
    e.residual_history = history;
    throw e;
  }

  ShortSegmentResult out;
  out.x_sigma_minus = sigma_point(X, -1);
  out.x_sigma_plus = sigma_point(X, +1);
  out.xi = out.x_sigma_minus - out.x_sigma_plus;
  if (dz == 1) out.gap = frame.z().dot(out.xi);
  out.wp = X.segment(o_wp, dwp);
  out.wm = X.segment(o_wm, dwm);
  out.z_minus = X.segment(o_zm, dz);
  out.z_plus = X.segment(o_zp, dz);
  out.c_minus = X.segment(o_cm, Lm.kc);
  out.c_plus = X.segment(o_cp, Lp.kc);
  out.tau_minus = Lm.section ? X[o_taum] : Lm.tau_far;
  out.tau_plus = Lp.section ? X[o_taup] : Lp.tau_far;
  out.nodes_minus = side_nodes(X, Lm, o_nodes_m, o_cm, -1);
  out.nodes_plus = side_nodes(X, Lp, o_nodes_p, o_cp, +1);
  {
    auto tms = side_times(X, Lm, o_taum, -1);
    auto tps = side_times(X, Lp, o_taup, +1);
    out.times_minus.assign(tms.begin(), tms.end());
    out.times_plus.assign(tps.begin(), tps.end());
  }
  out.far_minus = out.nodes_minus.front();
  out.far_plus = out.nodes_plus.back();
  out.residual = res_norm;
  out.iterations = iters;
  return out;
}

double jump_estimate(const CrossSectionFrame& frame, const ProjectionFamily& fam, double omega,
                     const Vec& a) {
  const Vec rem = (Mat::Identity(a.size(), a.size()) - fam.at(omega)) * a;
  // Phi(0, omega) rem = Phi(omega, 0)^{-1} rem
  const Vec pulled = fam.transition(omega).partialPivLu().solve(rem);
  return -frame.z().dot(pulled);
}

}  // namespace linorbits
