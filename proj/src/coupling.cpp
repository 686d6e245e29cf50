#include "linorbits/coupling.hpp"

#include <cmath>

#include "linorbits/error.hpp"

namespace linorbits {

namespace {

// Leading left/right eigen-rows of the return map derivative in section
// coordinates, normalized so row_s . v_s = row_u . v_u = 1.
struct SectionVectors {
  Vec v_s, v_u, row_s, row_u;
};

SectionVectors section_vectors(const PeriodicOrbitRecord& po, const BundleProjections& proj) {
  SectionVectors sv;
  sv.v_s = po.section_basis.transpose() * po.v_s;
  sv.v_u = po.section_basis.transpose() * po.v_u;
  sv.row_s = (sv.v_s.transpose() * proj.q_s).transpose();
  sv.row_u = (sv.v_u.transpose() * proj.q_u).transpose();
  return sv;
}

}  // namespace

DiscreteReference discrete_references(const PeriodicOrbitRecord& po, const ReferencePair& left,
                                      const ReferencePair& right, double tube_enter, int need_plus,
                                      int need_minus) {
  DiscreteReference out;

  // Incoming side: crossings in flow order, kept from the first one inside
  // the tube. Later crossings approach the orbit, so the run is contiguous.
  bool entered = false;
  for (const auto& c : left.plus.crossings(po.section, +1)) {
    const double d = (c.second - po.point).norm();
    if (!entered && d <= tube_enter) entered = true;
    if (entered) {
      if (d > tube_enter)
        fail(errc::degeneracy, "incoming reference leaves the tube after entering it");
      out.q_plus.push_back(c.second);
      out.tau_plus.push_back(c.first);
    }
  }
  if (static_cast<int>(out.q_plus.size()) < need_plus + 1)
    fail(errc::insufficient_data,
         "incoming reference has " + std::to_string(out.q_plus.size()) +
             " tube crossings, need " + std::to_string(need_plus + 1) +
             "; extend the stable trace");

  // Outgoing side: the contiguous inside-tube prefix (deep past first),
  // reversed so index 0 is the last crossing before the reference leaves.
  std::vector<std::pair<double, Vec>> pre;
  for (const auto& c : right.minus.crossings(po.section, +1)) {
    if ((c.second - po.point).norm() <= tube_enter)
      pre.push_back(c);
    else
      break;
  }
  for (auto it = pre.rbegin(); it != pre.rend(); ++it) {
    out.q_minus.push_back(it->second);
    out.tau_minus.push_back(it->first);
  }
  if (static_cast<int>(out.q_minus.size()) < need_minus + 1)
    fail(errc::insufficient_data,
         "outgoing reference has " + std::to_string(out.q_minus.size()) +
             " tube crossings, need " + std::to_string(need_minus + 1) +
             "; extend the unstable trace");
  return out;
}

DiscreteSegmentResult solve_discrete_segment(const VectorFieldModel& m, const Vec& p,
                                             const PeriodicOrbitRecord& po,
                                             const DiscreteReference& disc, int nu,
                                             const Vec& b_plus, const Vec& b_minus,
                                             const BundleProjections& proj,
                                             const DiscreteOptions& opt,
                                             const DiscreteSegmentResult* warm) {
  const Mat& Bs = po.section_basis;
  const int d = static_cast<int>(Bs.cols());
  if (d != 2) fail(errc::input, "discrete segment needs a planar section");
  if (nu < 0) fail(errc::input, "negative step count");
  if (b_plus.size() != d || b_minus.size() != d)
    fail(errc::input, "boundary data has wrong dimension");

  const int nup = nu / 2;
  const int num = nu - nup;
  if (static_cast<int>(disc.q_plus.size()) < nup + 1 ||
      static_cast<int>(disc.q_minus.size()) < num + 1)
    fail(errc::insufficient_data, "discrete references too short for nu = " + std::to_string(nu));
  // Reference switches from the incoming to the outgoing sequence mid-way.
  auto ref = [&](int k) -> const Vec& {
    return k <= nup ? disc.q_plus[k] : disc.q_minus[nu - k];
  };

  const SectionVectors sv = section_vectors(po, proj);
  const int N = (nu + 1) * d;
  Vec W(N);
  if (warm && static_cast<int>(warm->w.size()) == nu + 1) {
    for (int k = 0; k <= nu; ++k) W.segment(k * d, d) = warm->w[k];
  } else {
    // Geometric interpolation of the pinned boundary parts.
    const double sp = sv.row_s.dot(b_plus);
    const double um = sv.row_u.dot(b_minus);
    for (int k = 0; k <= nu; ++k)
      W.segment(k * d, d) =
          std::pow(po.mu_s, k) * sp * sv.v_s + std::pow(po.mu_u, k - nu) * um * sv.v_u;
  }

  Vec R(N);
  Mat J(N, N);
  auto eval = [&](const Vec& Wv, bool jac) {
    if (jac) J.setZero();
    for (int k = 0; k < nu; ++k) {
      const Vec yk = ref(k) + Bs * Wv.segment(k * d, d);
      const auto pr = poincare_map(m, po, yk, p, jac, opt.tube_radius, opt.integ);
      R.segment(k * d, d) =
          Bs.transpose() * (pr.y1 - ref(k + 1)) - Wv.segment((k + 1) * d, d);
      if (jac) {
        J.block(k * d, k * d, d, d) = pr.dmap;
        J.block(k * d, (k + 1) * d, d, d) = -Mat::Identity(d, d);
      }
    }
    R[nu * d] = sv.row_s.dot(Wv.head(d) - b_plus);
    R[nu * d + 1] = sv.row_u.dot(Wv.tail(d) - b_minus);
    if (jac) {
      J.block(nu * d, 0, 1, d) = sv.row_s.transpose();
      J.block(nu * d + 1, nu * d, 1, d) = sv.row_u.transpose();
    }
  };

  std::vector<double> history;
  double res_norm = 1e300;
  int iters = 0;
  for (iters = 0; iters < opt.max_iter; ++iters) {
    eval(W, true);
    res_norm = R.norm();
    history.push_back(res_norm);
    if (res_norm < opt.tol) break;
    const Vec dW = J.partialPivLu().solve(-R);
    double damp = 1.0;
    bool accepted = false;
    while (damp >= 1.0 / 1024) {
      const Vec Wn = W + damp * dW;
      eval(Wn, false);
      if (R.norm() < res_norm) {
        W = Wn;
        accepted = true;
        break;
      }
      damp *= 0.5;
    }
    if (!accepted) {
      auto e = solver_error(errc::convergence,
                            "discrete segment stalled at |R|=" + std::to_string(res_norm));
      e.residual_history = history;
      throw e;
    }
  }
  eval(W, false);
  res_norm = R.norm();
  if (res_norm >= opt.tol) {
    auto e = solver_error(errc::convergence, "discrete segment: |R|=" + std::to_string(res_norm) +
                                                 " after " + std::to_string(opt.max_iter) +
                                                 " iterations");
    e.residual_history = history;
    throw e;
  }

  DiscreteSegmentResult out;
  out.w.resize(nu + 1);
  out.y.resize(nu + 1);
  for (int k = 0; k <= nu; ++k) {
    out.w[k] = W.segment(k * d, d);
    out.y[k] = ref(k) + Bs * out.w[k];
  }
  out.residual = res_norm;
  out.iterations = iters;
  return out;
}

BPerp b_perp(const DiscreteSegmentResult& seg, const BundleProjections& proj) {
  if (seg.w.empty()) fail(errc::input, "empty discrete segment");
  BPerp b;
  b.plus = proj.q_u * seg.w.front();
  b.minus = proj.q_s * seg.w.back();
  return b;
}

LongOrbitResult couple_long_orbit(const CoupledProblem& cp, int nu, const CoupleOptions& opt,
                                  const LongOrbitResult* warm) {
  if (!cp.model || !cp.po || !cp.proj || !cp.frame_l || !cp.frame_r || !cp.left || !cp.right ||
      !cp.disc)
    fail(errc::input, "incomplete coupling data");
  if (!(cp.omega_e_left < 0.0) || !(cp.omega_e_right > 0.0))
    fail(errc::input, "segment spans at the equilibrium ends have wrong signs");
  if (cp.tan_eu.cols() == 0 || cp.tan_es.cols() == 0)
    fail(errc::input, "missing manifold tangents at the equilibrium ends");
  const auto& m = *cp.model;
  const auto& po = *cp.po;
  const int n = static_cast<int>(po.point.size());
  const SectionVectors sv = section_vectors(po, *cp.proj);
  const Vec u_right = Vec::Zero(cp.frame_r->du());

  LongOrbitResult cur;
  cur.nu = nu;
  bool have_segments = false;
  bool have_middle = warm && static_cast<int>(warm->middle.w.size()) == nu + 1;
  if (have_middle) cur.middle = warm->middle;
  if (warm) {
    cur.left = warm->left;
    cur.right = warm->right;
    have_segments = true;
  }

  // Hand-off coefficients: alpha rides the unstable direction into the left
  // far end, beta rides the stable direction into the right far end.
  Vec v(2);
  v.setZero();
  if (warm && warm->middle.w.size() >= 1) {
    v[0] = sv.row_u.dot(warm->middle.w.front());
    v[1] = sv.row_s.dot(warm->middle.w.back());
  }

  auto pass = [&](const Vec& vv) {
    FarEnd fem_l;
    fem_l.kind = FarEnd::Kind::manifold;
    fem_l.tau = cp.omega_e_left;
    fem_l.a = Vec::Zero(n);
    fem_l.A = cp.tan_eu;
    FarEnd fep_l;
    fep_l.kind = FarEnd::Kind::section;
    fep_l.tau = cp.disc->tau_plus[0];
    fep_l.pt = cp.disc->q_plus[0];
    fep_l.S = po.section_basis;
    fep_l.V = sv.v_s;
    fep_l.a = vv[0] * sv.v_u;
    const ShortSegmentResult* wl = have_segments ? &cur.left : nullptr;
    ShortSegmentResult left =
        solve_short_segment(m, cp.p, *cp.frame_l, *cp.left, fem_l, fep_l, cp.u, opt.seg, wl);

    FarEnd fem_r;
    fem_r.kind = FarEnd::Kind::section;
    fem_r.tau = cp.disc->tau_minus[0];
    fem_r.pt = cp.disc->q_minus[0];
    fem_r.S = po.section_basis;
    fem_r.V = sv.v_u;
    fem_r.a = vv[1] * sv.v_s;
    FarEnd fep_r;
    fep_r.kind = FarEnd::Kind::manifold;
    fep_r.tau = cp.omega_e_right;
    fep_r.a = Vec::Zero(n);
    fep_r.A = cp.tan_es;
    const ShortSegmentResult* wr = have_segments ? &cur.right : nullptr;
    ShortSegmentResult right =
        solve_short_segment(m, cp.p, *cp.frame_r, *cp.right, fem_r, fep_r, u_right, opt.seg, wr);

    const double s_l = left.c_plus[0];
    const double s_r_out = right.c_minus[0];
    const Vec b_plus = s_l * sv.v_s + vv[0] * sv.v_u;
    const Vec b_minus = vv[1] * sv.v_s + s_r_out * sv.v_u;
    const DiscreteSegmentResult* wm = have_middle ? &cur.middle : nullptr;
    DiscreteSegmentResult mid = solve_discrete_segment(m, cp.p, po, *cp.disc, nu, b_plus, b_minus,
                                                       *cp.proj, opt.disc, wm);

    cur.left = std::move(left);
    cur.right = std::move(right);
    cur.middle = std::move(mid);
    have_segments = true;
    have_middle = true;
    cur.c_residual = std::max((cur.left.far_plus - cur.middle.y.front()).norm(),
                              (cur.right.far_minus - cur.middle.y.back()).norm());
    Vec vn(2);
    vn[0] = sv.row_u.dot(cur.middle.w.front());
    vn[1] = sv.row_s.dot(cur.middle.w.back());
    return vn;
  };

  double prev_step = -1.0;
  int slow = 0;
  bool converged = false;
  for (int it = 0; it < opt.max_fp; ++it) {
    const Vec vn = pass(v);
    cur.fp_iterations = it + 1;
    if (!vn.allFinite()) fail(errc::convergence, "coupling produced non-finite hand-off data");
    if (cur.c_residual < opt.tol_c) {
      converged = true;
      break;
    }
    const double step = (vn - v).norm();
    if (prev_step > 0.0) {
      cur.contraction = step / prev_step;
      slow = cur.contraction >= opt.contraction_cap ? slow + 1 : 0;
    }
    v = vn;
    prev_step = step;
    if (slow >= 3) break;
  }

  if (!converged && slow >= 3) {
    // The hand-off map barely contracts; solve it as a 2d root problem.
    cur.newton_fallback = true;
    for (int it = 0; it < 30 && !converged; ++it) {
      const Vec g0 = pass(v);
      if (cur.c_residual < opt.tol_c) {
        converged = true;
        break;
      }
      Mat Jh(2, 2);
      for (int j = 0; j < 2; ++j) {
        Vec vj = v;
        const double h = 1e-7 * (1.0 + std::abs(v[j]));
        vj[j] += h;
        Jh.col(j) = (pass(vj) - g0) / h;
      }
      Jh -= Mat::Identity(2, 2);
      v += Jh.partialPivLu().solve(-(g0 - v));
      if (!v.allFinite()) fail(errc::convergence, "coupling fallback diverged");
    }
  }
  if (!converged)
    fail(errc::convergence, "coupling stalled at hand-off residual " +
                                std::to_string(cur.c_residual) + " after " +
                                std::to_string(cur.fp_iterations) + " passes");

  cur.xi_l = cur.left.xi;
  cur.xi_r = cur.right.xi;
  cur.gap_l = cur.left.gap;
  cur.gap_r = cur.right.gap;
  return cur;
}

std::vector<HypothesisReport> check_hypotheses(const EquilibriumRecord& eq,
                                               const PeriodicOrbitRecord& po,
                                               const CrossSectionFrame* frame_l,
                                               const CrossSectionFrame* frame_r,
                                               const DiscreteReference* disc,
                                               double flip_angle_tol) {
  std::vector<HypothesisReport> out;
  auto push = [&](std::string name, bool ok, double value, std::string note) {
    out.push_back({std::move(name), ok, value, std::move(note)});
  };

  {
    double min_re = 1e300;
    for (int i = 0; i < eq.eigenvalues.size(); ++i)
      min_re = std::min(min_re, std::abs(eq.eigenvalues[i].real()));
    push("equilibrium_hyperbolic", eq.hyperbolic, min_re,
         "smallest |Re| over the spectrum");
  }
  {
    // Leading = closest to the imaginary axis on each side.
    int is = -1, iu = -1;
    for (int i = 0; i < eq.eigenvalues.size(); ++i) {
      const double re = eq.eigenvalues[i].real();
      if (re < 0.0 && (is < 0 || re > eq.eigenvalues[is].real())) is = i;
      if (re > 0.0 && (iu < 0 || re < eq.eigenvalues[iu].real())) iu = i;
    }
    bool ok = is >= 0 && iu >= 0;
    double val = 0.0;
    std::string note = "leading eigenvalues real and simple on both sides";
    for (int idx : {is, iu}) {
      if (idx < 0) {
        ok = false;
        note = "one-sided spectrum";
        continue;
      }
      const auto ev = eq.eigenvalues[idx];
      if (std::abs(ev.imag()) > 1e-9 * (1.0 + std::abs(ev))) {
        ok = false;
        val = std::abs(ev.imag());
        note = "leading eigenvalue is complex";
        continue;
      }
      double gap = 1e300;
      for (int i = 0; i < eq.eigenvalues.size(); ++i) {
        if (i == idx) continue;
        if (eq.eigenvalues[i].real() * ev.real() > 0.0)
          gap = std::min(gap, std::abs(eq.eigenvalues[i].real() - ev.real()));
      }
      if (gap < 1e-9) {
        ok = false;
        val = gap;
        note = "leading eigenvalue is not simple";
      }
    }
    push("equilibrium_leading_real_simple", ok, val, note);
  }
  {
    double margin = 0.0;
    if (po.mu_s != 0.0 || po.mu_u != 0.0)
      margin = std::min(std::abs(po.mu_u) - 1.0, 1.0 - std::abs(po.mu_s));
    push("orbit_saddle_real_multipliers", po.saddle, margin,
         "distance of the nontrivial multipliers from the unit circle");
  }
  auto frame_report = [&](const char* name, const CrossSectionFrame* fr) {
    if (!fr) return;
    double min_other = 1.5707963267948966;
    for (double a : fr->angles)
      if (a >= 1e-3) min_other = std::min(min_other, a);
    std::string note = "smallest transverse principal angle";
    if (fr->du() > 0) note += "; " + std::to_string(fr->du()) + " shared direction(s)";
    push(name, true, min_other, note);
  };
  frame_report("frame_left_transverse", frame_l);
  frame_report("frame_right_transverse", frame_r);
  if (disc && !disc->q_plus.empty()) {
    const Vec u = disc->q_plus.back() - po.point;
    const double c = std::abs(u.normalized().dot(po.v_s));
    const double angle = std::acos(std::min(1.0, c));
    push("approach_along_leading_stable", angle < flip_angle_tol, angle,
         "angle to the leading stable direction at the deepest crossing");
  }
  if (disc && !disc->q_minus.empty()) {
    const Vec u = disc->q_minus.back() - po.point;
    const double c = std::abs(u.normalized().dot(po.v_u));
    const double angle = std::acos(std::min(1.0, c));
    push("departure_along_leading_unstable", angle < flip_angle_tol, angle,
         "angle to the leading unstable direction at the deepest crossing");
  }
  return out;
}

}  // namespace linorbits
