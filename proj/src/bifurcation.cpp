#include "linorbits/bifurcation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <optional>

#include <Eigen/Dense>

#include "linorbits/error.hpp"
#include "linorbits/lincore.hpp"

namespace linorbits {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Finite-difference steps of the trace tangents. find_tangency drives the
// cross product of exactly these tangents to zero and build_frame classifies
// the very same vectors, so the two must never diverge.
constexpr double kTanAlphaH = 1e-3;
constexpr double kTanPhaseFrac = 2e-4;

Vec sv(double s) {
  Vec v(1);
  v[0] = s;
  return v;
}

Vec vec3(double a, double b, double c) {
  Vec v(3);
  v << a, b, c;
  return v;
}

TraceOptions base_trace(const EtopScenario& sc, double capture) {
  TraceOptions to;
  to.delta = sc.trace_delta;
  to.t_max = sc.t_max;
  to.capture_radius = capture;
  to.integ = sc.integ;
  return to;
}

// Restrict a trace to crossings whose distance from the orbit sits in a band
// around the anchor distance. The section plane also slices the orbit tube
// and any flow threading it, and those stray intersections can outnumber and
// out-score the sheet crossing the section was placed for.
TraceOptions banded(TraceOptions to, const PeriodicOrbitRecord& po, double land) {
  to.crossing_ok = [po, land](const Vec& x) {
    const double d = orbit_distance(po, x);
    return d > 0.5 * land && d < 1.6 * land;
  };
  return to;
}

// Orthonormal completion of the normal; columns span the section plane.
Mat plane_basis(const Vec& normal) {
  const int n = static_cast<int>(normal.size());
  Mat N(n, 1);
  N.col(0) = normal.normalized();
  Eigen::HouseholderQR<Mat> qr(N);
  Mat Q = qr.householderQ();
  return Q.rightCols(n - 1);
}

double cross2(const Vec& a, const Vec& b) { return a[0] * b[1] - a[1] * b[0]; }

Vec trace_tangent(const ManifoldTrace& tr, double s, double h) {
  const Vec a = tr.point(sv(s + h));
  const Vec b = tr.point(sv(s - h));
  return (a - b) / (2.0 * h);
}

// First point of the flight at the given distance from the orbit, refined by
// bisection in time. The coarse walk skips distance scans that a norm bound
// already rules out.
std::optional<Vec> land_point(const VectorFieldModel& m, const PeriodicOrbitRecord& po,
                              const Vec& seed, const Vec& p, int dir, double land, double t_max,
                              const IntegratorOptions& integ) {
  // Seeds on the wrong side blow up in finite time; shrink the horizon
  // until the integrator survives and scan whatever remains.
  Trajectory tr;
  for (;;) {
    try {
      tr = integrate(m, seed, p, 0.0, dir * t_max, integ);
      break;
    } catch (const solver_error&) {
      t_max *= 0.5;
      if (t_max < 1.0) return std::nullopt;
    }
  }
  double reach = 0.0;
  for (int i = 0; i < 64; ++i)
    reach = std::max(reach, (po.orbit.state(po.period * i / 64.0) - po.point).norm());
  const double dt = 0.05;
  const int n = static_cast<int>(t_max / dt);
  double t_prev = 0.0;
  double dbg_min = 1e300;
  for (int i = 1; i <= n; ++i) {
    const double t = dir * dt * i;
    const Vec x = tr.state(t);
    if (std::getenv("LINORBITS_DEBUG")) {
      const double d = orbit_distance(po, x);
      if (d < dbg_min) dbg_min = d;
      if (i == n)
        std::fprintf(stderr, "[dbg] land_point dir=%d t_max=%g min dist=%.6g (land=%g)\n", dir,
                     t_max, dbg_min, land);
    }
    if ((x - po.point).norm() - reach <= land && orbit_distance(po, x) <= land) {
      double lo = t_prev, hi = t;
      for (int k = 0; k < 60; ++k) {
        const double mid = 0.5 * (lo + hi);
        (orbit_distance(po, tr.state(mid)) <= land ? hi : lo) = mid;
      }
      return tr.state(hi);
    }
    t_prev = t;
  }
  return std::nullopt;
}

// Forward integration that tolerates a finite-time blow-up past the region
// of interest by halving the horizon until the integrator survives.
Trajectory integrate_survivable(const VectorFieldModel& m, const Vec& x0, const Vec& p, double t1,
                                const IntegratorOptions& integ) {
  double span = t1;
  for (;;) {
    try {
      return integrate(m, x0, p, 0.0, span, integ);
    } catch (const solver_error&) {
      span *= 0.5;
      if (std::abs(span) < std::abs(t1) / 256.0) throw;
    }
  }
}

// Quadratic c0 + c1 t + c2 t^2 through three samples, t centered by caller.
Eigen::Vector3d quad_through(const double* t, const double* v) {
  Eigen::Matrix3d M;
  for (int i = 0; i < 3; ++i) M.row(i) << 1.0, t[i], t[i] * t[i];
  return M.fullPivLu().solve(Eigen::Vector3d(v[0], v[1], v[2]));
}

}  // namespace

EtopScenario designed_scenario(OrganizeMode mode) {
  EtopScenario sc;
  sc.model = "designed";
  sc.p_star = Vec::Zero(2);
  sc.dir_a = Vec::Zero(2);
  sc.dir_a[0] = 1.0;
  sc.dir_b = Vec::Zero(2);
  sc.dir_b[1] = 1.0;
  sc.mode = mode;
  if (mode == OrganizeMode::tangent_b) sc.tangency_guess = -1.1e-3;
  sc.eq_guess = vec3(1.0, 0.0, 1.0);
  sc.return_shift = Vec::Zero(3);
  sc.po_guess = vec3(1.0, 0.0, 0.0);
  sc.period_guess = 2.0 * kPi;
  sc.integ.atol = 1e-12;
  sc.integ.rtol = 1e-10;
  return sc;
}

EtopScenario inj_scenario(int tangency_branch) {
  EtopScenario sc;
  sc.model = "inj";
  sc.p_star = Vec(2);
  sc.p_star << 0.74018, -1.4621;
  sc.dir_a = Vec::Zero(2);
  sc.dir_a[0] = 1.0;
  sc.dir_b = Vec::Zero(2);
  sc.dir_b[1] = 1.0;
  sc.mode = OrganizeMode::tangent_a;
  sc.tangency_branch = tangency_branch;
  sc.eq_guess = vec3(0.0, 0.0, 0.7514);
  sc.return_shift = vec3(0.0, 0.0, -2.0 * kPi);
  sc.po_guess = vec3(0.38, 0.0, -0.6378);
  sc.period_guess = 6.2832;
  sc.integ.atol = 1e-12;
  sc.integ.rtol = 1e-10;
  return sc;
}

EtopScenario scenario_by_name(const std::string& name) {
  if (name == "designed") return designed_scenario(OrganizeMode::transversal);
  if (name == "designed-fold") return designed_scenario(OrganizeMode::tangent_b);
  if (name == "inj") return inj_scenario(1);
  if (name == "inj-second") return inj_scenario(2);
  fail(errc::input, "unknown scenario '" + name + "'");
}

std::vector<std::string> scenario_names() {
  return {"designed", "designed-fold", "inj", "inj-second"};
}

WarmData warm_data(const WorkingSet& ws) {
  WarmData w;
  w.eq_x = ws.eq.x;
  w.eq_ret_x = ws.eq_ret.x;
  w.po_point = ws.po.point;
  w.po_period = ws.po.period;
  w.s_minus_in = ws.left.s_minus;
  w.s_plus_in = ws.left.s_plus;
  w.s_minus_out = ws.right.s_minus;
  w.s_plus_out = ws.right.s_plus;
  return w;
}

struct EtopProblem::EntryCurves {
  EquilibriumRecord eq;
  PeriodicOrbitRecord po;
  ManifoldTrace eu, ps;
};

EtopProblem::EtopProblem(const EtopScenario& sc) : sc_(sc), model_(make_model(sc.model)) {
  const int np = static_cast<int>(model_->param_names().size());
  if (sc_.p_star.size() != np || sc_.dir_a.size() != np || sc_.dir_b.size() != np)
    fail(errc::input, "parameter point and directions must match the model");
  if (sc_.eq_guess.size() != model_->dim() || sc_.po_guess.size() != model_->dim())
    fail(errc::input, "state guesses must match the model dimension");
  organize();
}

Vec EtopProblem::params(double lambda_a, double lambda_b) const {
  return sc_.p_star + lambda_a * sc_.dir_a + lambda_b * sc_.dir_b;
}

EtopProblem::EntryCurves EtopProblem::entry_curves(double lambda_a, double lambda_b,
                                                   const Vec& eq_guess, const Vec& po_guess,
                                                   double period_guess) const {
  const Vec p = params(lambda_a, lambda_b);
  EntryCurves cv;
  cv.eq = find_equilibrium(*model_, eq_guess, p);
  PeriodicOrbitOptions po_opt;
  po_opt.integ = sc_.integ;
  cv.po = find_periodic_orbit(*model_, po_guess, p, period_guess, po_opt);
  // wide capture: the connection point may sit across the orbit tube from
  // the anchor
  const TraceOptions to = banded(base_trace(sc_, sc_.capture + sc_.land_in), cv.po, sc_.land_in);
  cv.eu = unstable_trace(*model_, cv.eq, p, sigma_in_, sigma_in_.point, 1, to);
  cv.ps = stable_trace(*model_, cv.po, p, sigma_in_, sigma_in_.point, branch_ps_, to);
  return cv;
}

void EtopProblem::place_sections(const EquilibriumRecord& eq, const EquilibriumRecord& eq_ret,
                                 const PeriodicOrbitRecord& po, const Vec& p0) {
  const Mat Du = invariant_directions(eq, true);
  if (Du.cols() != 2) fail(errc::input, "departure manifold must be two-dimensional");
  auto section_at = [&](const Vec& x) {
    Section s;
    s.point = x;
    s.normal = model_->rhs(x, p0).normalized();
    return s;
  };

  bool found = false;
  const int n_alpha = std::isnan(sc_.alpha0) ? sc_.scan : 1;
  for (int i = 0; i < n_alpha && !found; ++i) {
    const double a = std::isnan(sc_.alpha0) ? 2.0 * kPi * i / sc_.scan : sc_.alpha0;
    const Vec seed = eq.x + sc_.trace_delta * (std::cos(a) * Du.col(0) + std::sin(a) * Du.col(1));
    if (auto x = land_point(*model_, po, seed, p0, 1, sc_.land_in, sc_.t_max, sc_.integ)) {
      alpha_anchor_ = a;
      sigma_in_ = section_at(*x);
      found = true;
    }
  }
  if (!found) fail(errc::no_crossing, "entry anchoring flight never came near the orbit");

  const Mat Ds = invariant_directions(eq_ret, false);
  if (Ds.cols() != 1) fail(errc::input, "arrival manifold must be one-dimensional");
  for (int b : {1, -1}) {
    const Vec seed = eq_ret.x + b * sc_.trace_delta * Ds.col(0);
    if (auto x = land_point(*model_, po, seed, p0, -1, sc_.land_out, sc_.t_max, sc_.integ)) {
      branch_es_ = b;
      sigma_out_ = section_at(*x);
      return;
    }
  }
  fail(errc::no_crossing, "exit anchoring flight never came near the orbit");
}

void EtopProblem::organize() {
  const Vec p0 = params(0.0, 0.0);
  const EquilibriumRecord eq = find_equilibrium(*model_, sc_.eq_guess, p0);
  Vec ret_guess = eq.x;
  if (sc_.return_shift.size()) ret_guess += sc_.return_shift;
  const EquilibriumRecord eq_ret = find_equilibrium(*model_, ret_guess, p0);
  PeriodicOrbitOptions po_opt;
  po_opt.integ = sc_.integ;
  const PeriodicOrbitRecord po =
      find_periodic_orbit(*model_, sc_.po_guess, p0, sc_.period_guess, po_opt);

  place_sections(eq, eq_ret, po, p0);

  // the bootstrap helpers below re-solve the invariant sets from these
  center_warm_.eq_x = eq.x;
  center_warm_.eq_ret_x = eq_ret.x;
  center_warm_.po_point = po.point;
  center_warm_.po_period = po.period;

  // Exit frame. The arrival trace is a single point q_es; the orbit-side
  // trace is scanned over phase and branch for the closest pass, matched,
  // and the frame is rebuilt at q_es with the matched-phase tangent.
  const TraceOptions wide_out =
      banded(base_trace(sc_, sc_.capture + sc_.land_out), po, sc_.land_out);
  const ManifoldTrace es =
      stable_trace(*model_, eq_ret, p0, sigma_out_, sigma_out_.point, branch_es_, wide_out);
  const Vec q_es = es.point(Vec());
  double best = 1e300, s_pu = 0.0;
  int bb = 1;
  for (int b : {1, -1}) {
    const ManifoldTrace pu =
        unstable_trace(*model_, po, p0, sigma_out_, sigma_out_.point, b, wide_out);
    for (int j = 0; j < sc_.scan; ++j) {
      const double s = po.period * j / sc_.scan;
      try {
        const double d = (pu.point(sv(s)) - q_es).norm();
        if (d < best) {
          best = d;
          s_pu = s;
          bb = b;
        }
      } catch (const solver_error&) {
      }
    }
  }
  if (best > 1e299) fail(errc::no_crossing, "exit-side orbit trace never hit the section");
  if (std::getenv("LINORBITS_DEBUG"))
    std::fprintf(stderr, "[dbg] exit scan: best=%.6g s_pu=%.6g b=%d q_es=(%.6g,%.6g,%.6g) anchor=(%.6g,%.6g,%.6g)\n",
                 best, s_pu, bb, q_es[0], q_es[1], q_es[2], sigma_out_.point[0],
                 sigma_out_.point[1], sigma_out_.point[2]);
  branch_pu_ = bb;
  const ManifoldTrace pu =
      unstable_trace(*model_, po, p0, sigma_out_, sigma_out_.point, branch_pu_, wide_out);
  auto exit_frame_at = [&](double s, const Vec& q0) {
    const Vec f0 = model_->rhs(q0, p0);
    Mat tu(3, 2);
    tu.col(0) = f0;
    tu.col(1) = trace_tangent(pu, s, po.period * kTanPhaseFrac);
    Mat ts(3, 1);
    ts.col(0) = f0;
    frame_out_ = build_frame(q0, f0, tu, ts, 1e-6, 1e-3, sigma_out_.normal);
  };
  exit_frame_at(s_pu, pu.point(sv(s_pu)));
  const ReferencePair right0 = reference_segments(frame_out_, pu, es, Vec(), sv(s_pu), Vec());
  exit_frame_at(right0.s_minus[0], right0.q_plus0);
  center_warm_.s_minus_out = right0.s_minus;
  center_warm_.s_plus_out = right0.s_plus;

  // Entry contact scan over departure angle, orbit phase, and both sides of
  // the orbit-stable trace.
  const TraceOptions wide_in =
      banded(base_trace(sc_, sc_.capture + sc_.land_in), po, sc_.land_in);
  const ManifoldTrace eu =
      unstable_trace(*model_, eq, p0, sigma_in_, sigma_in_.point, 1, wide_in);
  const int ns = sc_.scan;
  std::vector<Vec> eu_pts(ns);
  std::vector<char> eu_ok(ns, 0);
  for (int i = 0; i < ns; ++i) {
    try {
      eu_pts[i] = eu.point(sv(2.0 * kPi * i / ns));
      eu_ok[i] = 1;
      if (std::getenv("LINORBITS_DEBUG")) {
        const HalfOrbit ho = eu.orbit(sv(2.0 * kPi * i / ns));
        std::fprintf(stderr,
                     "[dbg] eu[%02d] a=%.4f t=%.3f pt=(%.4g,%.4g,%.4g) od=%.4g danc=%.4g\n", i,
                     2.0 * kPi * i / ns, ho.t_hit, eu_pts[i][0], eu_pts[i][1], eu_pts[i][2],
                     orbit_distance(po, eu_pts[i]), (eu_pts[i] - sigma_in_.point).norm());
      }
    } catch (const solver_error& e) {
      if (std::getenv("LINORBITS_DEBUG"))
        std::fprintf(stderr, "[dbg] eu[%02d] a=%.4f MISS %s\n", i, 2.0 * kPi * i / ns, e.what());
    }
  }
  struct Cand {
    double d, a, s;
    int b;
  };
  std::vector<Cand> cands;
  for (int b : {1, -1}) {
    const ManifoldTrace ps = stable_trace(*model_, po, p0, sigma_in_, sigma_in_.point, b, wide_in);
    std::vector<Vec> ps_pts(ns);
    std::vector<char> ps_ok(ns, 0);
    for (int j = 0; j < ns; ++j) {
      try {
        ps_pts[j] = ps.point(sv(po.period * j / ns));
        ps_ok[j] = 1;
      } catch (const solver_error&) {
      }
    }
    Mat D = Mat::Constant(ns, ns, 1e300);
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < ns; ++j)
        if (eu_ok[i] && ps_ok[j]) D(i, j) = (eu_pts[i] - ps_pts[j]).norm();
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < ns; ++j) {
        const double d = D(i, j);
        if (d > 1e299) continue;
        const int im = (i + ns - 1) % ns, ip = (i + 1) % ns;
        const int jm = (j + ns - 1) % ns, jp = (j + 1) % ns;
        if (d <= D(im, j) && d <= D(ip, j) && d <= D(i, jm) && d <= D(i, jp))
          cands.push_back({d, 2.0 * kPi * i / ns, po.period * j / ns, b});
      }
  }
  if (cands.empty()) fail(errc::no_crossing, "entry traces never came close on the section");
  std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.d < y.d; });
  if (std::getenv("LINORBITS_DEBUG")) {
    std::fprintf(stderr, "[dbg] entry anchor=(%.6g,%.6g,%.6g) alpha=%.6g\n", sigma_in_.point[0],
                 sigma_in_.point[1], sigma_in_.point[2], alpha_anchor_);
    for (size_t i = 0; i < cands.size() && i < 8; ++i)
      std::fprintf(stderr, "[dbg] entry cand %zu: d=%.6g a=%.6g s=%.6g b=%d\n", i, cands[i].d,
                   cands[i].a, cands[i].s, cands[i].b);
  }
  std::vector<Cand> kept;
  for (const Cand& c : cands) {
    bool dup = false;
    for (const Cand& k : kept) {
      if (k.b != c.b) continue;
      double da = std::fmod(std::abs(k.a - c.a), 2.0 * kPi);
      da = std::min(da, 2.0 * kPi - da);
      double dsp = std::fmod(std::abs(k.s - c.s), po.period);
      dsp = std::min(dsp, po.period - dsp);
      if (da < 2.5 * (2.0 * kPi / ns) && dsp < 2.5 * (po.period / ns)) dup = true;
    }
    if (!dup) kept.push_back(c);
  }

  if (sc_.mode == OrganizeMode::transversal) {
    const Cand c = kept.front();
    branch_ps_ = c.b;
    const ManifoldTrace ps =
        stable_trace(*model_, po, p0, sigma_in_, sigma_in_.point, branch_ps_, wide_in);
    auto entry_frame_at = [&](double a, double s, const Vec& q0) {
      const Vec f0 = model_->rhs(q0, p0);
      Mat tu(3, 2);
      tu.col(0) = f0;
      tu.col(1) = trace_tangent(eu, a, kTanAlphaH);
      Mat ts(3, 2);
      ts.col(0) = f0;
      ts.col(1) = trace_tangent(ps, s, po.period * kTanPhaseFrac);
      frame_in_ = build_frame(q0, f0, tu, ts, 1e-6, 1e-3, sigma_in_.normal);
    };
    entry_frame_at(c.a, c.s, 0.5 * (eu.point(sv(c.a)) + ps.point(sv(c.s))));
    const ReferencePair left0 =
        reference_segments(frame_in_, eu, ps, Vec(), sv(c.a), sv(c.s));
    entry_frame_at(left0.s_minus[0], left0.s_plus[0], left0.q_plus0);
    center_warm_.s_minus_in = left0.s_minus;
    center_warm_.s_plus_in = left0.s_plus;
    la_star_ = 0.0;
    lb_star_ = 0.0;
  } else {
    const int idx = sc_.tangency_branch - 1;
    if (idx < 0 || idx >= static_cast<int>(kept.size()))
      fail(errc::insufficient_data, "fewer entry contacts than the requested branch");
    const Cand c = kept[idx];
    branch_ps_ = c.b;
    const bool adjust_b = sc_.mode == OrganizeMode::tangent_b;
    const TangencyInfo ti = find_tangency(adjust_b ? 0.0 : sc_.tangency_guess,
                                          adjust_b ? sc_.tangency_guess : 0.0, adjust_b, c.a, c.s);
    la_star_ = ti.lambda_a;
    lb_star_ = ti.lambda_b;
    const EntryCurves cv = entry_curves(la_star_, lb_star_, center_warm_.eq_x,
                                        center_warm_.po_point, center_warm_.po_period);
    const Vec pstar = params(la_star_, lb_star_);
    const Vec f0 = model_->rhs(ti.q0, pstar);
    Mat tu(3, 2);
    tu.col(0) = f0;
    tu.col(1) = trace_tangent(cv.eu, ti.s_minus, kTanAlphaH);
    Mat ts(3, 2);
    ts.col(0) = f0;
    ts.col(1) = trace_tangent(cv.ps, ti.s_plus, cv.po.period * kTanPhaseFrac);
    // at the organized contact the two curve tangents coincide; 1e-3 keeps
    // the coincidence test above the tangent FD noise
    frame_in_ = build_frame(ti.q0, f0, tu, ts, 1e-3, 3e-3, sigma_in_.normal);
    center_warm_.s_minus_in = sv(ti.s_minus);
    center_warm_.s_plus_in = sv(ti.s_plus);
  }

  center_ = working_set(la_star_, lb_star_, Vec::Zero(frame_in_.du()), 2, 2, &center_warm_);
  center_warm_ = warm_data(center_);
}

WorkingSet EtopProblem::working_set(double lambda_a, double lambda_b, const Vec& u, int need_plus,
                                    int need_minus, const WarmData* warm) const {
  if (u.size() != frame_in_.du()) fail(errc::input, "entry offset dimension mismatch");
  const WarmData& wd = warm ? *warm : center_warm_;
  WorkingSet ws;
  ws.lambda_a = lambda_a;
  ws.lambda_b = lambda_b;
  ws.u = u;
  ws.p = params(lambda_a, lambda_b);
  ws.eq = find_equilibrium(*model_, wd.eq_x, ws.p);
  ws.eq_ret = find_equilibrium(*model_, wd.eq_ret_x, ws.p);
  PeriodicOrbitOptions po_opt;
  po_opt.integ = sc_.integ;
  ws.po = find_periodic_orbit(*model_, wd.po_point, ws.p, wd.po_period, po_opt);
  ws.proj = bundle_projections(ws.po);
  const TraceOptions tight_in = banded(base_trace(sc_, sc_.capture), ws.po, sc_.land_in);
  const TraceOptions tight_out = banded(base_trace(sc_, sc_.capture), ws.po, sc_.land_out);
  TraceOptions tin = tight_in;
  tin.extend_time = sc_.extend_in;
  TraceOptions tout = tight_out;
  tout.extend_time = sc_.extend_out;
  const ManifoldTrace eu =
      unstable_trace(*model_, ws.eq, ws.p, sigma_in_, frame_in_.q0, 1, tight_in);
  const ManifoldTrace ps =
      stable_trace(*model_, ws.po, ws.p, sigma_in_, frame_in_.q0, branch_ps_, tin);
  const ManifoldTrace pu =
      unstable_trace(*model_, ws.po, ws.p, sigma_out_, frame_out_.q0, branch_pu_, tout);
  const ManifoldTrace es =
      stable_trace(*model_, ws.eq_ret, ws.p, sigma_out_, frame_out_.q0, branch_es_, tight_out);
  ws.left = reference_segments(frame_in_, eu, ps, u, wd.s_minus_in, wd.s_plus_in);
  ws.right = reference_segments(frame_out_, pu, es, Vec(), wd.s_minus_out, wd.s_plus_out);
  ws.disc = discrete_references(ws.po, ws.left, ws.right, sc_.tube_enter, need_plus, need_minus);
  ws.omega_e_left = ws.left.minus.tau_seed();
  ws.omega_e_right = ws.right.plus.tau_seed();
  return ws;
}

CoupledProblem EtopProblem::coupled(const WorkingSet& ws) const {
  CoupledProblem cp;
  cp.model = model_.get();
  cp.p = ws.p;
  cp.po = &ws.po;
  cp.proj = &ws.proj;
  cp.frame_l = &frame_in_;
  cp.frame_r = &frame_out_;
  cp.left = &ws.left;
  cp.right = &ws.right;
  cp.disc = &ws.disc;
  cp.u = ws.u;
  cp.omega_e_left = ws.omega_e_left;
  cp.omega_e_right = ws.omega_e_right;
  cp.tan_eu = invariant_directions(ws.eq, true);
  cp.tan_es = invariant_directions(ws.eq_ret, false);
  return cp;
}

double EtopProblem::exit_mismatch(double lambda_a, double lambda_b, const WarmData* warm,
                                  WarmData* warm_out) const {
  const WarmData& wd = warm ? *warm : center_warm_;
  const Vec p = params(lambda_a, lambda_b);
  const EquilibriumRecord eq_ret = find_equilibrium(*model_, wd.eq_ret_x, p);
  PeriodicOrbitOptions po_opt;
  po_opt.integ = sc_.integ;
  const PeriodicOrbitRecord po = find_periodic_orbit(*model_, wd.po_point, p, wd.po_period, po_opt);
  const TraceOptions tight = banded(base_trace(sc_, sc_.capture), po, sc_.land_out);
  const ManifoldTrace pu =
      unstable_trace(*model_, po, p, sigma_out_, frame_out_.q0, branch_pu_, tight);
  const ManifoldTrace es =
      stable_trace(*model_, eq_ret, p, sigma_out_, frame_out_.q0, branch_es_, tight);
  const ReferencePair right =
      reference_segments(frame_out_, pu, es, Vec(), wd.s_minus_out, wd.s_plus_out);
  if (warm_out) {
    *warm_out = wd;
    warm_out->eq_ret_x = eq_ret.x;
    warm_out->po_point = po.point;
    warm_out->po_period = po.period;
    warm_out->s_minus_out = right.s_minus;
    warm_out->s_plus_out = right.s_plus;
  }
  return right.gap_inf;
}

TangencyInfo EtopProblem::find_tangency(double lambda_a0, double lambda_b0, bool adjust_b,
                                        double s_minus0, double s_plus0) const {
  const Mat Pl = plane_basis(sigma_in_.normal);
  Vec z(3);
  z << s_minus0, s_plus0, adjust_b ? lambda_b0 : lambda_a0;
  Vec q_mid;
  double period = center_warm_.po_period;
  auto eval = [&](const Vec& zz) {
    const double la = adjust_b ? lambda_a0 : zz[2];
    const double lb = adjust_b ? zz[2] : lambda_b0;
    const EntryCurves cv =
        entry_curves(la, lb, center_warm_.eq_x, center_warm_.po_point, center_warm_.po_period);
    period = cv.po.period;
    const Vec pm = cv.eu.point(sv(zz[0]));
    const Vec pp = cv.ps.point(sv(zz[1]));
    Vec tm = Pl.transpose() * trace_tangent(cv.eu, zz[0], kTanAlphaH);
    Vec tp = Pl.transpose() * trace_tangent(cv.ps, zz[1], cv.po.period * kTanPhaseFrac);
    tm.normalize();
    tp.normalize();
    q_mid = 0.5 * (pm + pp);
    Vec F(3);
    F.head(2) = Pl.transpose() * (pm - pp);
    F[2] = cross2(tm, tp);
    return F;
  };

  Vec F = eval(z);
  double fn = F.norm();
  for (int it = 0; it < 40; ++it) {
    if (fn < 1e-12) break;
    Mat J(3, 3);
    for (int j = 0; j < 3; ++j) {
      const double h = j == 0 ? 1e-6 : (j == 1 ? 1e-6 * std::max(1.0, period) : 1e-7);
      Vec zp = z;
      zp[j] += h;
      J.col(j) = (eval(zp) - F) / h;
    }
    const Vec dz = J.fullPivLu().solve(-F);
    if (!dz.allFinite()) fail(errc::convergence, "singular entry-contact system");
    double damp = 1.0;
    for (;; damp *= 0.5) {
      bool ok = true;
      Vec Fc;
      try {
        Fc = eval(z + damp * dz);
      } catch (const solver_error&) {
        ok = false;
      }
      if (ok && Fc.norm() < fn) {
        z += damp * dz;
        F = Fc;
        fn = Fc.norm();
        break;
      }
      if (damp < 1.0 / 1024) fail(errc::convergence, "entry tangency did not settle");
    }
  }
  if (fn >= 1e-10) fail(errc::convergence, "entry tangency did not settle");
  TangencyInfo ti;
  ti.lambda_a = adjust_b ? lambda_a0 : z[2];
  ti.lambda_b = adjust_b ? z[2] : lambda_b0;
  ti.s_minus = z[0];
  ti.s_plus = z[1];
  ti.q0 = q_mid;
  ti.residual = fn;
  return ti;
}

std::vector<HypothesisReport> problem_hypotheses(const EtopProblem& pr) {
  const WorkingSet& c = pr.center();
  std::vector<HypothesisReport> out =
      check_hypotheses(c.eq, c.po, &pr.frame_in(), &pr.frame_out(), &c.disc);
  HypothesisReport r;
  r.name = "exit_gap_parameter_response";
  const double h = 1e-5;
  WarmData wd = pr.center_warm();
  const double g0 = pr.exit_mismatch(pr.lambda_a_star() - h, pr.lambda_b_star(), &wd);
  const double g1 = pr.exit_mismatch(pr.lambda_a_star() + h, pr.lambda_b_star(), &wd);
  r.value = (g1 - g0) / (2.0 * h);
  r.ok = std::abs(r.value) > 1e-6;
  r.note = "exit gap must respond to the unfolding parameter";
  out.push_back(r);
  return out;
}

double find_etop_cycle(const EtopProblem& pr, double lambda_b, double a0, double a1, double tol,
                       int max_iter) {
  WarmData wd = pr.center_warm();
  auto g = [&](double a) {
    WarmData out;
    const double v = pr.exit_mismatch(a, lambda_b, &wd, &out);
    wd = out;
    return v;
  };
  double x0 = a0, x1 = a1;
  double f0 = g(x0), f1 = g(x1);
  for (int it = 0; it < max_iter; ++it) {
    if (std::abs(f1 - f0) < 1e-300) fail(errc::convergence, "flat exit mismatch in the secant");
    const double x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
    x0 = x1;
    f0 = f1;
    x1 = x2;
    f1 = g(x1);
    if (std::abs(x1 - x0) < tol) return x1;
  }
  fail(errc::convergence, "exit-connection root did not settle");
}

namespace {

// Persistent-warm evaluator of the active gap components at one crossing
// count. Failed evaluations leave the warm state untouched.
class GapSystem {
 public:
  GapSystem(const EtopProblem& pr, int nu, const HomoclinicOptions& opt)
      : pr_(pr), nu_(nu), opt_(opt), wd_(pr.center_warm()) {
    if (pr.frame_out().dz() != 1)
      fail(errc::degeneracy, "exit frame lacks the jump coordinate");
    np_ = nu / 2 + opt.need_margin;
    nm_ = (nu - nu / 2) + opt.need_margin;
  }

  int n_gaps() const { return (pr_.frame_in().dz() == 1 ? 1 : 0) + 1; }

  void seed(const WarmData& wd) { wd_ = wd; }
  void seed(const WarmData& wd, const LongOrbitResult& orb) {
    wd_ = wd;
    orb_ = orb;
    have_ = true;
  }

  Vec gaps(double lambda_a, double lambda_b, const Vec& u) {
    WorkingSet ws = pr_.working_set(lambda_a, lambda_b, u, np_, nm_, &wd_);
    LongOrbitResult r = couple_long_orbit(pr_.coupled(ws), nu_, opt_.couple, have_ ? &orb_ : nullptr);
    wd_ = warm_data(ws);
    orb_ = std::move(r);
    have_ = true;
    Vec g(n_gaps());
    int k = 0;
    if (pr_.frame_in().dz() == 1) g[k++] = orb_.gap_l;
    g[k] = orb_.gap_r;
    return g;
  }

  const WarmData& warm() const { return wd_; }
  const LongOrbitResult& orbit() const { return orb_; }

 private:
  const EtopProblem& pr_;
  int nu_;
  HomoclinicOptions opt_;
  int np_ = 0, nm_ = 0;
  WarmData wd_;
  LongOrbitResult orb_;
  bool have_ = false;
};

}  // namespace

HomoclinicPoint solve_homoclinic(const EtopProblem& pr, int nu, double lambda_a, double lambda_b,
                                 const Vec& u0, bool vary_b, const HomoclinicOptions& opt,
                                 const HomoclinicPoint* warm) {
  const int du = pr.frame_in().du();
  if (u0.size() != du) fail(errc::input, "entry offset dimension mismatch");
  GapSystem gs(pr, nu, opt);
  const int ng = gs.n_gaps();
  if (ng != 1 + du) fail(errc::input, "gap equations are not square for this frame");
  if (warm) gs.seed(warm->warm, warm->orbit);

  Vec zeta(ng);
  zeta[0] = vary_b ? lambda_b : lambda_a;
  zeta.tail(du) = u0;
  auto at = [&](const Vec& z) {
    const double la = vary_b ? lambda_a : z[0];
    const double lb = vary_b ? z[0] : lambda_b;
    return gs.gaps(la, lb, z.tail(du));
  };

  Vec g = at(zeta);
  double gn = g.norm();
  double step = 1e300;
  int it = 0;
  for (; it < opt.max_iter && gn >= opt.gap_tol; ++it) {
    Mat J(ng, ng);
    for (int j = 0; j < ng; ++j) {
      const double h = (j == 0 ? opt.fd_lambda : opt.fd_u) * (1.0 + std::abs(zeta[j]));
      Vec zp = zeta;
      zp[j] += h;
      J.col(j) = (at(zp) - g) / h;
    }
    const Vec dz = J.fullPivLu().solve(-g);
    if (!dz.allFinite()) fail(errc::convergence, "singular gap system");
    double damp = 1.0;
    for (;; damp *= 0.5) {
      bool ok = true;
      Vec gc;
      try {
        gc = at(zeta + damp * dz);
      } catch (const solver_error&) {
        ok = false;
      }
      if (ok && gc.norm() < gn) {
        zeta += damp * dz;
        g = gc;
        gn = gc.norm();
        break;
      }
      if (damp < 1.0 / 4096) fail(errc::convergence, "homoclinic step rejected");
    }
    step = (damp * dz).norm();
    if (step < opt.tol) {
      ++it;
      break;
    }
  }
  if (gn >= opt.gap_tol && step >= opt.tol)
    fail(errc::convergence, "homoclinic solve hit the iteration cap");

  HomoclinicPoint hp;
  hp.nu = nu;
  hp.lambda_a = vary_b ? lambda_a : zeta[0];
  hp.lambda_b = vary_b ? zeta[0] : lambda_b;
  hp.u = zeta.tail(du);
  hp.residual = gn;
  hp.iterations = it;
  hp.warm = gs.warm();
  hp.orbit = gs.orbit();
  return hp;
}

std::vector<HomoclinicPoint> homoclinic_sequence(const EtopProblem& pr, int nu_min, int nu_max,
                                                 double lambda_a0, double lambda_b0, const Vec& u0,
                                                 bool vary_b, const HomoclinicOptions& opt) {
  if (nu_min > nu_max) fail(errc::input, "empty crossing-count range");
  std::vector<HomoclinicPoint> out;
  double act = vary_b ? lambda_b0 : lambda_a0;
  Vec ug = u0;
  auto nxt = [](double x0, double x1, double x2) {
    const double d1 = x1 - x0, d2 = x2 - x1;
    if (std::abs(d1) < 1e-300) return x2;
    const double r = std::clamp(d2 / d1, -0.9, 0.9);
    return x2 + r * d2;
  };
  for (int nu = nu_min; nu <= nu_max; ++nu) {
    const double la = vary_b ? lambda_a0 : act;
    const double lb = vary_b ? act : lambda_b0;
    const HomoclinicPoint* w = out.empty() ? nullptr : &out.back();
    out.push_back(solve_homoclinic(pr, nu, la, lb, ug, vary_b, opt, w));
    const int n = static_cast<int>(out.size());
    auto active = [&](const HomoclinicPoint& p) { return vary_b ? p.lambda_b : p.lambda_a; };
    if (n >= 3) {
      act = nxt(active(out[n - 3]), active(out[n - 2]), active(out[n - 1]));
      for (int j = 0; j < ug.size(); ++j)
        ug[j] = nxt(out[n - 3].u[j], out[n - 2].u[j], out[n - 1].u[j]);
    } else if (n == 2) {
      act = active(out[1]) + 0.5 * (active(out[1]) - active(out[0]));
      ug = out[1].u + 0.5 * (out[1].u - out[0].u);
    } else {
      act = active(out[0]);
      ug = out[0].u;
    }
  }
  return out;
}

VertexPoint solve_vertex(const EtopProblem& pr, int nu, double lambda_a0, double lambda_b0,
                         double u0, const HomoclinicOptions& opt, const VertexPoint* warm) {
  if (pr.frame_in().du() != 1 || pr.frame_in().dz() != 1)
    fail(errc::input, "vertex solve needs the tangent entry frame");
  GapSystem gs(pr, nu, opt);
  if (warm) gs.seed(warm->warm);

  const double hu = opt.fd_u;
  auto F = [&](const Vec& z) {
    const Vec g0 = gs.gaps(z[0], z[1], sv(z[2]));
    const Vec gp = gs.gaps(z[0], z[1], sv(z[2] + hu));
    const Vec gm = gs.gaps(z[0], z[1], sv(z[2] - hu));
    Vec f(3);
    f << g0[0], g0[1], (gp[0] - gm[0]) / (2.0 * hu);
    return f;
  };

  Vec z(3);
  z << lambda_a0, lambda_b0, u0;
  Vec f = F(z);
  double fn = f.norm();
  double step = 1e300;
  auto done = [&] {
    return (f.head(2).norm() < 10.0 * opt.gap_tol && std::abs(f[2]) < 1e-4) || step < 1e-8;
  };
  for (int it = 0; it < opt.max_iter && !done(); ++it) {
    Mat J(3, 3);
    const double hs[3] = {opt.fd_lambda * (1.0 + std::abs(z[0])),
                          opt.fd_lambda * (1.0 + std::abs(z[1])), 10.0 * opt.fd_u};
    for (int j = 0; j < 3; ++j) {
      Vec zp = z;
      zp[j] += hs[j];
      J.col(j) = (F(zp) - f) / hs[j];
    }
    const Vec dz = J.fullPivLu().solve(-f);
    if (!dz.allFinite()) fail(errc::convergence, "singular vertex system");
    double damp = 1.0;
    for (;; damp *= 0.5) {
      bool ok = true;
      Vec fc;
      try {
        fc = F(z + damp * dz);
      } catch (const solver_error&) {
        ok = false;
      }
      if (ok && fc.norm() < fn) {
        z += damp * dz;
        f = fc;
        fn = fc.norm();
        break;
      }
      if (damp < 1.0 / 4096) fail(errc::convergence, "vertex step rejected");
    }
    step = (damp * dz).norm();
  }
  if (!done()) fail(errc::convergence, "vertex solve hit the iteration cap");

  VertexPoint vp;
  vp.nu = nu;
  vp.lambda_a = z[0];
  vp.lambda_b = z[1];
  vp.u = z[2];
  vp.residual = fn;
  vp.warm = gs.warm();
  return vp;
}

HomoclinicCurve continue_homoclinic(const EtopProblem& pr, int nu, const HomoclinicPoint& start,
                                    const CurveOptions& opt) {
  if (pr.frame_in().du() != 1 || pr.frame_in().dz() != 1)
    fail(errc::input, "continuation needs the tangent entry frame");
  GapSystem gs(pr, nu, opt.solve);

  using V3 = Eigen::Vector3d;
  using V2 = Eigen::Vector2d;
  auto G = [&](const V3& z) {
    const Vec g = gs.gaps(z[0], z[1], sv(z[2]));
    return V2(g[0], g[1]);
  };
  auto jac = [&](const V3& z, const V2& g0) {
    Eigen::Matrix<double, 2, 3> J;
    const double hs[3] = {opt.solve.fd_lambda * (1.0 + std::abs(z[0])),
                          opt.solve.fd_lambda * (1.0 + std::abs(z[1])),
                          opt.solve.fd_u * (1.0 + std::abs(z[2]))};
    for (int j = 0; j < 3; ++j) {
      V3 zp = z;
      zp[j] += hs[j];
      J.col(j) = (G(zp) - g0) / hs[j];
    }
    return J;
  };
  auto in_window = [&](const V3& z) {
    return z[0] >= opt.a_lo && z[0] <= opt.a_hi && z[1] >= opt.b_lo && z[1] <= opt.b_hi;
  };

  const V3 z0(start.lambda_a, start.lambda_b, start.u.size() ? start.u[0] : 0.0);
  auto run = [&](int side) {
    std::vector<CurvePoint> pts;
    gs.seed(start.warm, start.orbit);
    V3 z = z0;
    V2 g;
    try {
      g = G(z);
    } catch (const solver_error&) {
      return pts;
    }
    V3 tprev = V3::Zero();
    double h = opt.h0;
    bool first = true;
    while (static_cast<int>(pts.size()) < opt.max_points / 2) {
      Eigen::Matrix<double, 2, 3> J;
      try {
        J = jac(z, g);
      } catch (const solver_error&) {
        break;
      }
      Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>> svd(J, Eigen::ComputeFullV);
      V3 t = svd.matrixV().col(2);
      if (first) {
        if (t[2] < 0.0) t = -t;
        if (side < 0) t = -t;
        first = false;
      } else if (t.dot(tprev) < 0.0) {
        t = -t;
      }

      bool accepted = false;
      while (!accepted) {
        const V3 zp = z + h * t;
        V3 zc = zp;
        Eigen::Matrix3d M;
        M.topRows(2) = J;
        M.row(2) = t.transpose();
        const auto lu = M.partialPivLu();
        bool ok = false;
        int used = opt.max_corrector;
        for (int k = 0; k < opt.max_corrector; ++k) {
          V2 gc;
          try {
            gc = G(zc);
          } catch (const solver_error&) {
            break;
          }
          const V3 rhs(-gc[0], -gc[1], -t.dot(zc - zp));
          const V3 dz = lu.solve(rhs);
          zc += dz;
          if (dz.norm() < opt.solve.tol) {
            ok = true;
            used = k + 1;
            break;
          }
        }
        if (!ok) {
          h *= 0.5;
          if (h < opt.h_min) return pts;
          continue;
        }
        try {
          g = G(zc);
        } catch (const solver_error&) {
          h *= 0.5;
          if (h < opt.h_min) return pts;
          continue;
        }
        tprev = t;
        z = zc;
        CurvePoint cpnt;
        cpnt.lambda_a = z[0];
        cpnt.lambda_b = z[1];
        cpnt.u = z[2];
        cpnt.residual = g.norm();
        pts.push_back(cpnt);
        if (used <= 3) h = std::min(h * 1.3, opt.h_max);
        accepted = true;
      }
      if (!in_window(z)) break;
    }
    return pts;
  };

  const std::vector<CurvePoint> fwd = run(1);
  const std::vector<CurvePoint> bwd = run(-1);

  HomoclinicCurve out;
  out.points.reserve(bwd.size() + fwd.size() + 1);
  for (auto it = bwd.rbegin(); it != bwd.rend(); ++it) out.points.push_back(*it);
  CurvePoint c0;
  c0.lambda_a = z0[0];
  c0.lambda_b = z0[1];
  c0.u = z0[2];
  c0.residual = start.residual;
  out.points.push_back(c0);
  for (const CurvePoint& cp : fwd) out.points.push_back(cp);
  double s = 0.0;
  for (size_t i = 0; i < out.points.size(); ++i) {
    if (i > 0) {
      const CurvePoint &a = out.points[i - 1], &b = out.points[i];
      s += std::sqrt((a.lambda_a - b.lambda_a) * (a.lambda_a - b.lambda_a) +
                     (a.lambda_b - b.lambda_b) * (a.lambda_b - b.lambda_b) +
                     (a.u - b.u) * (a.u - b.u));
    }
    out.points[i].s = s;
  }

  const int n = static_cast<int>(out.points.size());
  for (int i = 1; i + 1 < n; ++i) {
    auto val = [&](int k) {
      return opt.vertex_dir_a * out.points[k].lambda_a + opt.vertex_dir_b * out.points[k].lambda_b;
    };
    const double d1 = val(i) - val(i - 1), d2 = val(i + 1) - val(i);
    if (d1 == 0.0 || d1 * d2 >= 0.0) continue;
    const double sc = out.points[i].s;
    double ts[3], va[3], vb[3], vu[3], vv[3];
    for (int k = 0; k < 3; ++k) {
      const CurvePoint& p = out.points[i - 1 + k];
      ts[k] = p.s - sc;
      va[k] = p.lambda_a;
      vb[k] = p.lambda_b;
      vu[k] = p.u;
      vv[k] = opt.vertex_dir_a * p.lambda_a + opt.vertex_dir_b * p.lambda_b;
    }
    const Eigen::Vector3d qv = quad_through(ts, vv);
    double tstar = 0.0;
    if (std::abs(qv[2]) > 1e-300) tstar = -qv[1] / (2.0 * qv[2]);
    tstar = std::clamp(tstar, ts[0], ts[2]);
    const Eigen::Vector3d qa = quad_through(ts, va);
    const Eigen::Vector3d qb = quad_through(ts, vb);
    const Eigen::Vector3d qu = quad_through(ts, vu);
    CurveVertex vx;
    vx.index = i;
    vx.s = sc + tstar;
    vx.lambda_a = qa[0] + qa[1] * tstar + qa[2] * tstar * tstar;
    vx.lambda_b = qb[0] + qb[1] * tstar + qb[2] * tstar * tstar;
    vx.u = qu[0] + qu[1] * tstar + qu[2] * tstar * tstar;
    const double a1 = qa[1] + 2.0 * qa[2] * tstar, a2 = 2.0 * qa[2];
    const double b1 = qb[1] + 2.0 * qb[2] * tstar, b2 = 2.0 * qb[2];
    const double den = std::pow(a1 * a1 + b1 * b1, 1.5);
    vx.curvature = den > 1e-300 ? std::abs(a1 * b2 - b1 * a2) / den : 0.0;
    out.vertices.push_back(vx);
  }
  return out;
}

std::vector<TangencyInfo> tangency_locus(const EtopProblem& pr, double lo, double hi, int n) {
  if (n < 2) fail(errc::input, "locus needs at least two nodes");
  const OrganizeMode mode = pr.scenario().mode;
  if (mode == OrganizeMode::transversal)
    fail(errc::input, "tangency locus needs a tangent organizing mode");
  const bool adjust_b = mode == OrganizeMode::tangent_b;
  const double c_swept = adjust_b ? pr.lambda_a_star() : pr.lambda_b_star();

  TangencyInfo center;
  center.lambda_a = pr.lambda_a_star();
  center.lambda_b = pr.lambda_b_star();
  center.s_minus = pr.center_warm().s_minus_in[0];
  center.s_plus = pr.center_warm().s_plus_in[0];

  std::vector<TangencyInfo> out(n);
  auto solve_at = [&](double swept, const TangencyInfo& init) {
    const double la0 = adjust_b ? swept : init.lambda_a;
    const double lb0 = adjust_b ? init.lambda_b : swept;
    return pr.find_tangency(la0, lb0, adjust_b, init.s_minus, init.s_plus);
  };
  auto node = [&](int i) { return lo + (hi - lo) * i / (n - 1); };
  int split = 0;
  while (split < n && node(split) < c_swept) ++split;
  TangencyInfo chain = center;
  for (int i = split; i < n; ++i) {
    chain = solve_at(node(i), chain);
    out[i] = chain;
  }
  chain = center;
  for (int i = split - 1; i >= 0; --i) {
    chain = solve_at(node(i), chain);
    out[i] = chain;
  }
  return out;
}

std::vector<std::pair<double, double>> cycle_locus(const EtopProblem& pr, double b_lo, double b_hi,
                                                   int n) {
  if (n < 2) fail(errc::input, "locus needs at least two nodes");
  std::vector<std::pair<double, double>> out(n);
  auto node = [&](int i) { return b_lo + (b_hi - b_lo) * i / (n - 1); };
  int split = 0;
  while (split < n && node(split) < pr.lambda_b_star()) ++split;
  double chain = pr.lambda_a_star();
  for (int i = split; i < n; ++i) {
    chain = find_etop_cycle(pr, node(i), chain, chain + 1e-5);
    out[i] = {chain, node(i)};
  }
  chain = pr.lambda_a_star();
  for (int i = split - 1; i >= 0; --i) {
    chain = find_etop_cycle(pr, node(i), chain, chain + 1e-5);
    out[i] = {chain, node(i)};
  }
  return out;
}

ScalingFit fit_scaling(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  if (static_cast<int>(y.size()) != n) fail(errc::input, "mismatched sample lengths");
  if (n < 3) fail(errc::insufficient_data, "scaling fit needs at least three points");
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx < 1e-300) fail(errc::degeneracy, "degenerate abscissa in the scaling fit");
  ScalingFit fit;
  fit.n = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ssr = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    ssr += r * r;
  }
  const double s2 = ssr / (n - 2);
  fit.slope_err = std::sqrt(s2 / sxx);
  fit.intercept_err = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  return fit;
}

std::vector<SweepRow> coupled_sweep(const EtopProblem& pr, double lambda_a, double lambda_b,
                                    const Vec& u, int nu_min, int nu_max,
                                    const CoupleOptions& opt) {
  if (nu_min < 0 || nu_min > nu_max) fail(errc::input, "bad crossing-count range");
  const int np = nu_max / 2 + 1;
  const int nm = (nu_max - nu_max / 2) + 1;
  const WorkingSet ws = pr.working_set(lambda_a, lambda_b, u, np, nm);
  const CoupledProblem cp = pr.coupled(ws);
  std::vector<SweepRow> rows;
  LongOrbitResult prev;
  bool have = false;
  for (int nu = nu_min; nu <= nu_max; ++nu) {
    LongOrbitResult r = couple_long_orbit(cp, nu, opt, have ? &prev : nullptr);
    SweepRow row;
    row.nu = nu;
    row.gap_in = r.gap_l;
    row.gap_out = r.gap_r;
    row.gap_in_inf = ws.left.gap_inf;
    row.gap_out_inf = ws.right.gap_inf;
    const BPerp b = b_perp(r.middle, ws.proj);
    row.bperp_plus = b.plus.norm();
    row.bperp_minus = b.minus.norm();
    const double oz_l = off_z_norm(pr.frame_in(), r.xi_l) / std::max(1.0, r.xi_l.norm());
    const double oz_r = off_z_norm(pr.frame_out(), r.xi_r) / std::max(1.0, r.xi_r.norm());
    row.off_z = std::max(oz_l, oz_r);
    row.c_residual = r.c_residual;
    row.fp_iterations = r.fp_iterations;
    rows.push_back(row);
    prev = std::move(r);
    have = true;
  }
  return rows;
}

std::vector<double> brute_force_homoclinic(const EtopProblem& pr, double a_lo, double a_hi,
                                           double lambda_b, const BruteForceOptions& opt) {
  const VectorFieldModel& m = pr.model();
  const EtopScenario& sc = pr.scenario();
  const CrossSectionFrame& fr = pr.frame_out();
  const Section& so = pr.sigma_out();
  if (fr.dz() != 1 || fr.dwm() < 1) fail(errc::input, "exit frame lacks the jump coordinate");
  const int iwm = 1 + fr.dwp();
  const int iz = iwm + fr.dwm() + fr.du();

  struct Ctx {
    EquilibriumRecord eq;
    PeriodicOrbitRecord po;
    Mat Du;
    Vec q_es;
    Vec p;
  };
  WarmData wd = pr.center_warm();
  int branch_es = 0;
  auto setup = [&](double la) {
    Ctx c;
    c.p = pr.params(la, lambda_b);
    c.eq = find_equilibrium(m, wd.eq_x, c.p);
    const EquilibriumRecord eq_ret = find_equilibrium(m, wd.eq_ret_x, c.p);
    PeriodicOrbitOptions po_opt;
    po_opt.integ = sc.integ;
    c.po = find_periodic_orbit(m, wd.po_point, c.p, wd.po_period, po_opt);
    wd.eq_x = c.eq.x;
    wd.eq_ret_x = eq_ret.x;
    wd.po_point = c.po.point;
    wd.po_period = c.po.period;
    c.Du = invariant_directions(c.eq, true);
    if (c.Du.cols() != 2) fail(errc::input, "shooting needs a one-parameter departure family");
    const Mat Ds = invariant_directions(eq_ret, false);
    auto arrive = [&](int b) -> std::optional<Vec> {
      const Vec seed = eq_ret.x + b * sc.trace_delta * Ds.col(0);
      const Trajectory tr = integrate_survivable(m, seed, c.p, -sc.t_max, sc.integ);
      for (const auto& cr : find_crossings(tr, so)) {
        if ((cr.x - fr.q0).norm() >= sc.capture) continue;
        const double od = orbit_distance(c.po, cr.x);
        if (od < 0.5 * sc.land_out || od > 1.6 * sc.land_out) continue;
        return cr.x;
      }
      return std::nullopt;
    };
    if (branch_es != 0) {
      if (auto x = arrive(branch_es)) {
        c.q_es = *x;
        return c;
      }
    }
    for (int b : {1, -1}) {
      if (auto x = arrive(b)) {
        branch_es = b;
        c.q_es = *x;
        return c;
      }
    }
    fail(errc::no_crossing, "arrival flight never crossed the exit section");
  };

  // offsets of the first exit-window crossing, measured from the arrival
  // point in the frozen exit frame
  auto shot = [&](const Ctx& c, double s) -> Eigen::Vector3d {
    const Vec seed =
        c.eq.x + sc.trace_delta * (std::cos(s) * c.Du.col(0) + std::sin(s) * c.Du.col(1));
    const Trajectory tr = integrate_survivable(m, seed, c.p, opt.t_fly, sc.integ);
    for (const auto& cr : find_crossings(tr, so, 1)) {
      if ((cr.x - c.q_es).norm() > sc.capture) continue;
      const double od = orbit_distance(c.po, cr.x);
      if (od < 0.5 * sc.land_out || od > 1.6 * sc.land_out) continue;
      const Vec dc = fr.coords(fr.q0 + (cr.x - c.q_es));
      return {dc[iwm], dc[iz], (cr.x - c.q_es).norm()};
    }
    fail(errc::no_crossing, "shot missed the exit window");
  };

  double s_warm = pr.center_warm().s_minus_in[0];
  auto s_hat = [&](const Ctx& c) {
    auto f = [&](double s) { return shot(c, s)[0]; };
    // secant from the last closing angle, grid plus bisection as fallback
    bool ok = false;
    double root = s_warm;
    try {
      double x0 = s_warm, x1 = s_warm + 1e-4;
      double f0 = f(x0), f1 = f(x1);
      for (int it = 0; it < 40; ++it) {
        if (std::abs(f1 - f0) < 1e-300) break;
        const double x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        if (std::abs(x2 - s_warm) > opt.s_window) break;
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = f(x1);
        if (std::abs(f1) < 1e-11 || std::abs(x1 - x0) < 1e-13) {
          ok = true;
          root = x1;
          break;
        }
      }
    } catch (const solver_error&) {
    }
    if (!ok) {
      double blo = 0.0, bhi = 0.0, flo = 0.0;
      bool have_prev = false, bracket = false;
      double sp = 0.0, fp = 0.0;
      for (int i = 0; i < opt.s_scan && !bracket; ++i) {
        const double si = s_warm - opt.s_window + 2.0 * opt.s_window * i / (opt.s_scan - 1);
        double fi;
        try {
          fi = f(si);
        } catch (const solver_error&) {
          have_prev = false;
          continue;
        }
        if (have_prev && fp * fi <= 0.0) {
          blo = sp;
          bhi = si;
          flo = fp;
          bracket = true;
        }
        sp = si;
        fp = fi;
        have_prev = true;
      }
      if (!bracket) fail(errc::no_crossing, "no closing angle inside the search window");
      for (int k = 0; k < 80; ++k) {
        const double mid = 0.5 * (blo + bhi);
        double fm;
        try {
          fm = f(mid);
        } catch (const solver_error&) {
          fail(errc::no_crossing, "closing-angle bisection left the exit window");
        }
        if (flo * fm <= 0.0) {
          bhi = mid;
        } else {
          blo = mid;
          flo = fm;
        }
      }
      root = 0.5 * (blo + bhi);
    }
    s_warm = root;
    return root;
  };

  auto g = [&](double la, double* dist) {
    const Ctx c = setup(la);
    const double s = s_hat(c);
    const Eigen::Vector3d sh = shot(c, s);
    if (dist) *dist = sh[2];
    return sh[1];
  };

  std::vector<double> roots;
  double la_prev = 0.0, g_prev = 0.0;
  bool have_prev = false;
  for (int i = 0; i <= opt.grid; ++i) {
    const double la = a_lo + (a_hi - a_lo) * i / opt.grid;
    double gi;
    try {
      gi = g(la, nullptr);
    } catch (const solver_error&) {
      have_prev = false;
      continue;
    }
    if (have_prev && g_prev * gi <= 0.0 && static_cast<int>(roots.size()) < opt.max_roots) {
      double lo = la_prev, hi = la, flo = g_prev;
      for (int k = 0; k < 60 && hi - lo > opt.tol; ++k) {
        const double mid = 0.5 * (lo + hi);
        double fm;
        try {
          fm = g(mid, nullptr);
        } catch (const solver_error&) {
          break;
        }
        if (flo * fm <= 0.0) {
          hi = mid;
        } else {
          lo = mid;
          flo = fm;
        }
      }
      const double root = 0.5 * (lo + hi);
      double dist = 1e300;
      try {
        g(root, &dist);
      } catch (const solver_error&) {
      }
      if (dist <= opt.accept_dist) roots.push_back(root);
    }
    la_prev = la;
    g_prev = gi;
    have_prev = true;
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

}  // namespace linorbits
