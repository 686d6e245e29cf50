#pragma once

#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "linorbits/coupling.hpp"

namespace linorbits {

// How the organizing connection on the entry section is arranged at setup.
enum class OrganizeMode {
  transversal,  // entry traces cross; organizing parameters stay at p_star
  tangent_a,    // entry traces made tangent by adjusting lambda_a
  tangent_b     // same, adjusting lambda_b
};

// Frozen description of one cycle study: the model, the organizing parameter
// point with its two unfolding directions, and the bootstrap data needed to
// locate the invariant sets and place the sections. Parameter values are
// always p_star + lambda_a dir_a + lambda_b dir_b.
struct EtopScenario {
  std::string model;
  Vec p_star;
  Vec dir_a, dir_b;
  OrganizeMode mode = OrganizeMode::transversal;
  double tangency_guess = 0.0;  // start value of the adjusted parameter
  int tangency_branch = 1;      // 1 = closest contact of the entry traces, 2 = next

  Vec eq_guess;
  Vec return_shift;  // added to the departure equilibrium for the arrival one
  Vec po_guess;
  double period_guess = 0.0;

  // alpha0 pins the departure-seed angle used to anchor the entry section;
  // NaN scans the whole seed circle instead.
  double alpha0 = std::numeric_limits<double>::quiet_NaN();
  double land_in = 0.35;   // orbit distance at which the entry section is anchored
  double land_out = 0.35;  // same for the exit section
  double trace_delta = 1e-4;
  double t_max = 400.0;
  double capture = 0.3;     // crossing acceptance radius around the frame points
  double tube_enter = 1e-2;
  double extend_in = 120.0;   // trace extension past the seed, entry side
  double extend_out = 120.0;  // exit side
  int scan = 33;              // grid resolution of the bootstrap scans
  IntegratorOptions integ{};
};

EtopScenario designed_scenario(OrganizeMode mode);
EtopScenario inj_scenario(int tangency_branch = 1);
// "designed", "designed-fold", "inj", "inj-second"
EtopScenario scenario_by_name(const std::string& name);
std::vector<std::string> scenario_names();

// Warm-start payload carried between parameter values. Small; safe to store.
struct WarmData {
  Vec eq_x, eq_ret_x;
  Vec po_point;
  double po_period = 0.0;
  Vec s_minus_in, s_plus_in;    // entry trace parameters
  Vec s_minus_out, s_plus_out;  // exit trace parameters
};

// Parameter-dependent state rebuilt per solve: invariant sets, reference
// pairs over the frozen frames, and the crossing ladder near the orbit.
// Self-contained; owns every piece the coupled solver points into.
struct WorkingSet {
  Vec p;
  double lambda_a = 0.0, lambda_b = 0.0;
  Vec u;
  EquilibriumRecord eq, eq_ret;
  PeriodicOrbitRecord po;
  BundleProjections proj;
  ReferencePair left, right;
  DiscreteReference disc;
  double omega_e_left = 0.0, omega_e_right = 0.0;
};

WarmData warm_data(const WorkingSet& ws);

struct TangencyInfo {
  double lambda_a = 0.0, lambda_b = 0.0;
  double s_minus = 0.0, s_plus = 0.0;  // entry trace parameters at contact
  Vec q0;                              // contact point
  double residual = 0.0;
};

// One organized cycle study. Construction finds the invariant sets, anchors
// the two sections on a connecting flight, organizes the entry configuration
// per the scenario mode, and builds both frames. Sections and frames stay
// frozen afterwards; everything parameter-dependent lives in working sets.
class EtopProblem {
 public:
  explicit EtopProblem(const EtopScenario& sc);

  const EtopScenario& scenario() const { return sc_; }
  const VectorFieldModel& model() const { return *model_; }
  Vec params(double lambda_a, double lambda_b) const;

  const Section& sigma_in() const { return sigma_in_; }
  const Section& sigma_out() const { return sigma_out_; }
  const CrossSectionFrame& frame_in() const { return frame_in_; }
  const CrossSectionFrame& frame_out() const { return frame_out_; }

  // Organizing corrections found at setup (nonzero only in tangent modes).
  double lambda_a_star() const { return la_star_; }
  double lambda_b_star() const { return lb_star_; }
  const WorkingSet& center() const { return center_; }
  const WarmData& center_warm() const { return center_warm_; }

  WorkingSet working_set(double lambda_a, double lambda_b, const Vec& u, int need_plus,
                         int need_minus, const WarmData* warm = nullptr) const;

  // Non-owning view over a working set for the long-orbit solver.
  CoupledProblem coupled(const WorkingSet& ws) const;

  // <z_out, xi_inf> of the exit reference pair alone; its zero locus in
  // lambda is where the exit connection exists. Cheap: no entry side, no
  // coupling. warm_out, when given, receives updated guesses.
  double exit_mismatch(double lambda_a, double lambda_b, const WarmData* warm = nullptr,
                       WarmData* warm_out = nullptr) const;

  // Contact of the two entry traces: Newton on (s_minus, s_plus, lambda)
  // driving the in-plane point difference and the tangent cross product to
  // zero. adjust_b selects which parameter moves.
  TangencyInfo find_tangency(double lambda_a0, double lambda_b0, bool adjust_b, double s_minus0,
                             double s_plus0) const;

 private:
  struct EntryCurves;
  EntryCurves entry_curves(double lambda_a, double lambda_b, const Vec& eq_guess,
                           const Vec& po_guess, double period_guess) const;
  void place_sections(const EquilibriumRecord& eq, const EquilibriumRecord& eq_ret,
                      const PeriodicOrbitRecord& po, const Vec& p0);
  void organize();

  EtopScenario sc_;
  std::shared_ptr<const VectorFieldModel> model_;
  Section sigma_in_, sigma_out_;
  CrossSectionFrame frame_in_, frame_out_;
  double la_star_ = 0.0, lb_star_ = 0.0;
  double alpha_anchor_ = 0.0;  // departure angle of the anchoring flight
  int branch_ps_ = 1, branch_pu_ = 1, branch_es_ = 1;
  WorkingSet center_;
  WarmData center_warm_;
};

// Standing assumptions checked on the organized center, plus the parameter
// response of the exit gap. Violations are reports, not errors.
std::vector<HypothesisReport> problem_hypotheses(const EtopProblem& pr);

// Secant root of exit_mismatch in lambda_a at fixed lambda_b.
double find_etop_cycle(const EtopProblem& pr, double lambda_b, double a0, double a1,
                       double tol = 1e-12, int max_iter = 60);

struct HomoclinicOptions {
  double tol = 1e-9;       // on the Newton step norm
  double gap_tol = 5e-10;  // alternative target on the residual norm
  int max_iter = 25;
  double fd_lambda = 1e-6;
  double fd_u = 1e-5;
  int need_margin = 1;  // extra crossing-ladder depth
  CoupleOptions couple{};
};

struct HomoclinicPoint {
  int nu = 0;
  double lambda_a = 0.0, lambda_b = 0.0;
  Vec u;
  double residual = 0.0;
  int iterations = 0;
  WarmData warm;
  LongOrbitResult orbit;
};

// Connection-closing solve at fixed nu: Newton in (lambda, u) on the active
// gap components, lambda being lambda_a unless vary_b. The system must be
// square: active gaps = 1 + dim U of the entry frame.
HomoclinicPoint solve_homoclinic(const EtopProblem& pr, int nu, double lambda_a, double lambda_b,
                                 const Vec& u0, bool vary_b = false,
                                 const HomoclinicOptions& opt = {},
                                 const HomoclinicPoint* warm = nullptr);

// Warm-chained ladder over nu with geometric guess extrapolation.
std::vector<HomoclinicPoint> homoclinic_sequence(const EtopProblem& pr, int nu_min, int nu_max,
                                                 double lambda_a0, double lambda_b0, const Vec& u0,
                                                 bool vary_b = false,
                                                 const HomoclinicOptions& opt = {});

// Turning point of the fixed-nu solution branch: gaps plus d(entry gap)/du
// all zero, Newton in (lambda_a, lambda_b, u). Needs the tangent entry frame.
struct VertexPoint {
  int nu = 0;
  double lambda_a = 0.0, lambda_b = 0.0, u = 0.0;
  double residual = 0.0;
  WarmData warm;
};
VertexPoint solve_vertex(const EtopProblem& pr, int nu, double lambda_a0, double lambda_b0,
                         double u0, const HomoclinicOptions& opt = {},
                         const VertexPoint* warm = nullptr);

struct CurvePoint {
  double s = 0.0;  // accumulated arclength
  double lambda_a = 0.0, lambda_b = 0.0, u = 0.0;
  double residual = 0.0;
};

struct CurveVertex {
  int index = 0;  // nearest curve point
  double s = 0.0, lambda_a = 0.0, lambda_b = 0.0, u = 0.0;
  double curvature = 0.0;  // of the parameter-plane track
};

struct HomoclinicCurve {
  std::vector<CurvePoint> points;
  std::vector<CurveVertex> vertices;  // turning points of the vertex direction
};

struct CurveOptions {
  double h0 = 2e-3, h_min = 1e-9, h_max = 0.03;
  int max_points = 800;
  int max_corrector = 12;
  double a_lo = -1e300, a_hi = 1e300;  // stop window
  double b_lo = -1e300, b_hi = 1e300;
  // Vertices are extrema of vertex_dir_a*lambda_a + vertex_dir_b*lambda_b
  // along the curve.
  double vertex_dir_a = 0.0, vertex_dir_b = 1.0;
  HomoclinicOptions solve{};
};

// Pseudo-arclength continuation of the two gap equations in
// (lambda_a, lambda_b, u) at fixed nu, run both ways from the start point
// and joined. Needs the tangent entry frame (dim U = 1, both gaps active).
HomoclinicCurve continue_homoclinic(const EtopProblem& pr, int nu, const HomoclinicPoint& start,
                                    const CurveOptions& opt = {});

// Contact locus of the entry traces over a lambda_b range (lambda_a solved
// per node in tangent_a mode; roles swap in tangent_b mode). Warm-chained
// outward from the organizing center.
std::vector<TangencyInfo> tangency_locus(const EtopProblem& pr, double lo, double hi, int n);

// Exit-connection existence locus: (lambda_a root, lambda_b) per node.
std::vector<std::pair<double, double>> cycle_locus(const EtopProblem& pr, double b_lo, double b_hi,
                                                   int n);

struct ScalingFit {
  double slope = 0.0, intercept = 0.0;
  double slope_err = 0.0, intercept_err = 0.0;  // standard errors
  int n = 0;
};

// Least squares y ~ intercept + slope x. Throws insufficient_data below
// three points (no residual degree of freedom).
ScalingFit fit_scaling(const std::vector<double>& x, const std::vector<double>& y);

struct SweepRow {
  int nu = 0;
  double gap_in = 0.0, gap_out = 0.0;
  double gap_in_inf = 0.0, gap_out_inf = 0.0;  // reference-pair limits
  double bperp_plus = 0.0, bperp_minus = 0.0;  // boundary-miss norms
  double off_z = 0.0;  // worst relative off-Z residual of the two jumps
  double c_residual = 0.0;
  int fp_iterations = 0;
};

// Coupled solves at fixed parameters over a nu ladder, warm-chained.
std::vector<SweepRow> coupled_sweep(const EtopProblem& pr, double lambda_a, double lambda_b,
                                    const Vec& u, int nu_min, int nu_max,
                                    const CoupleOptions& opt = {});

struct BruteForceOptions {
  int grid = 200;             // lambda grid of the scan
  double tol = 1e-12;         // bisection width on lambda
  double accept_dist = 1e-3;  // landing must come this close to the arrival point
  double s_window = 0.6;      // departure-parameter search halfwidth
  int s_scan = 81;
  int max_roots = 8;
  double t_fly = 200.0;  // shot horizon
};

// Direct-shooting oracle: lambda_a values in [a_lo, a_hi] at which an orbit
// fired inside the departure manifold lands on the arrival manifold, found
// by a nested scan (departure parameter inside, lambda outside) and
// bisection. Shares only the sections and frames with the solver; no
// segment machinery involved.
std::vector<double> brute_force_homoclinic(const EtopProblem& pr, double a_lo, double a_hi,
                                           double lambda_b, const BruteForceOptions& opt = {});

}  // namespace linorbits
