#pragma once

#include <functional>
#include <optional>

#include "linorbits/invariants.hpp"

namespace linorbits {

// Coordinate frame on a section Sigma = q0 + Y transverse to the flow at a
// connecting orbit point q0. Y is the section plane through q0 and splits
// into four blocks:
//   Wp: directions of T W^s(gamma+) transverse to the intersection
//   Wm: directions of T W^u(gamma-) transverse to the intersection
//   U:  tangent directions common to both manifolds (besides the flow)
//   Z:  complement of Wp + Wm + U in Y; gap vectors live here
// Tangent spaces are pushed into the plane by projecting along the flow, so
// every block lies inside the plane and points constructed from in-plane
// coordinates stay on the section exactly. Wp and Wm are generally oblique
// to each other. Coordinates are taken in the full oblique basis.
struct CrossSectionFrame {
  Vec q0;
  Vec f0;      // field at q0 (not normalized)
  Vec normal;  // unit section normal
  Mat Wp, Wm, U, Z;
  Mat tangent_unstable;  // original T W^u(gamma-) basis at q0 (contains f0)
  Mat tangent_stable;    // original T W^s(gamma+) basis at q0
  std::vector<double> angles;  // principal angles between the two tangents in Y

  int dim() const { return static_cast<int>(q0.size()); }
  int dwp() const { return static_cast<int>(Wp.cols()); }
  int dwm() const { return static_cast<int>(Wm.cols()); }
  int du() const { return static_cast<int>(U.cols()); }
  int dz() const { return static_cast<int>(Z.cols()); }

  Vec z() const;  // the single Z column; errc::input when dz() != 1

  // Oblique coordinates of x - q0 in the basis [f0hat Wp Wm U Z]:
  // returns (phi, wp..., wm..., u..., z...).
  Vec coords(const Vec& x) const;
  Vec point(double phi, const Vec& wp, const Vec& wm, const Vec& u, const Vec& zc) const;

  Eigen::PartialPivLU<Mat> lu;  // of the full basis matrix, set by build_frame
};

// Splits the two tangent spaces against each other. Principal angles below
// angle_common identify the common block U; angles inside
// [angle_common, angle_ill) are ambiguous and raise ill_conditioned_frame
// with the full angle spectrum attached. plane_normal fixes the section
// plane; when empty the plane orthogonal to f0 is used.
CrossSectionFrame build_frame(const Vec& q0, const Vec& f0, const Mat& tangent_unstable,
                              const Mat& tangent_stable, double angle_common = 1e-6,
                              double angle_ill = 1e-3, const Vec& plane_normal = Vec());

// Half of a connecting orbit, stored as the run from a manifold seed to the
// section plus an optional extension from the seed toward the invariant set.
// tau is orbit time with tau = 0 at the section hit; the seed sits at
// tau_seed = -t_hit (negative side for unstable halves, positive for stable).
struct HalfOrbit {
  Trajectory run;   // from the seed; forward for unstable halves, backward for stable
  Trajectory ext;   // optional, from the seed in the opposite time direction
  double t_hit = 0.0;  // section-hit time inside `run`
  Vec seed;

  Vec at(double tau) const;
  double tau_seed() const { return -t_hit; }
  double tau_lo() const;
  double tau_hi() const;
  // Section crossings expressed in tau, ordered by tau.
  std::vector<std::pair<double, Vec>> crossings(const Section& sec, int direction = 0) const;
};

struct TraceOptions {
  double delta = 1e-4;       // seed offset along the linear bundle
  double t_max = 300.0;      // flight horizon seed -> section
  double capture_radius = 0.3;  // accept crossings this close to near_point
  double extend_time = 0.0;  // continuation beyond the seed
  // Crossings rejected by this predicate are invisible to the trace; used to
  // mask stray intersections when the plane also cuts other flow structures.
  std::function<bool(const Vec&)> crossing_ok;
  IntegratorOptions integ{};
};

// One-parameter family s -> point of (W^u or W^s of an invariant set) on a
// section, near a given point. k = dim of s (dim of the manifold minus one).
struct ManifoldTrace {
  int k = 0;
  std::function<Vec(const Vec& s)> point;
  std::function<HalfOrbit(const Vec& s)> orbit;
};

// Real orthonormal basis of the equilibrium's unstable or stable subspace.
// A complex pair contributes the plane spanned by its real and imaginary
// parts. Columns double as the manifold tangent at nearby seed points.
Mat invariant_directions(const EquilibriumRecord& eq, bool unstable);

// branch selects the bundle side for one-dimensional families (+1/-1).
ManifoldTrace unstable_trace(const VectorFieldModel& m, const EquilibriumRecord& eq, const Vec& p,
                             const Section& sigma, const Vec& near_point, int branch,
                             const TraceOptions& opt);
ManifoldTrace stable_trace(const VectorFieldModel& m, const EquilibriumRecord& eq, const Vec& p,
                           const Section& sigma, const Vec& near_point, int branch,
                           const TraceOptions& opt);
ManifoldTrace unstable_trace(const VectorFieldModel& m, const PeriodicOrbitRecord& po, const Vec& p,
                             const Section& sigma, const Vec& near_point, int branch,
                             const TraceOptions& opt);
ManifoldTrace stable_trace(const VectorFieldModel& m, const PeriodicOrbitRecord& po, const Vec& p,
                           const Section& sigma, const Vec& near_point, int branch,
                           const TraceOptions& opt);

// Reference pair q-(0), q+(0) on Sigma: the W coordinates of the two trace
// points are matched (graph fixed point) and both U coordinates equal u, so
// the difference xi_inf lies in Z.
struct ReferencePair {
  HalfOrbit minus, plus;
  Vec s_minus, s_plus;  // solved trace parameters
  Vec q_minus0, q_plus0;
  Vec xi_inf;
  double gap_inf = 0.0;  // <z, xi_inf> when dim Z == 1
};

ReferencePair reference_segments(const CrossSectionFrame& frame, const ManifoldTrace& tr_minus,
                                 const ManifoldTrace& tr_plus, const Vec& u, const Vec& s_minus0,
                                 const Vec& s_plus0, double tol = 1e-11, int max_iter = 40);

// Projection family P(t) along a half orbit: im P(0) = the given tangent
// space at q(0), ker P(0) = the complementary frame blocks, both transported
// by the transition matrix.
class ProjectionFamily {
 public:
  ProjectionFamily(const VectorFieldModel& m, const Vec& p, const HalfOrbit& half, Mat im0,
                   Mat ker0, double tau_from, double tau_to, const IntegratorOptions& integ = {});
  Mat at(double tau) const;           // n x n projection
  Mat im_basis(double tau) const;     // transported image basis, orthonormalized
  Mat transition(double tau) const;   // Phi(tau, 0) along the half orbit
 private:
  VariationalPath vp_;
  Mat im0_, ker0_;
  double sign_ = 1.0;
};

// Dichotomy projection for the unstable (side = -1) or stable (side = +1)
// half: image = the matching manifold tangent, kernel = remaining blocks.
ProjectionFamily dichotomy_projection(const VectorFieldModel& m, const Vec& p,
                                      const CrossSectionFrame& frame, const HalfOrbit& half,
                                      int side, double tau_extent,
                                      const IntegratorOptions& integ = {});

// Leading-order jump prediction from far-end boundary data a at tau = omega:
// -< z, Phi(0, omega) (id - P(omega)) a >. Valid to o(|a|).
double jump_estimate(const CrossSectionFrame& frame, const ProjectionFamily& fam, double omega,
                     const Vec& a);

// Far-end boundary of one side of the two-segment problem.
struct FarEnd {
  enum class Kind {
    manifold,  // x = ref.at(tau) + a + A c, flight time fixed
    section    // x = pt + S (a + V c), flight time free (landing plane fixed)
  };
  Kind kind = Kind::manifold;
  double tau = 0.0;  // span of this side (sign gives the side)
  Vec a;             // boundary offset, R^n for manifold, S-coords for section
  // manifold kind only: local tangent basis of the manifold at ref.at(tau).
  // Must contain the flow direction (the connection runs inside the
  // manifold), which plays the role of the free phase.
  Mat A;
  // section kind only:
  Vec pt;  // reference point on the landing plane
  Mat S;   // n x (n-1) orthonormal basis of the landing plane
  Mat V;   // free directions within S coords (n-1 x k)
};

struct ShortSegmentOptions {
  double tol = 1e-10;     // on the shooting residual norm
  int max_iter = 25;
  double cond_cap = 1e8;  // per-interval transition conditioning bound
  IntegratorOptions integ{};
};

// Solution of the two-segment boundary value problem: both pieces end on
// Sigma with equal Wp, Wm, U coordinates; the far ends satisfy the given
// boundary descriptions. The jump x-(0) - x+(0) lies in Z by construction.
struct ShortSegmentResult {
  Vec x_sigma_minus, x_sigma_plus;
  Vec xi;           // the jump
  double gap = 0.0; // <z, xi> when dim Z == 1
  Vec wp, wm, z_minus, z_plus;
  Vec c_minus, c_plus;       // far-end free coefficients
  double tau_minus = 0.0, tau_plus = 0.0;  // converged far-end times
  Vec far_minus, far_plus;                 // converged far-end states
  std::vector<Vec> nodes_minus, nodes_plus;  // shooting nodes incl. both ends
  std::vector<double> times_minus, times_plus;
  double residual = 0.0;
  int iterations = 0;
};

ShortSegmentResult solve_short_segment(const VectorFieldModel& m, const Vec& p,
                                       const CrossSectionFrame& frame, const ReferencePair& refs,
                                       const FarEnd& far_minus, const FarEnd& far_plus,
                                       const Vec& u, const ShortSegmentOptions& opt = {},
                                       const ShortSegmentResult* warm = nullptr);

// Oblique off-Z residual of a jump vector: norm of its Wp/Wm/U components.
double off_z_norm(const CrossSectionFrame& frame, const Vec& xi);

}  // namespace linorbits
