#pragma once

#include "linorbits/lincore.hpp"

namespace linorbits {

// Section crossings of the two reference halves near the periodic orbit.
// q_plus[k] follows the incoming reference from its first crossing inside
// the entry tube (k = 0, at time tau_plus[0] past the incoming section);
// q_minus[k] follows the outgoing reference backward from its last tube
// crossing (k = 0, tau_minus[0] < 0 before the outgoing section).
struct DiscreteReference {
  std::vector<Vec> q_plus;
  std::vector<double> tau_plus;
  std::vector<Vec> q_minus;
  std::vector<double> tau_minus;
};

// need_plus / need_minus: number of crossings required beyond the first
// (indices 0..need). Throws insufficient_data when the stored halves do not
// reach deep enough; extend the traces and rebuild in that case.
DiscreteReference discrete_references(const PeriodicOrbitRecord& po, const ReferencePair& left,
                                      const ReferencePair& right, double tube_enter, int need_plus,
                                      int need_minus);

struct DiscreteOptions {
  double tol = 1e-10;
  int max_iter = 30;
  double tube_radius = 0.5;
  IntegratorOptions integ{};
};

// Orbit segment of nu return-map steps near the periodic orbit, written over
// the discrete references: y(k) = ref(k) + w(k) with ref = q_plus[k] for
// k <= nu_plus = floor(nu/2) and ref = q_minus[k - nu] beyond the join.
// Boundary data pins the stable part of w(0) and the unstable part of w(nu)
// to the given targets (in section-basis coordinates).
struct DiscreteSegmentResult {
  std::vector<Vec> y;  // nu + 1 points on the section
  std::vector<Vec> w;  // deviations in section-basis coordinates
  double residual = 0.0;
  int iterations = 0;
};

DiscreteSegmentResult solve_discrete_segment(const VectorFieldModel& m, const Vec& p,
                                             const PeriodicOrbitRecord& po,
                                             const DiscreteReference& disc, int nu,
                                             const Vec& b_plus, const Vec& b_minus,
                                             const BundleProjections& proj,
                                             const DiscreteOptions& opt = {},
                                             const DiscreteSegmentResult* warm = nullptr);

// Boundary misses of a solved discrete segment: the unstable component at
// the entry and the stable component at the exit. These decay like
// mu_u^-nu and mu_s^nu respectively as nu grows.
struct BPerp {
  Vec plus;   // (id - Q+) w(0)
  Vec minus;  // (id - Q-) w(nu) = Q_s w(nu)
};
BPerp b_perp(const DiscreteSegmentResult& seg, const BundleProjections& proj);

// Everything needed to couple one long orbit at fixed parameters. Pointers
// are non-owning; the caller keeps the referees alive.
struct CoupledProblem {
  const VectorFieldModel* model = nullptr;
  Vec p;
  const PeriodicOrbitRecord* po = nullptr;
  const BundleProjections* proj = nullptr;
  const CrossSectionFrame* frame_l = nullptr;
  const CrossSectionFrame* frame_r = nullptr;
  const ReferencePair* left = nullptr;
  const ReferencePair* right = nullptr;
  const DiscreteReference* disc = nullptr;
  Vec u;                       // U coordinates of the left frame (may be empty)
  double omega_e_left = 0.0;   // tau at the E end of the left segment (< 0)
  double omega_e_right = 0.0;  // tau at the E end of the right segment (> 0)
  Mat tan_eu;                  // manifold tangent at the departure seed
  Mat tan_es;                  // manifold tangent at the arrival seed
};

struct CoupleOptions {
  double tol_c = 1e-9;  // coupling residual target
  int max_fp = 200;
  double contraction_cap = 0.9;  // fall back to Newton at this factor
  ShortSegmentOptions seg{};
  DiscreteOptions disc{};
};

struct LongOrbitResult {
  ShortSegmentResult left, right;
  DiscreteSegmentResult middle;
  Vec xi_l, xi_r;
  double gap_l = 0.0, gap_r = 0.0;
  int fp_iterations = 0;
  double contraction = 0.0;
  bool newton_fallback = false;
  double c_residual = 0.0;  // max mismatch of the two hand-offs
  int nu = 0;
};

// Couples the left segment (E -> Sigma_l -> Sigma_gamma), nu return-map
// steps, and the right segment (Sigma_gamma -> Sigma_r -> E). Default is the
// fixed-point iteration on the hand-off coefficients with contraction
// monitoring; a 2x2 finite-difference Newton takes over when the iteration
// contracts too slowly.
LongOrbitResult couple_long_orbit(const CoupledProblem& cp, int nu, const CoupleOptions& opt = {},
                                  const LongOrbitResult* warm = nullptr);

struct HypothesisReport {
  std::string name;
  bool ok = false;
  double value = 0.0;  // diagnostic scalar
  std::string note;
};

// Checks the standing assumptions on the pair (E, P) and, when provided,
// the frames and the approach geometry. Violations are reports, not errors.
std::vector<HypothesisReport> check_hypotheses(const EquilibriumRecord& eq,
                                               const PeriodicOrbitRecord& po,
                                               const CrossSectionFrame* frame_l,
                                               const CrossSectionFrame* frame_r,
                                               const DiscreteReference* disc,
                                               double flip_angle_tol = 1e-3);

}  // namespace linorbits
