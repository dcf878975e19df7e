#pragma once

#include <random>
#include <vector>

#include "tubelab/tube.hpp"

namespace tubelab {

// Flat torus x line model of a tube orbit at cylinder radius R: the orbit of
// a normal direction v0 under the rotation part lives on a product of circles
// S^1_{rho_1} x ... x S^1_{rho_m} (one circle per normal-form plane, plus one
// angle-pi circle lumping the flip space when present), and the axis
// contributes a line with step tau = ell * cosh R per power.  Components of
// v0 in the fixed space do not move and are flagged, not modeled.
struct TorusModel {
    std::vector<double> radii;   // rho_j = sinh R * |component of v0 in plane j|
    std::vector<double> angles;  // rotation angle per circle (pi for the flip circle)
    double axial_step = 0.0;     // tau = ell * cosh R
    bool axial_extra_dim = false;  // v0 may have a fixed-space component
};

TorusModel build_torus_model(const RotationNormalForm& nf, const Eigen::VectorXd& v0,
                             double ell, double R);

// Intrinsic distance moved by the k-th power in the torus x line model:
//   sqrt(sum_j (rho_j * angdist(k * theta_j))^2 + (k * tau)^2).
// Dominates the cylinder-intrinsic and ambient displacements of the same
// orbit, so torus counts never exceed ambient counts.
double torus_step_dist(const TorusModel& tm, long long k);

// #{k : torus_step_dist(k) <= r}, including k = 0, with the same relative
// boundary slack 1e-12 as the ambient count.  Brute force over
// |k| <= r/tau (the axial term alone exceeds r beyond that).  Rejects
// nonpositive r and r/tau > 1e8.
long long torus_orbit_count(const TorusModel& tm, double r);

struct TorusCountBound {
    long long count = 0;
    double bound = 0.0;  // (r / inj)^{floor((n+1)/2)}
    double ratio = 0.0;  // count / bound
};

// Orbit count in the torus model built at x against the power-law bound
//   count <= C * (r / inj(x))^{floor((n+1)/2)}.
// Requires r >= inj(x) (the bound is asserted only in that regime); the sweep
// harness takes sup of ratio to estimate C.
TorusCountBound torus_count_bound_check(const TubeQuotient& tube, const HPoint& x, double r);

// (torus-intrinsic)/(chordal) distance ratio for a pair of torus points with
// angle offsets dphi (one per circle); chordal means the straight-line
// distance in the ambient product of discs.  Componentwise arc/chord, so the
// ratio lies in [1, pi/2]: 1 in the limit of nearby points, pi/2 attained by
// antipodal points on a single circle.  Returns 1 for coinciding points.
double torus_arc_chord_ratio(const TorusModel& tm, const std::vector<double>& dphi);

// Max of torus_arc_chord_ratio over random angle offsets.  Always in
// [1, pi/2] within 1e-9.  Requires some rho_j > 0.
double torus_vs_chordal_check(const TorusModel& tm, int samples, std::mt19937_64& rng);

}  // namespace tubelab
