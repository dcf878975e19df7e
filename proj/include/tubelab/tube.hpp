#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "tubelab/hyperbolic.hpp"
#include "tubelab/rotation.hpp"

namespace tubelab {

// Quotient tube H^n / <phi> for a loxodromic phi, together with a Margulis
// threshold mu.  The displacement of phi^k at a point with cylinder data
// (R, theta, t) has the closed form
//   d(phi^k x, x) = acosh(cosh^2 R cosh(k ell) - sinh^2 R <theta, rot^k theta>),
// and <theta, rot^k theta> = sum_j wj cos(k aj) + w_fix + (-1)^k w_flip where
// wj, w_fix, w_flip are the squared components of theta in the normal-form
// planes / fixed space / flip space.  All scans over k are truncated by the
// lower bound d(phi^k x, x) >= |k| ell (nearest-point projection to the axis
// is 1-Lipschitz), so once a candidate minimum m is known only |k| <= m/ell
// can improve it.
//
// The radial profile functions (margulis_radius, depth) use the
// worst-direction injectivity radius
//   inj_min(R) = min_theta inj(R, theta)
//              = 1/2 min_k acosh(cosh^2 R cosh(k ell) - sinh^2 R c*_k),
// c*_k = max over eigenvalue classes of <theta, rot^k theta>.  inj_min is
// nondecreasing in R, the thin part {inj <= mu} is contained in
// {R <= margulis_radius}, and equality holds along worst-direction rays
// (worst_direction), where pointwise inj coincides with the profile.  For
// rotation-free tubes the profile is theta-independent and matches the pure
// translation closed form.
class TubeQuotient {
  public:
    TubeQuotient(const TubeIsometry& phi, double mu);

    const TubeIsometry& phi() const { return phi_; }
    const RotationNormalForm& normal_form() const { return nf_; }
    int n() const { return phi_.n(); }
    double ell() const { return phi_.ell(); }
    double mu() const { return mu_; }

    // True when ell/2 < mu, i.e. the thin part is nonempty.
    bool thin_nonempty() const { return thin_nonempty_; }
    // Radius of the model thin-part boundary (0 for empty thin part).
    double boundary_radius() const { return boundary_radius_; }

    // Squared components of theta in (planes..., fixed, flip); used by the
    // displacement closed form.
    struct ThetaWeights {
        std::vector<double> plane;  // one entry per normal-form angle
        double fixed = 0.0;
        double flip = 0.0;
    };
    ThetaWeights decompose_theta(const Eigen::VectorXd& theta) const;

    // <theta, rot^k theta> from precomputed weights.
    double theta_pairing(const ThetaWeights& w, long long k) const;
    // max_theta <theta, rot^k theta> (largest eigenvalue class).
    double worst_pairing(long long k) const;

    // Closed-form displacement of phi^k at cylinder radius R with pairing c.
    double displacement_closed(long long k, double R, double c) const;

    // Worst-direction injectivity radius profile at radius R (see above).
    double inj_radial_profile(double R) const;

    // Unit normal direction attaining the profile minimum at radius R.
    Eigen::VectorXd worst_direction(double R) const;

  private:
    TubeIsometry phi_;
    double mu_;
    RotationNormalForm nf_;
    bool thin_nonempty_ = false;
    double boundary_radius_ = 0.0;

    friend double margulis_radius(const TubeQuotient&);
};

// d(phi^k x, x): displacement of the k-th power at x (k may be any integer;
// displacement is symmetric in k <-> -k).
double displacement(const TubeQuotient& tube, long long k, const HPoint& x);

// Pointwise injectivity radius in the quotient: 1/2 min_{k != 0} d(phi^k x, x),
// computed by the truncated scan.  Rejects tubes with ell < 1e-9.
double injectivity_radius(const TubeQuotient& tube, const HPoint& x);

// Radius R_mu with inj_radial_profile(R_mu) = mu, found by bisection to 1e-10
// (valid by radial monotonicity).  Throws empty_thin_part if ell/2 >= mu.
class empty_thin_part : public std::runtime_error {
  public:
    empty_thin_part() : std::runtime_error("margulis_radius: thin part is empty (ell/2 >= mu)") {}
};
double margulis_radius(const TubeQuotient& tube);

// max(0, boundary_radius - R(x)): radial distance to the model thick boundary.
double depth(const TubeQuotient& tube, const HPoint& x);

// #{k : d(phi^k x, x) <= r}, including k = 0.  Displacements are compared
// against r with relative slack 1e-12 so that exact boundary orbits count.
// Rejects r/ell > 1e8 (truncation too large) and nonpositive r.
long long orbit_count_ambient(const TubeQuotient& tube, const HPoint& x, double r);

// One row of the counting experiments.
struct OrbitCountRecord {
    int n = 0;
    double ell = 0.0;
    std::vector<double> angles;  // normal-form angles, flips reported as pi
    double R = 0.0;              // cylinder radius of the basepoint
    double r = 0.0;              // counting radius
    long long count = 0;
    double inj = 0.0;
    double depth = 0.0;
    double bound_value = 0.0;
    double observed_ratio = 0.0;
};

// Unit-radius orbit count at x against the thick-distance bound
//   count <= C * exp(floor((n+1)/2) * depth(x));
// bound_value is the exponential factor and observed_ratio = count/bound_value,
// so sup over a family of the ratios estimates C.
OrbitCountRecord preimage_bound_check(const TubeQuotient& tube, const HPoint& x);

struct RezLengthBound {
    double inv_ell;
    double bound;  // exp(floor((n+1)/2) * boundary_radius)
};

// Short-geodesic bound 1/ell <= C * exp(floor((n+1)/2) * R_mu); returns
// nullopt when the thin part is empty (bound is vacuous there).
std::optional<RezLengthBound> rez_length_bound_check(const TubeQuotient& tube);

}  // namespace tubelab
