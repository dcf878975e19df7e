#pragma once

#include <Eigen/Dense>

namespace tubelab {

// Point on the upper sheet {<x,x> = -1, x0 >= 1} of the unit hyperboloid in
// Minkowski space R^{1,n}, <x,y> = -x0*y0 + sum_{i>=1} xi*yi.  The distinguished
// axis is the geodesic through (1,0,...,0) in the (x0,x1)-plane; all cylinder
// coordinates are taken around it.  Chart identifications along the axis agree
// with parallel transport of the normal frame, so the rotation part of a tube
// isometry acts on cylinder coordinates exactly as a linear map on theta.
struct HPoint {
    Eigen::VectorXd coords;  // size n+1
    int dim() const { return static_cast<int>(coords.size()) - 1; }
};

// Cylinder coordinates (R, theta, t): R = distance to the axis, theta a unit
// vector in R^{n-1} (the normal direction), t the axis parameter.  theta_valid
// is false for points on the axis (R below 1e-12), where theta is meaningless.
struct CylinderCoords {
    double R = 0.0;
    Eigen::VectorXd theta;   // size n-1, unit length when theta_valid
    double t = 0.0;
    bool theta_valid = true;
};

// Loxodromic isometry of H^n preserving the axis: translation by ell > 0 along
// the axis composed with a rotation of the normal directions.  In cylinder
// coordinates: (R, theta, t) -> (R, rot*theta, t + ell).
class TubeIsometry {
  public:
    // rot must be special orthogonal of size (n-1)x(n-1) within 1e-10; inputs
    // with orthogonality drift in (1e-12, 1e-10] are re-orthonormalized by the
    // polar decomposition.  ell must be positive.
    TubeIsometry(int n, double ell, const Eigen::MatrixXd& rot);

    int n() const { return n_; }
    double ell() const { return ell_; }
    const Eigen::MatrixXd& rot() const { return rot_; }

    // rot^k for arbitrary integer k (binary powering).
    Eigen::MatrixXd rot_power(long long k) const;

  private:
    int n_;
    double ell_;
    Eigen::MatrixXd rot_;
};

// Minkowski pairing of two hyperboloid points (dimensions must agree).
double mink_inner(const HPoint& x, const HPoint& y);

// Geodesic distance acosh(-<x,y>), evaluated through the chordal identity
// -<x,y> = 1 + <x-y, x-y>/2: the difference form avoids the cancellation
// that acosh amplifies near 1, and is exactly 0 when x = y.
double dist(const HPoint& x, const HPoint& y);

// Validity check: on-sheet within tol and x0 >= 1.
bool on_hyperboloid(const HPoint& x, double tol = 1e-9);

// Point of the axis at parameter t: (cosh t, sinh t, 0, ..., 0).
HPoint axis_point(int n, double t);

// (R, theta, t) -> (cosh R cosh t, cosh R sinh t, sinh R * theta).
HPoint cylinder_to_point(const CylinderCoords& c);

// Inverse chart.  Points on the axis (distance below 1e-12) return R = 0 and
// theta_valid = false.
CylinderCoords point_to_cylinder(const HPoint& x);

// k-th power of the isometry applied to x.
HPoint apply_isometry(const TubeIsometry& phi, long long k, const HPoint& x);

// Intrinsic distance on the equidistant cylinder Z(R) = S^{n-2}_{sinh R} x R
// with axial metric factor cosh R:
//   sqrt((sinh R * angle(theta1, theta2))^2 + (cosh R * (t1 - t2))^2).
// Both coordinates must lie on the same cylinder (c1.R = c2.R = R within
// 1e-9) and carry valid theta of equal dimension.  Dominates the ambient
// distance between the corresponding points of H^n.
double cylinder_intrinsic_dist(double R, const CylinderCoords& c1, const CylinderCoords& c2);

struct RadialComparison {
    double d_low;   // intrinsic distance at radius R_prime
    double d_high;  // intrinsic distance at radius R
};

// Radial projection comparison between Z(R_prime) and Z(R), 2 <= R_prime <= R.
// The projection fixes (theta, t); the pair (c1, c2) is evaluated on both
// cylinders.  Guarantees d_low <= d_high <= 1.02 * exp(R - R_prime) * d_low:
// the angular scale factor sinh R / sinh R_prime is at most
// exp(R - R_prime) / (1 - exp(-4)) ~ 1.0187 * exp(R - R_prime) for
// R_prime >= 2 and the axial factor cosh R / cosh R_prime is at most
// exp(R - R_prime); both are >= 1.  R_prime < 2 is rejected.
RadialComparison radial_comparison(double R_prime, double R, const CylinderCoords& c1,
                                   const CylinderCoords& c2);

// Lipschitz constant C0 in the radial comparison bound.
inline constexpr double kRadialComparisonC0 = 1.02;

// floor((n+1)/2): the counting exponent appearing in the orbit bounds.
inline int half_dim_exponent(int n) { return (n + 1) / 2; }

}  // namespace tubelab
