#pragma once

#include <cstdint>
#include <vector>

#include "tubelab/tube.hpp"
#include "tubelab/warped.hpp"

namespace tubelab {

// Margulis threshold used by the desk experiments.  Configuration input, not
// a certified Margulis constant: any mu > 0 yields a valid model tube.
inline constexpr double kDefaultMargulis = 0.1;

// Constants of the spectral-gap machinery.  lambda0 is exact; beta is the
// midpoint of its admissible window (floor((n+1)/2)/2, sqrt(lambda0)), which
// is nonempty for every n >= 4 because 2 sqrt(lambda0) > floor((n+1)/2).
struct GapConstants {
    int n = 0;
    double lambda0 = 0.0;  // max{n-2, (n-1)^2/4 - 2}
    double beta = 0.0;     // admissible decay rate, 2 beta > floor((n+1)/2)
    double margulis = kDefaultMargulis;
};
GapConstants gap_constants(int n);

// Tensor-product quadrature on a tube segment: trapezoid in r against the
// volume weight sinh^{n-2} cosh sampled per radial node (the constant
// angular factor is dropped everywhere), uniform step in the periodic t
// direction.  weight(i) already contains the trapezoid endpoint halving.
struct QuadratureGrid {
    int n = 0;
    Grid2D grid;
    Eigen::ArrayXd weight;  // nr entries
};
QuadratureGrid make_quadrature(int n, const Grid2D& grid);

// Integral of a sampled integrand against the quadrature.
double integrate(const QuadratureGrid& q, const Field& f);

// Pointwise frame pairing <a, b> = ap bp + (n-2) aq bq + aw bw + 2 ac bc / ch^2.
Field frame_pairing(const WarpedField& a, const WarpedField& b, int n,
                    const Grid2D& grid);

// Rayleigh quotient int |grad u|^2 / int u^2 of a compactly supported,
// not identically zero scalar.  The continuum bound is (n-1)^2/4; the
// discrete floor used by callers is (n-1)^2/4 * (1 - 5 dr).
double scalar_rayleigh(const ScalarField& u, const QuadratureGrid& q);

// Tube tensor gap: lhs = ((n-1)^2/4 - 2) int |h|^2 against
// rhs = int |grad h|^2 - 2 int |h|^2 + 2 int (tr h)^2 = 2 int <L h, h>.
// Callers assert lhs <= rhs (up to tolerance).  h must be compactly
// supported and not identically zero.
struct GapPair {
    double lhs = 0.0;
    double rhs = 0.0;
};
GapPair tensor_gap_check(const WarpedField& h, const QuadratureGrid& q);

// Kato step: lhs = int |grad |h||^2 against rhs = int |grad h|^2.  Nodes
// whose difference stencil touches a vanishing |h| inside the support are
// excluded from the lhs (the kink of |.|) and counted in skipped.
struct KatoPair {
    double lhs = 0.0;
    double rhs = 0.0;
    long skipped = 0;
};
KatoPair kato_check(const WarpedField& h, const QuadratureGrid& q);

// Weighted-L^2 identity 2 int <L(phi h), phi h> = 2 int phi^2 <L h, h>
//  + int |grad phi|^2 |h|^2, both sides by quadrature, plus the pointwise
// divergence identity for V = phi |h|^2 grad phi:
//   div V = |grad phi|^2 |h|^2 + 2 phi <grad_{grad phi} h, h>
//         - phi (grad*grad phi) |h|^2,
// whose integral vanishes.  h and phi h must be compactly supported.
struct IdentityReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double rel_residual = 0.0;     // |lhs - rhs| / max(|lhs|, |rhs|)
    double div_identity_sup = 0.0; // sup of the pointwise identity defect
    double div_integral = 0.0;     // int div V (0 by the divergence theorem)
};
IdentityReport weighted_identity_check(const WarpedField& h, const ScalarField& phi,
                                       const QuadratureGrid& q);

// Quotient distance r_x(y) = min_k d(x, phi^k y) sampled at the grid nodes,
// each node lifted to cylinder coordinates (r_i, reference theta, t_j).  The
// scan over k is truncated by the axial lower bound d >= |t difference|.
// kink marks nodes where the minimizing k differs from a radial or axial
// neighbor's (the cut locus); derivatives of r_x are one-sided there, and
// kink_fraction reports the affected share of nodes.
struct DistanceField {
    Field r;
    Field kink;
    double kink_fraction = 0.0;
};
DistanceField quotient_distance_field(const TubeQuotient& tube, const HPoint& x,
                                      const Grid2D& grid);

// Quintic smoothstep cut-off: 1 for r <= r_quarter, 0 for r >= r_half,
// C^2 across the window.
double smoothstep_cutoff(double r, double r_quarter, double r_half);

// Radial cut-off eta on the model tube: eta = 1 inside the radius where the
// injectivity profile reaches mu/4, eta = 0 beyond the radius where it
// reaches mu/2, smoothstep between.  The radial grid spans [0, R_mu] and is
// refined until the window holds at least eight cells (nr = 0 picks the
// resolution automatically; explicit nr below that is rejected).  The sup
// values are measured from the sampled field by finite differences.
struct CutoffReport {
    Grid2D grid;  // nt = 1, r in [0, boundary radius]
    ScalarField eta;
    double r_quarter = 0.0;
    double r_half = 0.0;
    double sup_eta = 0.0;
    double sup_deta = 0.0;
    double sup_d2eta = 0.0;
};
CutoffReport cutoff_eta(const TubeQuotient& tube, int nr = 0);

// Weighted tube seminorm
//   (int e^{-2 beta r_x} (|h|^2 [+ |grad h|^2 + |grad*grad h|^2]))^{1/2}
// of order 0 or 2; the bracket is included at order 2 only (which requires
// compact support for the connection Laplacian).
double weighted_seminorm(const WarpedField& h, const QuadratureGrid& q,
                         const TubeQuotient& tube, const HPoint& x, double beta,
                         int order);

// Desk hybrid norm: max of the sampled sup norm, the global L^2 (kind 0) or
// H^2 (kind 2) norm, and the weighted pieces
//   e^{(1/2) floor((n+1)/2) depth(x)} * ||eta h||_{x, beta}
// over the basepoint sample, with eta the tube cut-off and beta from
// gap_constants.  Holder pieces of the source definition are omitted (they
// live in harmonic charts on the universal cover).  When the quarter-thin
// part {inj <= mu/4} is nonempty the basepoint sample must be nonempty.
double hybrid_norm_desk(const WarpedField& h, const QuadratureGrid& q,
                        const TubeQuotient& tube, int kind,
                        const std::vector<HPoint>& basepoints);

// Transfer comparison on the lifted ball B(x~, 1/2): stratified Monte Carlo
// samples z of the ball evaluate
//   lhs: the lift u~(z), integrating to int_{B(x~,1/2)} u~;
//   rhs: u(z) * w(z) / m(z), integrating to int_{B(x,1/2)} w u,
// where m(z) = #{k : phi^k z in B(x~,1/2)} is the sheet multiplicity and
// w(z) = orbit_count_ambient(z, 1) the counting weight of the transfer
// bound; m <= w pointwise (triangle inequality), so lhs <= rhs sample by
// sample, with equality when the ball is injective (m = w = 1).  u >= 0 on
// the grid; off-grid values are treated as 0.
struct TransferReport {
    double lhs = 0.0;
    double rhs = 0.0;
    long samples = 0;
    double max_ratio = 0.0;       // max over samples of m/w
    double ball_volume = 0.0;
};
TransferReport transfer_check(const TubeQuotient& tube, const HPoint& x,
                              const ScalarField& u, const QuadratureGrid& q,
                              std::uint64_t seed, long samples);

// Discrete symmetric form of 2L on the diagonal class (p, q, w; c = 0) with
// Dirichlet rows at both radial ends: staggered first differences for the
// derivative terms of |grad h|^2, nodal terms for the algebraic ones, mass
// matrix from |h|^2.  Evaluates the Rayleigh quotient of a given diagonal
// field, and the smallest generalized eigenvalue by inverse iteration
// (aborts after 10^4 steps without convergence).
double diagonal_form_rayleigh(const Grid2D& grid, int n, const WarpedField& h);
struct ConditioningReport {
    double min_eigenvalue = 0.0;
    int iterations = 0;
};
ConditioningReport discrete_L_conditioning(const Grid2D& grid, int n);

}  // namespace tubelab
