#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace tubelab {

// Uniform grid on the Fermi chart [r0, r1] x (circle of length t_len).  The
// radial grid contains both endpoints (dr = (r1 - r0)/(nr - 1)); the axial
// grid is periodic with nt nodes and no duplicated endpoint (dt = t_len/nt).
// nt = 1 models t-independent fields: every t-derivative vanishes exactly.
struct Grid2D {
    double r0 = 0.0;
    double r1 = 0.0;
    double t_len = 0.0;
    int nr = 0;
    int nt = 0;

    double dr() const { return (r1 - r0) / (nr - 1); }
    double dt() const { return t_len / nt; }
    double r(int i) const { return r0 + dr() * i; }
};

Grid2D make_grid(double r0, double r1, int nr, double t_len, int nt);

// Samples over the grid, indexed (radial row, axial column).
using Field = Eigen::ArrayXXd;

Field zero_field(const Grid2D& grid);

// Scalar function u(r, t).
struct ScalarField {
    Field u;
};

// Rotation-invariant symmetric 2-tensor against the hyperbolic warps,
//   h = p dr^2 + q sinh^2(r) ghat + w cosh^2(r) dt^2 + c (dr (x) dt + dt (x) dr),
// with ghat the round metric on S^{n-2}.  All entries are functions of (r, t).
struct WarpedField {
    Field p, q, w, c;
};

WarpedField zero_warped_field(const Grid2D& grid);

// Metric in the same class, g = P dr^2 + Q sinh^2 ghat + W cosh^2 dt^2
// + C (dr (x) dt + dt (x) dr).  Positive definite iff P, Q > 0 and
// P W cosh^2 - C^2 > 0 pointwise.
struct WarpedMetric {
    int n = 0;
    Grid2D grid;
    Field P, Q, W, C;
};

// P = Q = W = 1, C = 0: the reference g = dr^2 + sinh^2 ghat + cosh^2 dt^2.
WarpedMetric hyperbolic_metric(int n, const Grid2D& grid);
// Doubly warped dr^2 + a(r)^2 ghat + b(r)^2 dt^2 from radial profiles
// (requires r0 > 0 so that Q = a^2/sinh^2 is well defined on the grid).
WarpedMetric metric_from_profiles(int n, const Grid2D& grid,
                                  const std::function<double(double)>& a,
                                  const std::function<double(double)>& b);

WarpedMetric add_field(const WarpedMetric& g, const WarpedField& h, double scale = 1.0);
WarpedField metric_diff(const WarpedMetric& g1, const WarpedMetric& g2);

// Finite differences, order 2: central in the radial interior with one-sided
// second-order stencils on the boundary rows; periodic wrap in t (zero when
// nt < 3, i.e. no resolvable t-dependence).
Field ddr(const Field& f, const Grid2D& grid);
Field d2dr(const Field& f, const Grid2D& grid);
Field ddt(const Field& f, const Grid2D& grid);
Field d2dt(const Field& f, const Grid2D& grid);

// True when the values vanish on the two outermost rows at each radial end
// (the discrete meaning of compact support in r; t is periodic).
bool compactly_supported(const Field& f, const Grid2D& grid);
bool compactly_supported(const WarpedField& h, const Grid2D& grid);

// Pointwise contractions against the hyperbolic reference frame
// (e_r, e_i = sinh^{-1} d/dtheta_i, e_t = cosh^{-1} d/dt):
//   tr h = p + (n-2) q + w,
//   |h|^2 = p^2 + (n-2) q^2 + w^2 + 2 c^2/cosh^2.
Field trace(const WarpedField& h, int n);
Field norm_sq(const WarpedField& h, int n, const Grid2D& grid);
double sup_norm(const WarpedField& h);

// |grad h|^2: all first covariant derivatives of the class tensor contracted
// in the hyperbolic frame.  Requires r0 > 0 (the reduction has cosh/sinh
// coefficients).
Field grad_norm_sq(const WarpedField& h, int n, const Grid2D& grid);

// Scalar helpers on the hyperbolic background: |grad u|^2 = u'^2 + u_t^2/cosh^2
// and the Laplace-Beltrami operator
//   lap u = u'' + u_tt/cosh^2 + (sinh/cosh + (n-2) cosh/sinh) u'.
Field scalar_grad_norm_sq(const Field& u, const Grid2D& grid);
Field scalar_laplacian(const Field& u, int n, const Grid2D& grid);

// <grad_{grad phi} h, h> pointwise (frame contraction); used by the weighted
// integral identity.
Field covariant_grad_pairing(const WarpedField& h, const Field& phi, int n,
                             const Grid2D& grid);

// Divergence of the vector field X = vr d/dr + vt d/dt on the hyperbolic
// background: div X = vr' + vt_t + (sinh/cosh + (n-2) cosh/sinh) vr.
Field div_radial_axial(const Field& vr, const Field& vt, int n, const Grid2D& grid);

// Ricci tensor of the doubly warped metric dr^2 + a^2 ghat + b^2 dt^2 via the
// closed product formulas, differencing only the profiles a, b:
//   Ric_rr    = -(n-2) a''/a - b''/b,
//   Ric_ghat  = -[a a'' + (n-3)(a'^2 - 1) + a a' b'/b]      (coefficient of ghat),
//   Ric_tt    = -b [b'' + (n-2) a' b'/a].
// Independent of the class assembly in ricci(); used as its cross-check.
WarpedField warped_ricci(const WarpedMetric& m);

// Weitzenboeck curvature action in an orthonormal frame at a point of H^n,
//   Ric(h)(x,y) = h(Ric x, y) + h(x, Ric y) - 2 tr h(., R(., x) y),
// with R(x,y)z = -(<y,z>x - <x,z>y) and Ric = -(n-1) id.  The curvature route
// contracts the definition literally; the closed route evaluates
// -2n h + 2 tr(h) g.  weitzenboeck_pointwise runs both and demands agreement
// to 1e-12.
Eigen::MatrixXd weitzenboeck_curvature_route(const Eigen::MatrixXd& h, int n);
Eigen::MatrixXd weitzenboeck_closed_route(const Eigen::MatrixXd& h, int n);
Eigen::MatrixXd weitzenboeck_pointwise(const Eigen::MatrixXd& h, int n);

// The same action on a class field: (-2n p + 2 tr, -2n q + 2 tr, -2n w + 2 tr, -2n c).
WarpedField weitzenboeck_class(const WarpedField& h, int n);

// Connection Laplacian grad*grad h on the hyperbolic background.  h must be
// compactly supported (two zero layers at each radial end) and r0 > 0.
WarpedField covariant_laplacian(const WarpedField& h, const WarpedMetric& m_bar);

// Lichnerowicz Laplacian lap_L h = grad*grad h + Ric(h) and the linearized
// Einstein operator L h = 1/2 lap_L h + (n-1) h.  linearized_einstein_dual
// evaluates the constant-curvature reduction 2 L h = grad*grad h - 2h
// + 2 tr(h) g through a separate algebraic path.
WarpedField lichnerowicz(const WarpedField& h, const WarpedMetric& m_bar);
WarpedField linearized_einstein(const WarpedField& h, const WarpedMetric& m_bar);
WarpedField linearized_einstein_dual(const WarpedField& h, const WarpedMetric& m_bar);

// One-form over the grid (radial and axial components; angular ones vanish
// on the class).
struct OneFormField {
    Field r, t;
};

// Bianchi operator beta(h) = div h + 1/2 d tr h of the hyperbolic background.
// Exactly linear; beta(g_bar) = 0 and beta(f g_bar) = (n/2 - 1) df.
OneFormField bianchi(const WarpedMetric& m_bar, const WarpedField& h);

// Ricci tensor of a full class metric.  The sphere factor is eliminated
// analytically (warped-product reduction over the (r,t) base), so finite
// differences touch only the component grids P, Q, W, C; at the hyperbolic
// metric the result is -(n-1) g to machine precision.  Rejects metrics that
// fail pointwise positivity, reporting the first bad node.
WarpedField ricci(const WarpedMetric& g);

// Einstein operator in Bianchi gauge relative to the hyperbolic m_bar:
//   Phi(g) = Ric(g) + (n-1) g + 1/2 Lie_V g,  V = (beta(g - m_bar)) sharp wrt g.
WarpedField einstein_operator(const WarpedMetric& m_bar, const WarpedMetric& g);

// Pullback of the hyperbolic metric by the radial reparametrization
// r -> rho(r), rho(r0) = r0 + delta, rho'(r0) = 1:
//   g = rho'^2 dr^2 + sinh^2(rho) ghat + cosh^2(rho) dt^2,
// with rho integrated (RK4, substeps well below the grid scale) from the
// gauge condition beta(g - g_bar) = 0.  The result is exactly Einstein and
// exactly Bianchi-gauged in the continuum, so it serves as boundary/start
// data whose Newton solution stays Einstein up to discretization error.
WarpedMetric gauged_einstein_data(int n, const Grid2D& grid, double delta);

// Residuals of the detection system Ric(g) = -(n-1) g and beta(g - m_bar) = 0,
// plus the pointwise negativity test Ric(g) < 0 (largest eigenvalue of
// g^{-1} Ric over the grid).  residuals_ok requires both residual sups to be
// at most 10 * phi_tol; a failed negativity test is a warning flag, not an
// error.
struct EinsteinReport {
    double phi_residual_sup = 0.0;
    double ric_residual_sup = 0.0;
    double bianchi_residual_sup = 0.0;
    double negativity_max = 0.0;
    bool negativity_ok = false;
    bool residuals_ok = false;
};
EinsteinReport detect_einstein(const WarpedMetric& g, const WarpedMetric& m_bar,
                               double phi_tol);

struct NewtonOptions {
    double tol = 1e-10;
    int max_iter = 25;
    int max_backtrack = 20;
    double cond_limit = 1e12;
};

struct NewtonHistoryRow {
    int iter = 0;
    double residual = 0.0;
    double step_norm = 0.0;
    double damping = 1.0;
};

struct NewtonResult {
    WarpedMetric g;
    std::vector<NewtonHistoryRow> history;
    bool converged = false;
    double final_residual = 0.0;
    double condition_estimate = 0.0;
};

// Damped Newton for Phi(g) = 0 on the class, unknowns at interior radial rows,
// Dirichlet rows copied from g_dirichlet.  The Jacobian is assembled by
// stride-5 coloring (the Phi stencil reaches at most 2 rows) and factored
// with SparseLU; a Hager 1-norm estimate guards the condition limit.
// Backtracking halves the step until the sup residual decreases.
NewtonResult newton_solve(const WarpedMetric& m_bar, const WarpedMetric& g_start,
                          const WarpedMetric& g_dirichlet,
                          const NewtonOptions& opts = NewtonOptions());

}  // namespace tubelab
