#include "tubelab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace tubelab {

namespace {

void check_dim(int n) {
    if (n < 4) throw std::invalid_argument("spectral: dimension must be at least 4");
}

void check_match(const QuadratureGrid& q, const Field& f) {
    if (f.rows() != q.grid.nr || f.cols() != q.grid.nt)
        throw std::invalid_argument("spectral: field shape does not match the grid");
}

// f.row(i) scaled by v(i) for all i.
Field rowmul(const Eigen::ArrayXd& v, const Field& f) {
    return f.colwise() * v;
}

Eigen::ArrayXd cosh_sq(const Grid2D& g) {
    Eigen::ArrayXd c(g.nr);
    for (int i = 0; i < g.nr; ++i) {
        const double ch = std::cosh(g.r(i));
        c(i) = ch * ch;
    }
    return c;
}

double mink_raw(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return -a(0) * b(0) + a.tail(a.size() - 1).dot(b.tail(b.size() - 1));
}

}  // namespace

GapConstants gap_constants(int n) {
    check_dim(n);
    GapConstants g;
    g.n = n;
    const double quarter = 0.25 * (n - 1.0) * (n - 1.0) - 2.0;
    g.lambda0 = std::max(double(n - 2), quarter);
    const double lo = 0.5 * half_dim_exponent(n);
    const double hi = std::sqrt(g.lambda0);
    // 2 sqrt(lambda0) > floor((n+1)/2) for every n >= 4; guard it anyway so a
    // bad edit cannot silently produce an inadmissible beta.
    if (!(hi > lo)) throw std::logic_error("gap_constants: empty admissible window for beta");
    g.beta = 0.5 * (lo + hi);
    g.margulis = kDefaultMargulis;
    return g;
}

QuadratureGrid make_quadrature(int n, const Grid2D& grid) {
    check_dim(n);
    if (grid.nr < 2 || grid.nt < 1 || !(grid.r1 > grid.r0) || grid.r0 < 0.0 ||
        !(grid.t_len > 0.0))
        throw std::invalid_argument("make_quadrature: invalid grid");
    QuadratureGrid q;
    q.n = n;
    q.grid = grid;
    q.weight.resize(grid.nr);
    for (int i = 0; i < grid.nr; ++i) {
        const double r = grid.r(i);
        const double trap = (i == 0 || i == grid.nr - 1) ? 0.5 : 1.0;
        q.weight(i) = trap * std::pow(std::sinh(r), n - 2) * std::cosh(r);
    }
    return q;
}

double integrate(const QuadratureGrid& q, const Field& f) {
    check_match(q, f);
    double s = 0.0;
    for (int i = 0; i < q.grid.nr; ++i) s += q.weight(i) * f.row(i).sum();
    return s * q.grid.dr() * q.grid.dt();
}

Field frame_pairing(const WarpedField& a, const WarpedField& b, int n, const Grid2D& grid) {
    check_dim(n);
    Field out = a.p * b.p + double(n - 2) * a.q * b.q + a.w * b.w;
    out += rowmul(cosh_sq(grid).inverse(), 2.0 * a.c * b.c);
    return out;
}

double scalar_rayleigh(const ScalarField& u, const QuadratureGrid& q) {
    check_match(q, u.u);
    if (!compactly_supported(u.u, q.grid))
        throw std::invalid_argument("scalar_rayleigh: u must be compactly supported");
    const double den = integrate(q, u.u * u.u);
    if (!(den > 0.0)) throw std::invalid_argument("scalar_rayleigh: u vanishes identically");
    return integrate(q, scalar_grad_norm_sq(u.u, q.grid)) / den;
}

GapPair tensor_gap_check(const WarpedField& h, const QuadratureGrid& q) {
    check_match(q, h.p);
    if (!compactly_supported(h, q.grid))
        throw std::invalid_argument("tensor_gap_check: h must be compactly supported");
    const double mass = integrate(q, norm_sq(h, q.n, q.grid));
    if (!(mass > 0.0)) throw std::invalid_argument("tensor_gap_check: h vanishes identically");
    const double lambda_tube = 0.25 * (q.n - 1.0) * (q.n - 1.0) - 2.0;
    const Field tr = trace(h, q.n);
    GapPair out;
    out.lhs = lambda_tube * mass;
    out.rhs = integrate(q, grad_norm_sq(h, q.n, q.grid)) - 2.0 * mass +
              2.0 * integrate(q, tr * tr);
    return out;
}

KatoPair kato_check(const WarpedField& h, const QuadratureGrid& q) {
    check_match(q, h.p);
    if (!compactly_supported(h, q.grid))
        throw std::invalid_argument("kato_check: h must be compactly supported");
    const Grid2D& g = q.grid;
    const Field a = norm_sq(h, q.n, g).sqrt();
    const double amax = a.maxCoeff();
    if (!(amax > 0.0)) throw std::invalid_argument("kato_check: h vanishes identically");

    // |h| may vanish on open subsets strictly inside the support, where the
    // absolute value has a kink; detect such interior zeros per t-column
    // (radial span of the nonzero set) and drop every node whose stencil
    // touches one.
    const double eps = 1e-12 * amax;
    Field interior_zero = zero_field(g);
    for (int j = 0; j < g.nt; ++j) {
        int lo = g.nr, hi = -1;
        for (int i = 0; i < g.nr; ++i)
            if (a(i, j) > eps) {
                lo = std::min(lo, i);
                hi = std::max(hi, i);
            }
        for (int i = lo + 1; i < hi; ++i)
            if (a(i, j) <= eps) interior_zero(i, j) = 1.0;
    }
    Field lhs_density = scalar_grad_norm_sq(a, g);
    long skipped = 0;
    if (interior_zero.maxCoeff() > 0.0) {
        for (int i = 0; i < g.nr; ++i)
            for (int j = 0; j < g.nt; ++j) {
                bool touches = interior_zero(i, j) > 0.0;
                for (int di = -1; di <= 1 && !touches; di += 2) {
                    const int ii = i + di;
                    if (ii >= 0 && ii < g.nr && interior_zero(ii, j) > 0.0) touches = true;
                }
                if (g.nt >= 3)
                    for (int dj = -1; dj <= 1 && !touches; dj += 2) {
                        const int jj = (j + dj + g.nt) % g.nt;
                        if (interior_zero(i, jj) > 0.0) touches = true;
                    }
                if (touches) {
                    lhs_density(i, j) = 0.0;
                    ++skipped;
                }
            }
    }
    KatoPair out;
    out.lhs = integrate(q, lhs_density);
    out.rhs = integrate(q, grad_norm_sq(h, q.n, g));
    out.skipped = skipped;
    return out;
}

IdentityReport weighted_identity_check(const WarpedField& h, const ScalarField& phi,
                                       const QuadratureGrid& q) {
    check_match(q, h.p);
    check_match(q, phi.u);
    const Grid2D& g = q.grid;
    const int n = q.n;
    WarpedField ph{phi.u * h.p, phi.u * h.q, phi.u * h.w, phi.u * h.c};
    if (!compactly_supported(h, g) || !compactly_supported(ph, g))
        throw std::invalid_argument(
            "weighted_identity_check: h and phi*h must be compactly supported");
    const WarpedMetric bar = hyperbolic_metric(n, g);

    const WarpedField Lph = linearized_einstein(ph, bar);
    const WarpedField Lh = linearized_einstein(h, bar);
    const Field gp2 = scalar_grad_norm_sq(phi.u, g);
    const Field nh = norm_sq(h, n, g);

    IdentityReport rep;
    rep.lhs = 2.0 * integrate(q, frame_pairing(Lph, ph, n, g));
    rep.rhs = 2.0 * integrate(q, phi.u * phi.u * frame_pairing(Lh, h, n, g)) +
              integrate(q, gp2 * nh);
    const double scale = std::max(std::abs(rep.lhs), std::abs(rep.rhs));
    rep.rel_residual = scale > 0.0 ? std::abs(rep.lhs - rep.rhs) / scale : 0.0;

    // Pointwise divergence identity for V = phi |h|^2 grad phi.  grad phi has
    // frame components (phi', phi_t / cosh); as a coordinate vector field the
    // axial part carries another 1/cosh.
    const Eigen::ArrayXd ch2 = cosh_sq(g);
    const Field vr = phi.u * nh * ddr(phi.u, g);
    const Field vt = phi.u * nh * rowmul(ch2.inverse(), ddt(phi.u, g));
    const Field divv = div_radial_axial(vr, vt, n, g);
    const Field identity_rhs = gp2 * nh + 2.0 * phi.u * covariant_grad_pairing(h, phi.u, n, g) +
                               phi.u * scalar_laplacian(phi.u, n, g) * nh;
    rep.div_identity_sup = (divv - identity_rhs).abs().maxCoeff();
    rep.div_integral = integrate(q, divv);
    return rep;
}

DistanceField quotient_distance_field(const TubeQuotient& tube, const HPoint& x,
                                      const Grid2D& grid) {
    const int n = tube.n();
    if (x.dim() != n) throw std::invalid_argument("quotient_distance_field: dimension mismatch");
    const double ell = tube.ell();
    if (ell < 1e-9)
        throw std::invalid_argument("quotient_distance_field: ell below truncation threshold");
    const double tx = point_to_cylinder(x).t;

    DistanceField out;
    out.r = zero_field(grid);
    out.kink = zero_field(grid);
    Eigen::ArrayXXi argmin(grid.nr, grid.nt);

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n - 1);
    theta(0) = 1.0;
    for (int i = 0; i < grid.nr; ++i)
        for (int j = 0; j < grid.nt; ++j) {
            CylinderCoords c;
            c.R = grid.r(i);
            c.theta = theta;
            c.t = grid.dt() * j;
            const HPoint y = cylinder_to_point(c);
            double best = dist(x, y);
            long long kb = 0;
            const double toff = std::abs(tx - c.t);
            // d(x, phi^k y) >= |tx - (t + k ell)| >= |k| ell - |tx - t|:
            // once that exceeds the champion no larger |k| can win.
            for (long long kk = 1; kk * ell - toff <= best; ++kk)
                for (long long k : {kk, -kk}) {
                    const double d = dist(x, apply_isometry(tube.phi(), k, y));
                    if (d < best) {
                        best = d;
                        kb = k;
                    }
                }
            out.r(i, j) = best;
            argmin(i, j) = static_cast<int>(kb);
        }

    long kinks = 0;
    for (int i = 0; i < grid.nr; ++i)
        for (int j = 0; j < grid.nt; ++j) {
            bool kink = false;
            if (i > 0 && argmin(i - 1, j) != argmin(i, j)) kink = true;
            if (i + 1 < grid.nr && argmin(i + 1, j) != argmin(i, j)) kink = true;
            if (grid.nt >= 2) {
                if (argmin(i, (j + 1) % grid.nt) != argmin(i, j)) kink = true;
                if (argmin(i, (j + grid.nt - 1) % grid.nt) != argmin(i, j)) kink = true;
            }
            if (kink) {
                out.kink(i, j) = 1.0;
                ++kinks;
            }
        }
    out.kink_fraction = double(kinks) / (double(grid.nr) * grid.nt);
    return out;
}

double smoothstep_cutoff(double r, double r_quarter, double r_half) {
    if (!(r_half > r_quarter))
        throw std::invalid_argument("smoothstep_cutoff: window must have positive width");
    const double x = std::clamp((r - r_quarter) / (r_half - r_quarter), 0.0, 1.0);
    return 1.0 - x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
}

CutoffReport cutoff_eta(const TubeQuotient& tube, int nr) {
    const double mu = tube.mu();
    if (!(tube.inj_radial_profile(0.0) < 0.25 * mu))
        throw std::invalid_argument(
            "cutoff_eta: injectivity at the axis must lie below mu/4");
    const double R = tube.boundary_radius();

    auto radius_at = [&](double target) {
        double lo = 0.0, hi = R;
        for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, R); ++it) {
            const double mid = 0.5 * (lo + hi);
            (tube.inj_radial_profile(mid) < target ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    };
    const double r_quarter = radius_at(0.25 * mu);
    const double r_half = radius_at(0.5 * mu);
    const double w = r_half - r_quarter;
    if (!(w > 1e-9)) throw std::invalid_argument("cutoff_eta: degenerate transition window");

    if (nr == 0) nr = std::max(257, static_cast<int>(std::ceil(8.0 * R / w)) + 1);
    if (nr > (1 << 21)) throw std::invalid_argument("cutoff_eta: transition window too thin");
    const Grid2D g = make_grid(0.0, R, nr, tube.ell(), 1);
    if (w < 4.0 * g.dr())
        throw std::invalid_argument("cutoff_eta: grid too coarse for the transition window");

    CutoffReport rep;
    rep.grid = g;
    rep.eta.u = zero_field(g);
    for (int i = 0; i < g.nr; ++i) rep.eta.u(i, 0) = smoothstep_cutoff(g.r(i), r_quarter, r_half);
    rep.r_quarter = r_quarter;
    rep.r_half = r_half;
    rep.sup_eta = rep.eta.u.abs().maxCoeff();
    rep.sup_deta = ddr(rep.eta.u, g).abs().maxCoeff();
    rep.sup_d2eta = d2dr(rep.eta.u, g).abs().maxCoeff();
    return rep;
}

double weighted_seminorm(const WarpedField& h, const QuadratureGrid& q,
                         const TubeQuotient& tube, const HPoint& x, double beta,
                         int order) {
    check_match(q, h.p);
    if (tube.n() != q.n)
        throw std::invalid_argument("weighted_seminorm: tube and quadrature dimensions differ");
    if (order != 0 && order != 2)
        throw std::invalid_argument("weighted_seminorm: order must be 0 or 2");
    if (!(beta > 0.0)) throw std::invalid_argument("weighted_seminorm: beta must be positive");
    const DistanceField dx = quotient_distance_field(tube, x, q.grid);
    const Eigen::ArrayXXd weight = (-2.0 * beta * dx.r).exp();
    Field density = norm_sq(h, q.n, q.grid);
    if (order == 2) {
        const WarpedMetric bar = hyperbolic_metric(q.n, q.grid);
        density += grad_norm_sq(h, q.n, q.grid) +
                   norm_sq(covariant_laplacian(h, bar), q.n, q.grid);
    }
    return std::sqrt(integrate(q, weight * density));
}

double hybrid_norm_desk(const WarpedField& h, const QuadratureGrid& q,
                        const TubeQuotient& tube, int kind,
                        const std::vector<HPoint>& basepoints) {
    check_match(q, h.p);
    if (tube.n() != q.n)
        throw std::invalid_argument("hybrid_norm_desk: tube and quadrature dimensions differ");
    if (kind != 0 && kind != 2)
        throw std::invalid_argument("hybrid_norm_desk: kind must be 0 or 2");
    const int n = q.n;
    const double sup = std::sqrt(norm_sq(h, n, q.grid).maxCoeff());

    Field density = norm_sq(h, n, q.grid);
    if (kind == 2) {
        const WarpedMetric bar = hyperbolic_metric(n, q.grid);
        density += grad_norm_sq(h, n, q.grid) +
                   norm_sq(covariant_laplacian(h, bar), n, q.grid);
    }
    double value = std::max(sup, std::sqrt(integrate(q, density)));

    // Weighted pieces run over the quarter-thin part {inj <= mu/4}; when it
    // is empty the sup is vacuous and the sample is ignored.
    if (!(tube.inj_radial_profile(0.0) < 0.25 * tube.mu())) return value;
    if (basepoints.empty())
        throw std::invalid_argument(
            "hybrid_norm_desk: basepoint sample is empty but the thin part is not");

    const CutoffReport cut = cutoff_eta(tube);
    Eigen::ArrayXd eta(q.grid.nr);
    for (int i = 0; i < q.grid.nr; ++i)
        eta(i) = smoothstep_cutoff(q.grid.r(i), cut.r_quarter, cut.r_half);
    const WarpedField eh{rowmul(eta, h.p), rowmul(eta, h.q), rowmul(eta, h.w),
                         rowmul(eta, h.c)};
    if (kind == 2 && !compactly_supported(eh, q.grid))
        throw std::invalid_argument(
            "hybrid_norm_desk: cut-off field is not compactly supported on the grid");

    const GapConstants gc = gap_constants(n);
    const double m = half_dim_exponent(n);
    for (const HPoint& x : basepoints) {
        const double pref = std::exp(0.5 * m * depth(tube, x));
        value = std::max(value, pref * weighted_seminorm(eh, q, tube, x, gc.beta, kind));
    }
    return value;
}

TransferReport transfer_check(const TubeQuotient& tube, const HPoint& x,
                              const ScalarField& u, const QuadratureGrid& q,
                              std::uint64_t seed, long samples) {
    check_match(q, u.u);
    const int n = tube.n();
    if (q.n != n || x.dim() != n)
        throw std::invalid_argument("transfer_check: dimension mismatch");
    if (!on_hyperboloid(x)) throw std::invalid_argument("transfer_check: x is off the sheet");
    if ((u.u < 0.0).any()) throw std::invalid_argument("transfer_check: u must be nonnegative");
    if (samples < 1) throw std::invalid_argument("transfer_check: need at least one sample");
    const double ell = tube.ell();
    if (std::abs(q.grid.t_len - ell) > 1e-9 * std::max(1.0, ell))
        throw std::invalid_argument("transfer_check: grid period must equal ell");

    // Minkowski-orthonormal tangent basis at x.
    std::vector<Eigen::VectorXd> basis;
    for (int e = 0; e <= n && static_cast<int>(basis.size()) < n; ++e) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(n + 1);
        v(e) = 1.0;
        v += mink_raw(v, x.coords) * x.coords;
        for (const auto& b : basis) v -= mink_raw(v, b) * b;
        const double nn = mink_raw(v, v);
        if (nn > 1e-12) basis.push_back(v / std::sqrt(nn));
    }
    if (static_cast<int>(basis.size()) != n)
        throw std::logic_error("transfer_check: tangent basis construction failed");

    // Cumulative radial volume table for sinh^{n-1} on [0, 1/2].
    const double rad = 0.5;
    const int table = 4096;
    std::vector<double> cum(table + 1, 0.0);
    auto dens = [&](double rho) { return std::pow(std::sinh(rho), n - 1); };
    for (int i = 1; i <= table; ++i) {
        const double a = rad * (i - 1) / table, b = rad * i / table;
        cum[i] = cum[i - 1] + 0.5 * (dens(a) + dens(b)) * (rad / table);
    }
    auto radius_of = [&](double vol) {
        int lo = 0, hi = table;
        while (hi - lo > 1) {
            const int mid = (lo + hi) / 2;
            (cum[mid] <= vol ? lo : hi) = mid;
        }
        const double seg = cum[hi] - cum[lo];
        const double f = seg > 0.0 ? (vol - cum[lo]) / seg : 0.0;
        return rad * (lo + f) / table;
    };
    const double sphere_area = 2.0 * std::pow(M_PI, 0.5 * n) / std::tgamma(0.5 * n);
    const double ball_volume = sphere_area * cum[table];

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Grid2D& g = q.grid;

    double lhs = 0.0, rhs = 0.0, max_ratio = 0.0;
    for (long s = 0; s < samples; ++s) {
        // Stratified radius: one draw per equal-volume slice.
        const double vol = cum[table] * (double(s) + unif(rng)) / double(samples);
        const double rho = radius_of(vol);
        Eigen::VectorXd xi(n);
        for (int i = 0; i < n; ++i) xi(i) = gauss(rng);
        const double norm = xi.norm();
        if (norm < 1e-12) continue;  // zero-measure direction draw; resampling would bias strata
        xi /= norm;
        Eigen::VectorXd dir = Eigen::VectorXd::Zero(n + 1);
        for (int i = 0; i < n; ++i) dir += xi(i) * basis[i];
        HPoint z{std::cosh(rho) * x.coords + std::sinh(rho) * dir};

        // Value of u at the quotient coordinates of z (0 off the grid).
        const CylinderCoords c = point_to_cylinder(z);
        double uval = 0.0;
        if (c.R >= g.r0 && c.R <= g.r1) {
            double tz = std::fmod(c.t, g.t_len);
            if (tz < 0.0) tz += g.t_len;
            const double fr = (c.R - g.r0) / g.dr();
            const int i0 = std::min(static_cast<int>(fr), g.nr - 2);
            const double ar = fr - i0;
            if (g.nt == 1) {
                uval = (1.0 - ar) * u.u(i0, 0) + ar * u.u(i0 + 1, 0);
            } else {
                const double ft = tz / g.dt();
                const int j0 = std::min(static_cast<int>(ft), g.nt - 1);
                const double at = ft - j0;
                const int j1 = (j0 + 1) % g.nt;
                uval = (1.0 - ar) * ((1.0 - at) * u.u(i0, j0) + at * u.u(i0, j1)) +
                       ar * ((1.0 - at) * u.u(i0 + 1, j0) + at * u.u(i0 + 1, j1));
            }
        }

        // Sheet multiplicity m(z) = #{k : phi^k z in B(x, 1/2)}; every such k
        // satisfies d(z, phi^k z) <= 1, so m <= orbit_count_ambient(z, 1).
        long long m = 0;
        const double dxz = dist(x, z);
        for (long long k = 0;; (k <= 0) ? k = -k + 1 : k = -k) {
            if (std::abs(double(k)) * ell - dxz > rad && k > 0) break;
            if (std::abs(double(k)) * ell - dxz > rad) continue;
            if (dist(x, apply_isometry(tube.phi(), k, z)) <= rad) ++m;
        }
        if (m == 0) m = 1;  // z itself lies in the ball; guard round-off at the rim
        const long long w = orbit_count_ambient(tube, z, 1.0);
        lhs += uval;
        rhs += uval * double(w) / double(m);
        max_ratio = std::max(max_ratio, double(m) / double(w));
    }
    TransferReport rep;
    rep.lhs = ball_volume * lhs / double(samples);
    rep.rhs = ball_volume * rhs / double(samples);
    rep.samples = samples;
    rep.max_ratio = max_ratio;
    rep.ball_volume = ball_volume;
    return rep;
}

namespace {

// Discrete quadratic form of 2L on the diagonal class with Dirichlet rows:
// A from staggered first differences plus nodal algebraic terms, diagonal
// mass M from |h|^2.
struct DiagonalForm {
    Eigen::SparseMatrix<double> A;
    Eigen::VectorXd M;
    int nr = 0, nt = 0;
    long size() const { return static_cast<long>(nr - 2) * nt * 3; }
    long index(int i, int j, int comp) const {
        return (static_cast<long>(i - 1) * nt + j) * 3 + comp;
    }
};

DiagonalForm assemble_diagonal_form(const Grid2D& grid, int n) {
    check_dim(n);
    if (grid.nr < 5) throw std::invalid_argument("diagonal form: need at least 5 radial rows");
    if (!(grid.r0 > 0.0)) throw std::invalid_argument("diagonal form: requires r0 > 0");
    const double f = n - 2;
    const double dr = grid.dr(), dt = grid.dt();
    const double comp_weight[3] = {1.0, f, 1.0};

    DiagonalForm form;
    form.nr = grid.nr;
    form.nt = grid.nt;
    const long N = form.size();
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd M = Eigen::VectorXd::Zero(N);

    auto add_pair = [&](long a, long b, double coeff) {
        // coeff * (v_b - v_a)^2 with -1 marking a Dirichlet zero.
        if (a >= 0) trip.emplace_back(a, a, coeff);
        if (b >= 0) trip.emplace_back(b, b, coeff);
        if (a >= 0 && b >= 0) {
            trip.emplace_back(a, b, -coeff);
            trip.emplace_back(b, a, -coeff);
        }
    };
    auto idx = [&](int i, int j, int comp) -> long {
        return (i <= 0 || i >= grid.nr - 1) ? -1 : form.index(i, j, comp);
    };

    // Radial derivative terms on staggered cells.
    for (int i = 0; i + 1 < grid.nr; ++i) {
        const double rm = grid.r0 + dr * (i + 0.5);
        const double wm = std::pow(std::sinh(rm), n - 2) * std::cosh(rm) * dr * dt;
        for (int j = 0; j < grid.nt; ++j)
            for (int comp = 0; comp < 3; ++comp)
                add_pair(idx(i, j, comp), idx(i + 1, j, comp),
                         comp_weight[comp] * wm / (dr * dr));
    }
    // Axial derivative terms (1/cosh^2 factor) on periodic cells.
    if (grid.nt >= 2)
        for (int i = 1; i + 1 < grid.nr; ++i) {
            const double r = grid.r(i);
            const double ch = std::cosh(r);
            const double wm = std::pow(std::sinh(r), n - 2) / ch * dr * dt;
            for (int j = 0; j < grid.nt; ++j)
                for (int comp = 0; comp < 3; ++comp)
                    add_pair(idx(i, j, comp), idx(i, (j + 1) % grid.nt, comp),
                             comp_weight[comp] * wm / (dt * dt));
        }
    // Nodal terms: 2 tanh^2 (p-w)^2 + 2 f coth^2 (p-q)^2 - 2 |h|^2 + 2 tau^2,
    // and the mass |h|^2.
    for (int i = 1; i + 1 < grid.nr; ++i) {
        const double r = grid.r(i);
        const double sh = std::sinh(r), ch = std::cosh(r);
        const double W = std::pow(sh, n - 2) * ch * dr * dt;
        const double tanh2 = (sh / ch) * (sh / ch);
        const double coth2 = (ch / sh) * (ch / sh);
        for (int j = 0; j < grid.nt; ++j) {
            const long P = idx(i, j, 0), Q = idx(i, j, 1), Wi = idx(i, j, 2);
            // 2 tanh^2 (p - w)^2
            trip.emplace_back(P, P, 2.0 * tanh2 * W);
            trip.emplace_back(Wi, Wi, 2.0 * tanh2 * W);
            trip.emplace_back(P, Wi, -2.0 * tanh2 * W);
            trip.emplace_back(Wi, P, -2.0 * tanh2 * W);
            // 2 f coth^2 (p - q)^2
            trip.emplace_back(P, P, 2.0 * f * coth2 * W);
            trip.emplace_back(Q, Q, 2.0 * f * coth2 * W);
            trip.emplace_back(P, Q, -2.0 * f * coth2 * W);
            trip.emplace_back(Q, P, -2.0 * f * coth2 * W);
            // -2 |h|^2 and the mass
            const long ids[3] = {P, Q, Wi};
            for (int a = 0; a < 3; ++a) {
                trip.emplace_back(ids[a], ids[a], -2.0 * comp_weight[a] * W);
                M(ids[a]) += comp_weight[a] * W;
            }
            // +2 tau^2, tau = p + f q + w
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    trip.emplace_back(ids[a], ids[b],
                                      2.0 * comp_weight[a] * comp_weight[b] * W);
        }
    }
    form.A.resize(N, N);
    form.A.setFromTriplets(trip.begin(), trip.end());
    form.M = M;
    return form;
}

Eigen::VectorXd pack_diagonal(const DiagonalForm& form, const WarpedField& h) {
    Eigen::VectorXd v(form.size());
    for (int i = 1; i + 1 < form.nr; ++i)
        for (int j = 0; j < form.nt; ++j) {
            v(form.index(i, j, 0)) = h.p(i, j);
            v(form.index(i, j, 1)) = h.q(i, j);
            v(form.index(i, j, 2)) = h.w(i, j);
        }
    return v;
}

}  // namespace

double diagonal_form_rayleigh(const Grid2D& grid, int n, const WarpedField& h) {
    if (h.c.abs().maxCoeff() != 0.0)
        throw std::invalid_argument("diagonal_form_rayleigh: field must have c = 0");
    if (h.p.row(0).abs().maxCoeff() != 0.0 || h.p.row(grid.nr - 1).abs().maxCoeff() != 0.0 ||
        h.q.row(0).abs().maxCoeff() != 0.0 || h.q.row(grid.nr - 1).abs().maxCoeff() != 0.0 ||
        h.w.row(0).abs().maxCoeff() != 0.0 || h.w.row(grid.nr - 1).abs().maxCoeff() != 0.0)
        throw std::invalid_argument("diagonal_form_rayleigh: Dirichlet rows must vanish");
    const DiagonalForm form = assemble_diagonal_form(grid, n);
    const Eigen::VectorXd v = pack_diagonal(form, h);
    const double mass = v.dot(form.M.cwiseProduct(v));
    if (!(mass > 0.0))
        throw std::invalid_argument("diagonal_form_rayleigh: field vanishes identically");
    return v.dot(form.A * v) / mass;
}

ConditioningReport discrete_L_conditioning(const Grid2D& grid, int n) {
    const DiagonalForm form = assemble_diagonal_form(grid, n);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(form.A);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("discrete_L_conditioning: factorization failed");

    std::mt19937_64 rng(0x5eedull);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Eigen::VectorXd v(form.size());
    for (long i = 0; i < v.size(); ++i) v(i) = unif(rng);
    v /= std::sqrt(v.dot(form.M.cwiseProduct(v)));

    double lambda = v.dot(form.A * v);
    const int max_iter = 10000;
    for (int it = 1; it <= max_iter; ++it) {
        Eigen::VectorXd z = solver.solve(form.M.cwiseProduct(v));
        if (solver.info() != Eigen::Success)
            throw std::runtime_error("discrete_L_conditioning: solve failed");
        z /= std::sqrt(z.dot(form.M.cwiseProduct(z)));
        const double next = z.dot(form.A * z);
        v = z;
        if (std::abs(next - lambda) <= 1e-11 * (1.0 + std::abs(next))) {
            ConditioningReport rep;
            rep.min_eigenvalue = next;
            rep.iterations = it;
            return rep;
        }
        lambda = next;
    }
    throw std::runtime_error("discrete_L_conditioning: inverse iteration did not converge");
}

}  // namespace tubelab
