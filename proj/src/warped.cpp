#include "tubelab/warped.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

namespace tubelab {

namespace {

// Radial warp samples and the analytic derivatives the class reduction needs.
struct Warps {
    Eigen::ArrayXd sh, ch, sh2, ch2, shch, cosh2r, coth, tanh;
};

Warps make_warps(const Grid2D& grid) {
    Warps w;
    w.sh.resize(grid.nr);
    w.ch.resize(grid.nr);
    for (int i = 0; i < grid.nr; ++i) {
        w.sh[i] = std::sinh(grid.r(i));
        w.ch[i] = std::cosh(grid.r(i));
    }
    w.sh2 = w.sh * w.sh;
    w.ch2 = w.ch * w.ch;
    w.shch = w.sh * w.ch;
    w.cosh2r = w.sh2 + w.ch2;
    w.coth = w.ch / w.sh;
    w.tanh = w.sh / w.ch;
    return w;
}

// f with every column multiplied by the radial profile v.
Field rowmul(const Eigen::ArrayXd& v, const Field& f) {
    return f.colwise() * v;
}

void check_grid(const Grid2D& grid) {
    if (grid.nr < 2 || grid.nt < 1 || !(grid.r1 > grid.r0) || !(grid.t_len > 0.0))
        throw std::invalid_argument("warped: invalid grid");
}

void check_dim(int n) {
    if (n < 4) throw std::invalid_argument("warped: dimension must be at least 4");
}

void check_positive_r0(const Grid2D& grid) {
    if (!(grid.r0 > 0.0))
        throw std::invalid_argument("warped: class reduction requires r0 > 0");
}

bool same_grid(const Grid2D& a, const Grid2D& b) {
    return a.nr == b.nr && a.nt == b.nt && a.r0 == b.r0 && a.r1 == b.r1 &&
           a.t_len == b.t_len;
}

void check_hyperbolic_background(const WarpedMetric& m_bar) {
    double dev = (m_bar.P - 1.0).abs().maxCoeff();
    dev = std::max(dev, (m_bar.Q - 1.0).abs().maxCoeff());
    dev = std::max(dev, (m_bar.W - 1.0).abs().maxCoeff());
    dev = std::max(dev, m_bar.C.abs().maxCoeff());
    if (dev > 1e-14)
        throw std::invalid_argument("warped: background must be the hyperbolic metric");
}

struct NotPositiveDefinite : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace

Grid2D make_grid(double r0, double r1, int nr, double t_len, int nt) {
    Grid2D g;
    g.r0 = r0;
    g.r1 = r1;
    g.nr = nr;
    g.t_len = t_len;
    g.nt = nt;
    check_grid(g);
    return g;
}

Field zero_field(const Grid2D& grid) { return Field::Zero(grid.nr, grid.nt); }

WarpedField zero_warped_field(const Grid2D& grid) {
    return WarpedField{zero_field(grid), zero_field(grid), zero_field(grid),
                       zero_field(grid)};
}

WarpedMetric hyperbolic_metric(int n, const Grid2D& grid) {
    check_dim(n);
    check_grid(grid);
    WarpedMetric m;
    m.n = n;
    m.grid = grid;
    m.P = Field::Ones(grid.nr, grid.nt);
    m.Q = Field::Ones(grid.nr, grid.nt);
    m.W = Field::Ones(grid.nr, grid.nt);
    m.C = zero_field(grid);
    return m;
}

WarpedMetric metric_from_profiles(int n, const Grid2D& grid,
                                  const std::function<double(double)>& a,
                                  const std::function<double(double)>& b) {
    check_dim(n);
    check_grid(grid);
    check_positive_r0(grid);
    WarpedMetric m = hyperbolic_metric(n, grid);
    for (int i = 0; i < grid.nr; ++i) {
        const double r = grid.r(i);
        const double av = a(r), bv = b(r);
        if (!(av > 0.0) || !(bv > 0.0))
            throw std::invalid_argument("metric_from_profiles: profiles must be positive");
        m.Q.row(i).setConstant(av * av / (std::sinh(r) * std::sinh(r)));
        m.W.row(i).setConstant(bv * bv / (std::cosh(r) * std::cosh(r)));
    }
    return m;
}

WarpedMetric add_field(const WarpedMetric& g, const WarpedField& h, double scale) {
    WarpedMetric out = g;
    out.P += scale * h.p;
    out.Q += scale * h.q;
    out.W += scale * h.w;
    out.C += scale * h.c;
    return out;
}

WarpedField metric_diff(const WarpedMetric& g1, const WarpedMetric& g2) {
    if (g1.n != g2.n || !same_grid(g1.grid, g2.grid))
        throw std::invalid_argument("metric_diff: incompatible metrics");
    return WarpedField{g1.P - g2.P, g1.Q - g2.Q, g1.W - g2.W, g1.C - g2.C};
}

Field ddr(const Field& f, const Grid2D& grid) {
    const int nr = grid.nr;
    const double h = grid.dr();
    Field out(nr, f.cols());
    out.row(0) = (-3.0 * f.row(0) + 4.0 * f.row(1) - f.row(2)) / (2.0 * h);
    for (int i = 1; i < nr - 1; ++i)
        out.row(i) = (f.row(i + 1) - f.row(i - 1)) / (2.0 * h);
    out.row(nr - 1) =
        (3.0 * f.row(nr - 1) - 4.0 * f.row(nr - 2) + f.row(nr - 3)) / (2.0 * h);
    return out;
}

Field d2dr(const Field& f, const Grid2D& grid) {
    const int nr = grid.nr;
    const double h2 = grid.dr() * grid.dr();
    Field out(nr, f.cols());
    out.row(0) = (2.0 * f.row(0) - 5.0 * f.row(1) + 4.0 * f.row(2) - f.row(3)) / h2;
    for (int i = 1; i < nr - 1; ++i)
        out.row(i) = (f.row(i + 1) - 2.0 * f.row(i) + f.row(i - 1)) / h2;
    out.row(nr - 1) = (2.0 * f.row(nr - 1) - 5.0 * f.row(nr - 2) +
                       4.0 * f.row(nr - 3) - f.row(nr - 4)) / h2;
    return out;
}

Field ddt(const Field& f, const Grid2D& grid) {
    const int nt = grid.nt;
    if (nt < 3) return Field::Zero(f.rows(), f.cols());
    const double h = grid.dt();
    Field out(f.rows(), nt);
    for (int j = 0; j < nt; ++j) {
        const int jp = (j + 1) % nt, jm = (j + nt - 1) % nt;
        out.col(j) = (f.col(jp) - f.col(jm)) / (2.0 * h);
    }
    return out;
}

Field d2dt(const Field& f, const Grid2D& grid) {
    const int nt = grid.nt;
    if (nt < 3) return Field::Zero(f.rows(), f.cols());
    const double h2 = grid.dt() * grid.dt();
    Field out(f.rows(), nt);
    for (int j = 0; j < nt; ++j) {
        const int jp = (j + 1) % nt, jm = (j + nt - 1) % nt;
        out.col(j) = (f.col(jp) - 2.0 * f.col(j) + f.col(jm)) / h2;
    }
    return out;
}

bool compactly_supported(const Field& f, const Grid2D& grid) {
    if (grid.nr < 6) return false;
    for (int i : {0, 1, grid.nr - 2, grid.nr - 1})
        if ((f.row(i) != 0.0).any()) return false;
    return true;
}

bool compactly_supported(const WarpedField& h, const Grid2D& grid) {
    return compactly_supported(h.p, grid) && compactly_supported(h.q, grid) &&
           compactly_supported(h.w, grid) && compactly_supported(h.c, grid);
}

Field trace(const WarpedField& h, int n) {
    return h.p + double(n - 2) * h.q + h.w;
}

Field norm_sq(const WarpedField& h, int n, const Grid2D& grid) {
    const Warps w = make_warps(grid);
    return h.p.square() + double(n - 2) * h.q.square() + h.w.square() +
           rowmul(2.0 / w.ch2, h.c.square());
}

double sup_norm(const WarpedField& h) {
    return std::max(std::max(h.p.abs().maxCoeff(), h.q.abs().maxCoeff()),
                    std::max(h.w.abs().maxCoeff(), h.c.abs().maxCoeff()));
}

// First covariant derivatives of the class tensor that mix components.  With
// ' = d/dr and . = d/dt:
//   grad_r h: (p', q', w', k1),            k1 = c' - tanh c
//   grad_t h: (k2, q., k4, k3),            k2 = p. - 2 tanh c,
//                                          k3 = c. + sinh cosh (p - w),
//                                          k4 = cosh^2 w. + 2 sinh cosh c
//   grad_i h  has the ghat-proportional entries s1 = sinh cosh (p - q) (r-slot)
//             and s2 = sinh cosh c (t-slot).
struct ClassDerivs {
    Field pr, qr, wr, k1;
    Field k2, qt, k3, k4;
};

namespace {

ClassDerivs class_derivs(const WarpedField& h, const Grid2D& grid, const Warps& w) {
    ClassDerivs d;
    d.pr = ddr(h.p, grid);
    d.qr = ddr(h.q, grid);
    d.wr = ddr(h.w, grid);
    d.k1 = ddr(h.c, grid) - rowmul(w.tanh, h.c);
    d.k2 = ddt(h.p, grid) - 2.0 * rowmul(w.tanh, h.c);
    d.qt = ddt(h.q, grid);
    d.k3 = ddt(h.c, grid) + rowmul(w.shch, h.p - h.w);
    d.k4 = rowmul(w.ch2, ddt(h.w, grid)) + 2.0 * rowmul(w.shch, h.c);
    return d;
}

}  // namespace

Field grad_norm_sq(const WarpedField& h, int n, const Grid2D& grid) {
    check_positive_r0(grid);
    const double f = n - 2;
    const Warps w = make_warps(grid);
    const ClassDerivs d = class_derivs(h, grid, w);
    Field rad = d.pr.square() + rowmul(2.0 / w.ch2, d.k1.square()) +
                d.wr.square() + f * d.qr.square();
    Field ax = d.k2.square() + rowmul(2.0 / w.ch2, d.k3.square()) +
               rowmul(1.0 / (w.ch2 * w.ch2), d.k4.square()) + f * d.qt.square();
    Field ang = 2.0 * f * rowmul(w.ch2 / w.sh2, (h.p - h.q).square()) +
                2.0 * f * rowmul(1.0 / w.sh2, h.c.square());
    return rad + rowmul(1.0 / w.ch2, ax) + ang;
}

Field scalar_grad_norm_sq(const Field& u, const Grid2D& grid) {
    const Warps w = make_warps(grid);
    return ddr(u, grid).square() + rowmul(1.0 / w.ch2, ddt(u, grid).square());
}

Field scalar_laplacian(const Field& u, int n, const Grid2D& grid) {
    check_positive_r0(grid);
    const Warps w = make_warps(grid);
    return d2dr(u, grid) + rowmul(1.0 / w.ch2, d2dt(u, grid)) +
           rowmul(w.tanh + double(n - 2) * w.coth, ddr(u, grid));
}

Field covariant_grad_pairing(const WarpedField& h, const Field& phi, int n,
                             const Grid2D& grid) {
    check_positive_r0(grid);
    const double f = n - 2;
    const Warps w = make_warps(grid);
    const ClassDerivs d = class_derivs(h, grid, w);
    Field pair_r = d.pr * h.p + f * d.qr * h.q + d.wr * h.w +
                   2.0 * rowmul(1.0 / w.ch2, d.k1 * h.c);
    Field pair_t = d.k2 * h.p + f * d.qt * h.q +
                   rowmul(1.0 / w.ch2, d.k4 * h.w) +
                   2.0 * rowmul(1.0 / w.ch2, d.k3 * h.c);
    return ddr(phi, grid) * pair_r + rowmul(1.0 / w.ch2, ddt(phi, grid) * pair_t);
}

Field div_radial_axial(const Field& vr, const Field& vt, int n, const Grid2D& grid) {
    check_positive_r0(grid);
    const Warps w = make_warps(grid);
    return ddr(vr, grid) + ddt(vt, grid) +
           rowmul(w.tanh + double(n - 2) * w.coth, vr);
}

WarpedField warped_ricci(const WarpedMetric& m) {
    check_dim(m.n);
    check_positive_r0(m.grid);
    if (m.grid.nr < 8) throw std::invalid_argument("warped_ricci: grid too coarse");
    if ((m.C != 0.0).any() || (m.P != 1.0).any())
        throw std::invalid_argument("warped_ricci: metric is not doubly warped");
    for (int j = 1; j < m.grid.nt; ++j)
        if ((m.Q.col(j) != m.Q.col(0)).any() || (m.W.col(j) != m.W.col(0)).any())
            throw std::invalid_argument("warped_ricci: metric is not doubly warped");
    if ((m.Q <= 0.0).any() || (m.W <= 0.0).any())
        throw std::invalid_argument("warped_ricci: warps must be positive");

    const int nr = m.grid.nr;
    const double f = m.n - 2;
    const Warps wp = make_warps(m.grid);
    Field a(nr, 1), b(nr, 1);
    for (int i = 0; i < nr; ++i) {
        a(i, 0) = std::sqrt(m.Q(i, 0)) * wp.sh[i];
        b(i, 0) = std::sqrt(m.W(i, 0)) * wp.ch[i];
    }
    Grid2D line = m.grid;
    line.nt = 1;
    const Field ar = ddr(a, line), arr = d2dr(a, line);
    const Field br = ddr(b, line), brr = d2dr(b, line);

    WarpedField out = zero_warped_field(m.grid);
    for (int i = 0; i < nr; ++i) {
        const double av = a(i, 0), bv = b(i, 0);
        const double rr = -f * arr(i, 0) / av - brr(i, 0) / bv;
        const double ang = -(av * arr(i, 0) + (f - 1.0) * (ar(i, 0) * ar(i, 0) - 1.0) +
                             av * ar(i, 0) * br(i, 0) / bv);
        const double tt = -bv * (brr(i, 0) + f * ar(i, 0) * br(i, 0) / av);
        out.p.row(i).setConstant(rr);
        out.q.row(i).setConstant(ang / wp.sh2[i]);
        out.w.row(i).setConstant(tt / wp.ch2[i]);
    }
    return out;
}

Eigen::MatrixXd weitzenboeck_curvature_route(const Eigen::MatrixXd& h, int n) {
    if (h.rows() != n || h.cols() != n || (h - h.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("weitzenboeck: h must be symmetric n x n");
    // h(Ric x, y) + h(x, Ric y) with Ric = -(n-1) id.
    Eigen::MatrixXd out = -2.0 * double(n - 1) * h;
    // -2 tr h(., R(., x) y) with R(e_a, e_b) e_d = -(delta_bd e_a - delta_ad e_b).
    for (int b = 0; b < n; ++b)
        for (int d = 0; d < n; ++d) {
            double s = 0.0;
            for (int a = 0; a < n; ++a) {
                if (b == d) s -= h(a, a);
                if (a == d) s += h(a, b);
            }
            out(b, d) -= 2.0 * s;
        }
    return out;
}

Eigen::MatrixXd weitzenboeck_closed_route(const Eigen::MatrixXd& h, int n) {
    if (h.rows() != n || h.cols() != n || (h - h.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("weitzenboeck: h must be symmetric n x n");
    return -2.0 * double(n) * h +
           2.0 * h.trace() * Eigen::MatrixXd::Identity(n, n);
}

Eigen::MatrixXd weitzenboeck_pointwise(const Eigen::MatrixXd& h, int n) {
    const Eigen::MatrixXd a = weitzenboeck_curvature_route(h, n);
    const Eigen::MatrixXd b = weitzenboeck_closed_route(h, n);
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    if ((a - b).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::logic_error("weitzenboeck_pointwise: route disagreement");
    return b;
}

WarpedField weitzenboeck_class(const WarpedField& h, int n) {
    const Field tau = trace(h, n);
    const double two_n = 2.0 * n;
    return WarpedField{-two_n * h.p + 2.0 * tau, -two_n * h.q + 2.0 * tau,
                       -two_n * h.w + 2.0 * tau, -two_n * h.c};
}

WarpedField covariant_laplacian(const WarpedField& h, const WarpedMetric& m_bar) {
    check_hyperbolic_background(m_bar);
    check_positive_r0(m_bar.grid);
    if (!compactly_supported(h, m_bar.grid))
        throw std::invalid_argument("covariant_laplacian: support touches the boundary");
    const Grid2D& grid = m_bar.grid;
    const double f = m_bar.n - 2;
    const Warps w = make_warps(grid);
    const ClassDerivs d = class_derivs(h, grid, w);

    const Field prr = d2dr(h.p, grid), qrr = d2dr(h.q, grid), wrr = d2dr(h.w, grid);
    const Field qtt = d2dt(h.q, grid);
    const Field k2t = ddt(d.k2, grid), k3t = ddt(d.k3, grid), k4t = ddt(d.k4, grid);
    const Field k1r = ddr(d.k1, grid);

    Field tp = prr +
               rowmul(1.0 / w.ch2,
                      k2t + rowmul(w.shch, d.pr) - 2.0 * rowmul(w.tanh, d.k3)) +
               f * rowmul(w.coth, d.pr) -
               2.0 * f * rowmul(w.ch2 / w.sh2, h.p - h.q);
    Field tq = qrr + rowmul(1.0 / w.ch2, qtt + rowmul(w.shch, d.qr)) +
               f * rowmul(w.coth, d.qr) +
               2.0 * rowmul(w.ch2 / w.sh2, h.p - h.q);
    Field tw = wrr +
               rowmul(1.0 / (w.ch2 * w.ch2),
                      k4t + rowmul(w.ch2 * w.shch, d.wr) + 2.0 * rowmul(w.shch, d.k3)) +
               f * rowmul(w.coth, d.wr);
    Field tc = k1r - rowmul(w.tanh, d.k1) +
               rowmul(1.0 / w.ch2, k3t + rowmul(w.shch, d.k1) -
                                       rowmul(w.tanh, d.k4) + rowmul(w.shch, d.k2)) +
               f * rowmul(w.coth, d.k1) - f * rowmul(w.ch2 / w.sh2, h.c);
    return WarpedField{-tp, -tq, -tw, -tc};
}

WarpedField lichnerowicz(const WarpedField& h, const WarpedMetric& m_bar) {
    WarpedField lap = covariant_laplacian(h, m_bar);
    const WarpedField wz = weitzenboeck_class(h, m_bar.n);
    lap.p += wz.p;
    lap.q += wz.q;
    lap.w += wz.w;
    lap.c += wz.c;
    return lap;
}

WarpedField linearized_einstein(const WarpedField& h, const WarpedMetric& m_bar) {
    WarpedField out = lichnerowicz(h, m_bar);
    const double nm1 = m_bar.n - 1;
    out.p = 0.5 * out.p + nm1 * h.p;
    out.q = 0.5 * out.q + nm1 * h.q;
    out.w = 0.5 * out.w + nm1 * h.w;
    out.c = 0.5 * out.c + nm1 * h.c;
    return out;
}

WarpedField linearized_einstein_dual(const WarpedField& h, const WarpedMetric& m_bar) {
    WarpedField lap = covariant_laplacian(h, m_bar);
    const Field tau = trace(h, m_bar.n);
    return WarpedField{0.5 * (lap.p - 2.0 * h.p + 2.0 * tau),
                       0.5 * (lap.q - 2.0 * h.q + 2.0 * tau),
                       0.5 * (lap.w - 2.0 * h.w + 2.0 * tau),
                       0.5 * (lap.c - 2.0 * h.c)};
}

OneFormField bianchi(const WarpedMetric& m_bar, const WarpedField& h) {
    check_hyperbolic_background(m_bar);
    check_positive_r0(m_bar.grid);
    const Grid2D& grid = m_bar.grid;
    const double f = m_bar.n - 2;
    const Warps w = make_warps(grid);
    const ClassDerivs d = class_derivs(h, grid, w);
    OneFormField out;
    out.r = -d.pr - rowmul(1.0 / w.ch2, d.k3) - f * rowmul(w.coth, h.p - h.q) +
            0.5 * (d.pr + f * d.qr + d.wr);
    out.t = -d.k1 - rowmul(1.0 / w.ch2, d.k4) - f * rowmul(w.coth, h.c) +
            0.5 * (d.k2 + 2.0 * rowmul(w.tanh, h.c) + f * d.qt + ddt(h.w, grid));
    return out;
}

WarpedField ricci(const WarpedMetric& g) {
    check_dim(g.n);
    check_grid(g.grid);
    check_positive_r0(g.grid);
    if (g.grid.nr < 8) throw std::invalid_argument("ricci: grid too coarse");
    const Grid2D& grid = g.grid;
    const double f = g.n - 2;
    const Warps wp = make_warps(grid);

    const Field Pr = ddr(g.P, grid), Pt = ddt(g.P, grid), Prr = d2dr(g.P, grid),
                Ptt = d2dt(g.P, grid), Prt = ddt(ddr(g.P, grid), grid);
    const Field Qr = ddr(g.Q, grid), Qt = ddt(g.Q, grid), Qrr = d2dr(g.Q, grid),
                Qtt = d2dt(g.Q, grid), Qrt = ddt(ddr(g.Q, grid), grid);
    const Field Wr = ddr(g.W, grid), Wt = ddt(g.W, grid), Wrr = d2dr(g.W, grid),
                Wtt = d2dt(g.W, grid), Wrt = ddt(ddr(g.W, grid), grid);
    const Field Cr = ddr(g.C, grid), Ct = ddt(g.C, grid), Crr = d2dr(g.C, grid),
                Ctt = d2dt(g.C, grid), Crt = ddt(ddr(g.C, grid), grid);

    WarpedField out = zero_warped_field(grid);

    using M2 = std::array<std::array<double, 2>, 2>;
    for (int i = 0; i < grid.nr; ++i) {
        const double sh2 = wp.sh2[i], ch2 = wp.ch2[i], shch = wp.shch[i],
                     c2r = wp.cosh2r[i];
        for (int j = 0; j < grid.nt; ++j) {
            const double P = g.P(i, j), Q = g.Q(i, j), W = g.W(i, j), C = g.C(i, j);
            const double det2 = P * W * ch2 - C * C;
            if (!(P > 0.0) || !(Q > 0.0) || !(det2 > 0.0)) {
                std::ostringstream msg;
                msg << "ricci: metric not positive definite at node (" << i << ", "
                    << j << "), r = " << grid.r(i);
                throw NotPositiveDefinite(msg.str());
            }

            // Base 2-D metric over (r, t), its derivatives, inverse.
            M2 gb = {{{P, C}, {C, W * ch2}}};
            std::array<M2, 2> dg;
            dg[0] = {{{Pr(i, j), Cr(i, j)},
                      {Cr(i, j), Wr(i, j) * ch2 + W * 2.0 * shch}}};
            dg[1] = {{{Pt(i, j), Ct(i, j)}, {Ct(i, j), Wt(i, j) * ch2}}};
            // Index rr = 0, rt = 1, tt = 2.
            std::array<M2, 3> d2g;
            d2g[0] = {{{Prr(i, j), Crr(i, j)},
                       {Crr(i, j), Wrr(i, j) * ch2 + 2.0 * Wr(i, j) * 2.0 * shch +
                                       W * 2.0 * c2r}}};
            d2g[1] = {{{Prt(i, j), Crt(i, j)},
                       {Crt(i, j), Wrt(i, j) * ch2 + Wt(i, j) * 2.0 * shch}}};
            d2g[2] = {{{Ptt(i, j), Ctt(i, j)}, {Ctt(i, j), Wtt(i, j) * ch2}}};

            M2 gi = {{{gb[1][1] / det2, -gb[0][1] / det2},
                      {-gb[1][0] / det2, gb[0][0] / det2}}};
            std::array<M2, 2> dgi;
            for (int e = 0; e < 2; ++e)
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) {
                        double s = 0.0;
                        for (int u = 0; u < 2; ++u)
                            for (int v = 0; v < 2; ++v)
                                s -= gi[a][u] * dg[e][u][v] * gi[v][b];
                        dgi[e][a][b] = s;
                    }

            // Gamma^a_{bc} and d_e Gamma^a_{bc}.
            double Gam[2][2][2], dGam[2][2][2][2];
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                    for (int c = 0; c < 2; ++c) {
                        double s = 0.0;
                        for (int dd = 0; dd < 2; ++dd)
                            s += gi[a][dd] *
                                 (dg[b][dd][c] + dg[c][b][dd] - dg[dd][b][c]);
                        Gam[a][b][c] = 0.5 * s;
                    }
            for (int e = 0; e < 2; ++e)
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c) {
                            double s = 0.0;
                            for (int dd = 0; dd < 2; ++dd) {
                                s += dgi[e][a][dd] *
                                     (dg[b][dd][c] + dg[c][b][dd] - dg[dd][b][c]);
                                s += gi[a][dd] * (d2g[e + b][dd][c] +
                                                  d2g[e + c][b][dd] -
                                                  d2g[e + dd][b][c]);
                            }
                            dGam[e][a][b][c] = 0.5 * s;
                        }

            // Ric_B(b,d) = R^a_{bad}.
            M2 ric_b = {{{0.0, 0.0}, {0.0, 0.0}}};
            for (int b = 0; b < 2; ++b)
                for (int dd = 0; dd < 2; ++dd) {
                    double s = 0.0;
                    for (int a = 0; a < 2; ++a) {
                        s += dGam[a][a][dd][b] - dGam[dd][a][a][b];
                        for (int e = 0; e < 2; ++e)
                            s += Gam[a][a][e] * Gam[e][dd][b] -
                                 Gam[a][dd][e] * Gam[e][a][b];
                    }
                    ric_b[b][dd] = s;
                }

            // Fiber warp S = Q sinh^2 and its base Hessian.
            const double S = Q * sh2;
            const double Sr = Qr(i, j) * sh2 + Q * 2.0 * shch;
            const double St = Qt(i, j) * sh2;
            const double Srr =
                Qrr(i, j) * sh2 + 2.0 * Qr(i, j) * 2.0 * shch + Q * 2.0 * c2r;
            const double Srt = Qrt(i, j) * sh2 + Qt(i, j) * 2.0 * shch;
            const double Stt = Qtt(i, j) * sh2;
            const std::array<double, 2> dS = {Sr, St};
            const std::array<double, 3> d2S = {Srr, Srt, Stt};
            M2 hess;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    double s = d2S[a + b];
                    for (int e = 0; e < 2; ++e) s -= Gam[e][a][b] * dS[e];
                    hess[a][b] = s;
                }
            double lapS = 0.0, gradS2 = 0.0;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    lapS += gi[a][b] * hess[a][b];
                    gradS2 += gi[a][b] * dS[a] * dS[b];
                }

            const double hf = 0.5 * f;
            out.p(i, j) = ric_b[0][0] - hf * (hess[0][0] / S - 0.5 * Sr * Sr / (S * S));
            out.c(i, j) = ric_b[0][1] - hf * (hess[0][1] / S - 0.5 * Sr * St / (S * S));
            out.w(i, j) =
                (ric_b[1][1] - hf * (hess[1][1] / S - 0.5 * St * St / (S * S))) / ch2;
            out.q(i, j) =
                ((f - 1.0) - 0.5 * lapS - 0.25 * (f - 2.0) * gradS2 / S) / sh2;
        }
    }
    return out;
}

WarpedField einstein_operator(const WarpedMetric& m_bar, const WarpedMetric& g) {
    check_hyperbolic_background(m_bar);
    if (g.n != m_bar.n || !same_grid(g.grid, m_bar.grid))
        throw std::invalid_argument("einstein_operator: incompatible metrics");
    const Grid2D& grid = g.grid;
    const Warps wp = make_warps(grid);
    const double nm1 = g.n - 1;

    WarpedField phi = ricci(g);
    phi.p += nm1 * g.P;
    phi.q += nm1 * g.Q;
    phi.w += nm1 * g.W;
    phi.c += nm1 * g.C;

    const OneFormField om = bianchi(m_bar, metric_diff(g, m_bar));
    // Sharp with respect to g on the (r, t) block.
    const Field det2 = g.P * rowmul(wp.ch2, g.W) - g.C.square();
    const Field vr = (rowmul(wp.ch2, g.W) * om.r - g.C * om.t) / det2;
    const Field vt = (g.P * om.t - g.C * om.r) / det2;
    const Field vrr = ddr(vr, grid), vrt = ddt(vr, grid);
    const Field vtr = ddr(vt, grid), vtt = ddt(vt, grid);

    const Field lie_p = vr * ddr(g.P, grid) + vt * ddt(g.P, grid) +
                        2.0 * (g.P * vrr + g.C * vtr);
    const Field lie_q = vr * (ddr(g.Q, grid) + 2.0 * rowmul(wp.coth, g.Q)) +
                        vt * ddt(g.Q, grid);
    const Field lie_w = vr * (ddr(g.W, grid) + 2.0 * rowmul(wp.tanh, g.W)) +
                        vt * ddt(g.W, grid) +
                        2.0 * (rowmul(1.0 / wp.ch2, g.C * vrt) + g.W * vtt);
    const Field lie_c = vr * ddr(g.C, grid) + vt * ddt(g.C, grid) + g.P * vrt +
                        g.C * (vtt + vrr) + rowmul(wp.ch2, g.W * vtr);

    phi.p += 0.5 * lie_p;
    phi.q += 0.5 * lie_q;
    phi.w += 0.5 * lie_w;
    phi.c += 0.5 * lie_c;
    return phi;
}

WarpedMetric gauged_einstein_data(int n, const Grid2D& grid, double delta) {
    check_dim(n);
    check_grid(grid);
    check_positive_r0(grid);
    const double f = n - 2;
    // beta_r(pullback - g_bar) = 0 solved for rho'': with p = rho'^2 - 1,
    // q = sinh^2(rho)/sinh^2 - 1, w = cosh^2(rho)/cosh^2 - 1 and analytic
    // q', w' the radial gauge component reduces to
    //   rho'' = [-tanh (p - w) - f coth (p - q) + (f q' + w')/2] / rho'.
    auto acc = [&](double r, double rho, double v) {
        const double sh = std::sinh(r), ch = std::cosh(r);
        const double shr = std::sinh(rho), chr = std::cosh(rho);
        const double p = v * v - 1.0;
        const double q = shr * shr / (sh * sh) - 1.0;
        const double w = chr * chr / (ch * ch) - 1.0;
        const double qp = 2.0 * (shr * chr * v - shr * shr * (ch / sh)) / (sh * sh);
        const double wp = 2.0 * (shr * chr * v - chr * chr * (sh / ch)) / (ch * ch);
        return (-(sh / ch) * (p - w) - f * (ch / sh) * (p - q) +
                0.5 * (f * qp + wp)) / v;
    };

    const int sub = 8;
    const double hstep = grid.dr() / sub;
    double rho = grid.r0 + delta, v = 1.0;
    WarpedMetric out = hyperbolic_metric(n, grid);
    auto store = [&](int i) {
        const double sh = std::sinh(grid.r(i)), ch = std::cosh(grid.r(i));
        out.P.row(i).setConstant(v * v);
        out.Q.row(i).setConstant(std::sinh(rho) * std::sinh(rho) / (sh * sh));
        out.W.row(i).setConstant(std::cosh(rho) * std::cosh(rho) / (ch * ch));
    };
    store(0);
    for (int i = 0; i + 1 < grid.nr; ++i) {
        double r = grid.r(i);
        for (int s = 0; s < sub; ++s) {
            const double k1r = v, k1v = acc(r, rho, v);
            const double k2r = v + 0.5 * hstep * k1v,
                         k2v = acc(r + 0.5 * hstep, rho + 0.5 * hstep * k1r,
                                   v + 0.5 * hstep * k1v);
            const double k3r = v + 0.5 * hstep * k2v,
                         k3v = acc(r + 0.5 * hstep, rho + 0.5 * hstep * k2r,
                                   v + 0.5 * hstep * k2v);
            const double k4r = v + hstep * k3v,
                         k4v = acc(r + hstep, rho + hstep * k3r, v + hstep * k3v);
            rho += hstep * (k1r + 2.0 * k2r + 2.0 * k3r + k4r) / 6.0;
            v += hstep * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0;
            r += hstep;
        }
        store(i + 1);
    }
    return out;
}

EinsteinReport detect_einstein(const WarpedMetric& g, const WarpedMetric& m_bar,
                               double phi_tol) {
    const Grid2D& grid = g.grid;
    const Warps wp = make_warps(grid);
    EinsteinReport rep;

    rep.phi_residual_sup = sup_norm(einstein_operator(m_bar, g));

    const WarpedField ric = ricci(g);
    const double nm1 = g.n - 1;
    WarpedField ric_res{ric.p + nm1 * g.P, ric.q + nm1 * g.Q, ric.w + nm1 * g.W,
                        ric.c + nm1 * g.C};
    rep.ric_residual_sup = sup_norm(ric_res);

    const OneFormField om = bianchi(m_bar, metric_diff(g, m_bar));
    rep.bianchi_residual_sup = std::max(om.r.abs().maxCoeff(), om.t.abs().maxCoeff());

    // Largest eigenvalue of g^{-1} Ric over the grid: fiber block is
    // ric.q/Q; the (r,t) block is a 2x2 generalized eigenproblem.
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid.nr; ++i) {
        const double ch2 = wp.ch2[i];
        for (int j = 0; j < grid.nt; ++j) {
            worst = std::max(worst, ric.q(i, j) / g.Q(i, j));
            const double det2 = g.P(i, j) * g.W(i, j) * ch2 - g.C(i, j) * g.C(i, j);
            // m = g_base^{-1} ric_base.
            const double a = ric.p(i, j), b = ric.c(i, j), d = ric.w(i, j) * ch2;
            const double gi00 = g.W(i, j) * ch2 / det2, gi01 = -g.C(i, j) / det2,
                         gi11 = g.P(i, j) / det2;
            const double m00 = gi00 * a + gi01 * b;
            const double m01 = gi00 * b + gi01 * d;
            const double m10 = gi01 * a + gi11 * b;
            const double m11 = gi01 * b + gi11 * d;
            const double tr = m00 + m11, det = m00 * m11 - m01 * m10;
            const double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * det));
            worst = std::max(worst, 0.5 * (tr + disc));
        }
    }
    rep.negativity_max = worst;
    rep.negativity_ok = worst < 0.0;
    rep.residuals_ok = rep.ric_residual_sup <= 10.0 * phi_tol &&
                       rep.bianchi_residual_sup <= 10.0 * phi_tol;
    return rep;
}

namespace {

// Interior unknown layout for the Newton system.
struct NewtonLayout {
    int nr, nt;
    int rows() const { return nr - 2; }
    int size() const { return rows() * nt * 4; }
    int index(int i, int j, int comp) const { return ((i - 1) * nt + j) * 4 + comp; }
};

Eigen::VectorXd pack(const WarpedMetric& g, const NewtonLayout& lo) {
    Eigen::VectorXd x(lo.size());
    for (int i = 1; i <= lo.rows(); ++i)
        for (int j = 0; j < lo.nt; ++j) {
            x[lo.index(i, j, 0)] = g.P(i, j);
            x[lo.index(i, j, 1)] = g.Q(i, j);
            x[lo.index(i, j, 2)] = g.W(i, j);
            x[lo.index(i, j, 3)] = g.C(i, j);
        }
    return x;
}

void unpack(const Eigen::VectorXd& x, const NewtonLayout& lo, WarpedMetric& g) {
    for (int i = 1; i <= lo.rows(); ++i)
        for (int j = 0; j < lo.nt; ++j) {
            g.P(i, j) = x[lo.index(i, j, 0)];
            g.Q(i, j) = x[lo.index(i, j, 1)];
            g.W(i, j) = x[lo.index(i, j, 2)];
            g.C(i, j) = x[lo.index(i, j, 3)];
        }
}

Eigen::VectorXd residual_vector(const WarpedMetric& m_bar, const WarpedMetric& g,
                                const NewtonLayout& lo) {
    const WarpedField phi = einstein_operator(m_bar, g);
    Eigen::VectorXd F(lo.size());
    for (int i = 1; i <= lo.rows(); ++i)
        for (int j = 0; j < lo.nt; ++j) {
            F[lo.index(i, j, 0)] = phi.p(i, j);
            F[lo.index(i, j, 1)] = phi.q(i, j);
            F[lo.index(i, j, 2)] = phi.w(i, j);
            F[lo.index(i, j, 3)] = phi.c(i, j);
        }
    return F;
}

// Hager's 1-norm estimator for ||A^{-1}||_1 given solves with A and A^T.
template <typename Solve, typename SolveT>
double inverse_one_norm_estimate(int n, const Solve& solve, const SolveT& solve_t) {
    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / n);
    double est = 0.0;
    for (int pass = 0; pass < 5; ++pass) {
        Eigen::VectorXd y = solve(x);
        est = std::max(est, y.lpNorm<1>());
        Eigen::VectorXd xi(n);
        for (int i = 0; i < n; ++i) xi[i] = y[i] >= 0.0 ? 1.0 : -1.0;
        Eigen::VectorXd z = solve_t(xi);
        int jmax = 0;
        z.cwiseAbs().maxCoeff(&jmax);
        if (std::abs(z[jmax]) <= z.dot(x)) break;
        x.setZero();
        x[jmax] = 1.0;
    }
    return est;
}

}  // namespace

NewtonResult newton_solve(const WarpedMetric& m_bar, const WarpedMetric& g_start,
                          const WarpedMetric& g_dirichlet, const NewtonOptions& opts) {
    check_hyperbolic_background(m_bar);
    if (g_start.n != m_bar.n || !same_grid(g_start.grid, m_bar.grid) ||
        g_dirichlet.n != m_bar.n || !same_grid(g_dirichlet.grid, m_bar.grid))
        throw std::invalid_argument("newton_solve: incompatible metrics");
    const Grid2D& grid = m_bar.grid;
    if (grid.nr < 8) throw std::invalid_argument("newton_solve: grid too coarse");

    NewtonLayout lo{grid.nr, grid.nt};
    const int N = lo.size();

    WarpedMetric g = g_start;
    for (int i : {0, grid.nr - 1}) {
        g.P.row(i) = g_dirichlet.P.row(i);
        g.Q.row(i) = g_dirichlet.Q.row(i);
        g.W.row(i) = g_dirichlet.W.row(i);
        g.C.row(i) = g_dirichlet.C.row(i);
    }

    const double inf = std::numeric_limits<double>::infinity();
    auto sup_residual = [&](const WarpedMetric& gm, Eigen::VectorXd* out) -> double {
        try {
            Eigen::VectorXd F = residual_vector(m_bar, gm, lo);
            if (out) *out = F;
            return F.lpNorm<Eigen::Infinity>();
        } catch (const NotPositiveDefinite&) {
            return inf;
        }
    };

    NewtonResult res;
    Eigen::VectorXd F;
    double resid = sup_residual(g, &F);
    if (resid == inf)
        throw std::invalid_argument("newton_solve: g_start not positive definite");

    // Stencil reach is 2 radial rows, so stride-5 radial coloring separates
    // unknowns; t columns get a 5-stride only when it cannot alias through the
    // periodic wrap.
    const int tcolors = (grid.nt >= 5 && grid.nt % 5 == 0) ? 5 : grid.nt;
    const double fd_eps = 1e-6;

    for (int iter = 0; iter < opts.max_iter; ++iter) {
        if (resid <= opts.tol) break;

        Eigen::VectorXd x = pack(g, lo);
        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(static_cast<size_t>(N) * 20 * std::min(grid.nt, 5));
        WarpedMetric gp = g;
        for (int comp = 0; comp < 4; ++comp)
            for (int rc = 0; rc < 5; ++rc)
                for (int tc = 0; tc < tcolors; ++tc) {
                    std::vector<int> members;
                    for (int i = 1; i <= lo.rows(); ++i) {
                        if (i % 5 != rc) continue;
                        for (int j = 0; j < grid.nt; ++j) {
                            if (tcolors == grid.nt ? j != tc : j % 5 != tc) continue;
                            members.push_back(lo.index(i, j, comp));
                        }
                    }
                    if (members.empty()) continue;
                    Eigen::VectorXd xp = x, xm = x;
                    for (int u : members) {
                        const double d = fd_eps * std::max(1.0, std::abs(x[u]));
                        xp[u] += d;
                        xm[u] -= d;
                    }
                    unpack(xp, lo, gp);
                    const Eigen::VectorXd Fp = residual_vector(m_bar, gp, lo);
                    unpack(xm, lo, gp);
                    const Eigen::VectorXd Fm = residual_vector(m_bar, gp, lo);
                    for (int u : members) {
                        const double d = fd_eps * std::max(1.0, std::abs(x[u]));
                        const int iu = 1 + (u / 4) / grid.nt;
                        const int ju = (u / 4) % grid.nt;
                        // Periodic wrap can revisit a column; dedupe the window.
                        int jes[5];
                        int nje = 0;
                        for (int dj = -2; dj <= 2; ++dj) {
                            const int je = ((ju + dj) % grid.nt + grid.nt) % grid.nt;
                            bool seen = false;
                            for (int k = 0; k < nje; ++k) seen = seen || jes[k] == je;
                            if (!seen) jes[nje++] = je;
                        }
                        for (int ie = std::max(1, iu - 2);
                             ie <= std::min(lo.rows(), iu + 2); ++ie)
                            for (int k = 0; k < nje; ++k)
                                for (int ce = 0; ce < 4; ++ce) {
                                    const int row = lo.index(ie, jes[k], ce);
                                    const double v = (Fp[row] - Fm[row]) / (2.0 * d);
                                    if (v != 0.0)
                                        trips.emplace_back(row, u, v);
                                }
                    }
                }

        Eigen::SparseMatrix<double> J(N, N);
        J.setFromTriplets(trips.begin(), trips.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(J);
        if (lu.info() != Eigen::Success)
            throw std::runtime_error("newton_solve: Jacobian factorization failed");
        Eigen::SparseMatrix<double> Jt = J.transpose();
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lut;
        lut.compute(Jt);
        if (lut.info() != Eigen::Success)
            throw std::runtime_error("newton_solve: Jacobian factorization failed");

        double norm1 = 0.0;
        for (int c = 0; c < N; ++c) {
            double s = 0.0;
            for (Eigen::SparseMatrix<double>::InnerIterator it(J, c); it; ++it)
                s += std::abs(it.value());
            norm1 = std::max(norm1, s);
        }
        const double inv_norm = inverse_one_norm_estimate(
            N, [&](const Eigen::VectorXd& b) { return lu.solve(b).eval(); },
            [&](const Eigen::VectorXd& b) { return lut.solve(b).eval(); });
        res.condition_estimate = norm1 * inv_norm;
        if (res.condition_estimate > opts.cond_limit) {
            std::ostringstream msg;
            msg << "newton_solve: Jacobian condition estimate "
                << res.condition_estimate << " exceeds limit " << opts.cond_limit
                << " at iteration " << iter;
            throw std::runtime_error(msg.str());
        }

        const Eigen::VectorXd step = lu.solve(-F);
        double damping = 1.0;
        bool accepted = false;
        WarpedMetric g_trial = g;
        for (int bt = 0; bt <= opts.max_backtrack; ++bt) {
            unpack(x + damping * step, lo, g_trial);
            Eigen::VectorXd Ft;
            const double rt = sup_residual(g_trial, &Ft);
            if (rt < resid) {
                res.history.push_back(
                    {iter + 1, resid, damping * step.lpNorm<Eigen::Infinity>(), damping});
                g = g_trial;
                F = Ft;
                resid = rt;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        if (!accepted)
            throw std::runtime_error(
                "newton_solve: residual did not decrease after max backtracking");
    }

    res.g = g;
    res.converged = resid <= opts.tol;
    res.final_residual = resid;
    return res;
}

}  // namespace tubelab
