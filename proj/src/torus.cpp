#include "tubelab/torus.hpp"

#include <cmath>
#include <stdexcept>

namespace tubelab {

TorusModel build_torus_model(const RotationNormalForm& nf, const Eigen::VectorXd& v0,
                             double ell, double R) {
    if (v0.size() != nf.dim()) throw std::invalid_argument("build_torus_model: v0 dimension mismatch");
    if (!(ell > 0.0) || !(R >= 0.0)) throw std::invalid_argument("build_torus_model: need ell > 0, R >= 0");
    const double sh = std::sinh(R);
    Eigen::VectorXd w = nf.q.transpose() * v0;
    TorusModel tm;
    int i = 0;
    for (double a : nf.angles) {
        tm.radii.push_back(sh * std::hypot(w[i], w[i + 1]));
        tm.angles.push_back(a);
        i += 2;
    }
    if (nf.flip_dims > 0) {
        tm.radii.push_back(sh * w.segment(i, nf.flip_dims).norm());
        tm.angles.push_back(std::acos(-1.0));
        i += nf.flip_dims;
    }
    tm.axial_step = ell * std::cosh(R);
    tm.axial_extra_dim = nf.fixed_dims > 0;
    return tm;
}

double torus_step_dist(const TorusModel& tm, long long k) {
    double s = static_cast<double>(k) * tm.axial_step;
    double sum = s * s;
    for (size_t j = 0; j < tm.radii.size(); ++j) {
        double arc = tm.radii[j] * angdist(static_cast<double>(k) * tm.angles[j]);
        sum += arc * arc;
    }
    return std::sqrt(sum);
}

long long torus_orbit_count(const TorusModel& tm, double r) {
    if (!(r > 0.0)) throw std::invalid_argument("torus_orbit_count: r must be positive");
    if (!(tm.axial_step > 0.0)) throw std::invalid_argument("torus_orbit_count: axial step must be positive");
    if (r / tm.axial_step > 1e8)
        throw std::invalid_argument("torus_orbit_count: r/tau exceeds 1e8 (truncation too large)");
    const double rtol = r * (1.0 + 1e-12) + 1e-12;
    const long long kmax = static_cast<long long>(std::floor(rtol / tm.axial_step));
    long long count = 1;
    for (long long k = 1; k <= kmax; ++k)
        if (torus_step_dist(tm, k) <= rtol) count += 2;
    return count;
}

TorusCountBound torus_count_bound_check(const TubeQuotient& tube, const HPoint& x, double r) {
    const double inj = injectivity_radius(tube, x);
    if (r < inj) throw std::invalid_argument("torus_count_bound_check: requires r >= inj(x)");
    CylinderCoords c = point_to_cylinder(x);
    Eigen::VectorXd v0 = c.theta_valid ? c.theta : Eigen::VectorXd::Unit(tube.n() - 1, 0);
    TorusModel tm = build_torus_model(tube.normal_form(), v0, tube.ell(), c.R);
    TorusCountBound out;
    out.count = torus_orbit_count(tm, r);
    out.bound = std::pow(r / inj, half_dim_exponent(tube.n()));
    out.ratio = static_cast<double>(out.count) / out.bound;
    return out;
}

double torus_arc_chord_ratio(const TorusModel& tm, const std::vector<double>& dphi) {
    if (dphi.size() != tm.radii.size())
        throw std::invalid_argument("torus_arc_chord_ratio: one angle offset per circle required");
    double arc2 = 0.0, chord2 = 0.0;
    for (size_t j = 0; j < tm.radii.size(); ++j) {
        double da = angdist(dphi[j]);
        arc2 += tm.radii[j] * tm.radii[j] * da * da;
        double ch = 2.0 * tm.radii[j] * std::sin(0.5 * da);
        chord2 += ch * ch;
    }
    if (!(chord2 > 0.0)) return 1.0;  // coinciding points
    return std::sqrt(arc2 / chord2);
}

double torus_vs_chordal_check(const TorusModel& tm, int samples, std::mt19937_64& rng) {
    double rad2 = 0.0;
    for (double rho : tm.radii) rad2 += rho * rho;
    if (!(rad2 > 0.0))
        throw std::invalid_argument("torus_vs_chordal_check: needs a circle of positive radius");
    const double pi = std::acos(-1.0);
    std::uniform_real_distribution<double> uni(-pi, pi);
    std::vector<double> dphi(tm.radii.size());
    double max_ratio = 1.0;
    for (int s = 0; s < samples; ++s) {
        for (double& d : dphi) d = uni(rng);
        max_ratio = std::max(max_ratio, torus_arc_chord_ratio(tm, dphi));
    }
    return max_ratio;
}

}  // namespace tubelab
