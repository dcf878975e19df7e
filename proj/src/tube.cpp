#include "tubelab/tube.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tubelab {

namespace {

constexpr double kCountSlack = 1e-12;  // relative slack for boundary orbits

// Generic truncated scan: minimize displacement_closed over k >= 1 where the
// pairing c_k is supplied by a callable.  Stops once k*ell exceeds the
// current minimum (displacement >= |k| ell).
template <typename PairingFn>
double min_displacement(const TubeQuotient& tube, double R, PairingFn&& pairing) {
    const double ell = tube.ell();
    double best = tube.displacement_closed(1, R, pairing(1));
    for (long long k = 2; static_cast<double>(k) * ell <= best; ++k)
        best = std::min(best, tube.displacement_closed(k, R, pairing(k)));
    return best;
}

}  // namespace

TubeQuotient::TubeQuotient(const TubeIsometry& phi, double mu) : phi_(phi), mu_(mu) {
    if (!(mu > 0.0)) throw std::invalid_argument("TubeQuotient: mu must be positive");
    if (phi.ell() < 1e-9)
        throw std::invalid_argument("TubeQuotient: ell below 1e-9 rejected (truncation bound explodes)");
    nf_ = so_normal_form(phi.rot());
    thin_nonempty_ = phi.ell() / 2.0 < mu;
    if (thin_nonempty_) boundary_radius_ = margulis_radius(*this);
}

TubeQuotient::ThetaWeights TubeQuotient::decompose_theta(const Eigen::VectorXd& theta) const {
    const int d = n() - 1;
    if (theta.size() != d) throw std::invalid_argument("decompose_theta: dimension mismatch");
    Eigen::VectorXd w = nf_.q.transpose() * theta;
    ThetaWeights tw;
    int i = 0;
    for (size_t j = 0; j < nf_.angles.size(); ++j, i += 2)
        tw.plane.push_back(w[i] * w[i] + w[i + 1] * w[i + 1]);
    for (int k = 0; k < nf_.flip_dims; ++k, ++i) tw.flip += w[i] * w[i];
    for (int k = 0; k < nf_.fixed_dims; ++k, ++i) tw.fixed += w[i] * w[i];
    return tw;
}

double TubeQuotient::theta_pairing(const ThetaWeights& w, long long k) const {
    double c = w.fixed + (k % 2 == 0 ? w.flip : -w.flip);
    for (size_t j = 0; j < nf_.angles.size(); ++j)
        c += w.plane[j] * std::cos(static_cast<double>(k) * nf_.angles[j]);
    return c;
}

double TubeQuotient::worst_pairing(long long k) const {
    double c = -std::numeric_limits<double>::infinity();
    for (double a : nf_.angles) c = std::max(c, std::cos(static_cast<double>(k) * a));
    if (nf_.fixed_dims > 0) c = std::max(c, 1.0);
    if (nf_.flip_dims > 0) c = std::max(c, k % 2 == 0 ? 1.0 : -1.0);
    return c;
}

double TubeQuotient::displacement_closed(long long k, double R, double c) const {
    // cosh^2 R cosh(k ell) - sinh^2 R c = cosh^2 R (cosh(k ell) - c) + c, and
    // cosh(k ell) - c = 2 sinh^2(k ell / 2) + (1 - c) splits into nonnegative
    // parts: no cancellation at large R or small ell.
    const double ch = std::cosh(R);
    const double sh_half = std::sinh(0.5 * static_cast<double>(k) * ell());
    const double arg = ch * ch * (2.0 * sh_half * sh_half + (1.0 - c)) + c;
    return std::acosh(std::max(1.0, arg));
}

double TubeQuotient::inj_radial_profile(double R) const {
    return 0.5 * min_displacement(*this, R, [this](long long k) { return worst_pairing(k); });
}

Eigen::VectorXd TubeQuotient::worst_direction(double R) const {
    // rescan to find the minimizing k, then pick the direction attaining c*_k
    double best = std::numeric_limits<double>::infinity();
    long long best_k = 1;
    for (long long k = 1; k == 1 || static_cast<double>(k) * ell() <= best; ++k) {
        double d = displacement_closed(k, R, worst_pairing(k));
        if (d < best) {
            best = d;
            best_k = k;
        }
    }
    const double c_star = worst_pairing(best_k);
    int col = -1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < nf_.angles.size(); ++j) {
        double gap = std::abs(std::cos(static_cast<double>(best_k) * nf_.angles[j]) - c_star);
        if (gap < best_gap) {
            best_gap = gap;
            col = static_cast<int>(2 * j);
        }
    }
    if (nf_.fixed_dims > 0 && std::abs(1.0 - c_star) <= best_gap) {
        best_gap = std::abs(1.0 - c_star);
        col = 2 * static_cast<int>(nf_.angles.size()) + nf_.flip_dims;
    }
    if (nf_.flip_dims > 0) {
        double cf = best_k % 2 == 0 ? 1.0 : -1.0;
        if (std::abs(cf - c_star) < best_gap) col = 2 * static_cast<int>(nf_.angles.size());
    }
    if (col < 0) throw std::runtime_error("worst_direction: no eigenvalue class found");
    return nf_.q.col(col);
}

double displacement(const TubeQuotient& tube, long long k, const HPoint& x) {
    return dist(apply_isometry(tube.phi(), k, x), x);
}

double injectivity_radius(const TubeQuotient& tube, const HPoint& x) {
    CylinderCoords c = point_to_cylinder(x);
    if (!c.theta_valid) return tube.ell() / 2.0;  // axis point
    TubeQuotient::ThetaWeights w = tube.decompose_theta(c.theta);
    return 0.5 * min_displacement(tube, c.R,
                                  [&](long long k) { return tube.theta_pairing(w, k); });
}

double margulis_radius(const TubeQuotient& tube) {
    if (!(tube.ell() / 2.0 < tube.mu())) throw empty_thin_part();
    double lo = 0.0, hi = 1.0;
    while (tube.inj_radial_profile(hi) <= tube.mu()) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e4) throw std::runtime_error("margulis_radius: bracket search failed");
    }
    while (hi - lo > 1e-10) {
        double mid = 0.5 * (lo + hi);
        (tube.inj_radial_profile(mid) <= tube.mu() ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

double depth(const TubeQuotient& tube, const HPoint& x) {
    if (!tube.thin_nonempty()) return 0.0;
    return std::max(0.0, tube.boundary_radius() - point_to_cylinder(x).R);
}

long long orbit_count_ambient(const TubeQuotient& tube, const HPoint& x, double r) {
    if (!(r > 0.0)) throw std::invalid_argument("orbit_count_ambient: r must be positive");
    if (r / tube.ell() > 1e8)
        throw std::invalid_argument("orbit_count_ambient: r/ell exceeds 1e8 (truncation too large)");
    CylinderCoords c = point_to_cylinder(x);
    TubeQuotient::ThetaWeights w;
    if (c.theta_valid) w = tube.decompose_theta(c.theta);
    const double rtol = r * (1.0 + kCountSlack) + kCountSlack;
    const long long kmax = static_cast<long long>(std::floor(rtol / tube.ell()));
    long long count = 1;
    for (long long k = 1; k <= kmax; ++k) {
        double ck = c.theta_valid ? tube.theta_pairing(w, k) : 1.0;
        if (tube.displacement_closed(k, c.R, ck) <= rtol) count += 2;
    }
    return count;
}

OrbitCountRecord preimage_bound_check(const TubeQuotient& tube, const HPoint& x) {
    OrbitCountRecord rec;
    rec.n = tube.n();
    rec.ell = tube.ell();
    rec.angles = tube.normal_form().angles;
    for (int i = 0; i < tube.normal_form().flip_dims / 2; ++i)
        rec.angles.push_back(std::acos(-1.0));
    rec.R = point_to_cylinder(x).R;
    rec.r = 1.0;
    rec.count = orbit_count_ambient(tube, x, 1.0);
    rec.inj = injectivity_radius(tube, x);
    rec.depth = depth(tube, x);
    rec.bound_value = std::exp(half_dim_exponent(tube.n()) * rec.depth);
    rec.observed_ratio = static_cast<double>(rec.count) / rec.bound_value;
    return rec;
}

std::optional<RezLengthBound> rez_length_bound_check(const TubeQuotient& tube) {
    if (!tube.thin_nonempty()) return std::nullopt;
    return RezLengthBound{1.0 / tube.ell(),
                          std::exp(half_dim_exponent(tube.n()) * tube.boundary_radius())};
}

}  // namespace tubelab
