#include "tubelab/hyperbolic.hpp"

#include <cmath>
#include <stdexcept>

namespace tubelab {

namespace {

void check_same_dim(const HPoint& x, const HPoint& y) {
    if (x.coords.size() != y.coords.size())
        throw std::invalid_argument("hyperboloid points of mismatched dimension");
}

}  // namespace

TubeIsometry::TubeIsometry(int n, double ell, const Eigen::MatrixXd& rot)
    : n_(n), ell_(ell), rot_(rot) {
    if (n < 2) throw std::invalid_argument("TubeIsometry: need n >= 2");
    if (!(ell > 0.0)) throw std::invalid_argument("TubeIsometry: translation length must be positive");
    if (rot_.rows() != n - 1 || rot_.cols() != n - 1)
        throw std::invalid_argument("TubeIsometry: rotation must be (n-1)x(n-1)");
    const int d = n - 1;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    double drift = (rot_.transpose() * rot_ - eye).cwiseAbs().maxCoeff();
    if (drift > 1e-10)
        throw std::invalid_argument("TubeIsometry: rotation not orthogonal within 1e-10");
    if (drift > 1e-12) {
        // polar decomposition: nearest orthogonal matrix
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(rot_, Eigen::ComputeFullU | Eigen::ComputeFullV);
        rot_ = svd.matrixU() * svd.matrixV().transpose();
    }
    if (std::abs(rot_.determinant() - 1.0) > 1e-10)
        throw std::invalid_argument("TubeIsometry: rotation must have determinant +1");
}

Eigen::MatrixXd TubeIsometry::rot_power(long long k) const {
    const int d = n_ - 1;
    Eigen::MatrixXd base = k >= 0 ? rot_ : Eigen::MatrixXd(rot_.transpose());
    unsigned long long e = k >= 0 ? static_cast<unsigned long long>(k)
                                  : static_cast<unsigned long long>(-(k + 1)) + 1ULL;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(d, d);
    while (e > 0) {
        if (e & 1ULL) acc = acc * base;
        base = base * base;
        e >>= 1;
    }
    return acc;
}

double mink_inner(const HPoint& x, const HPoint& y) {
    check_same_dim(x, y);
    double s = -x.coords[0] * y.coords[0];
    for (int i = 1; i < x.coords.size(); ++i) s += x.coords[i] * y.coords[i];
    return s;
}

double dist(const HPoint& x, const HPoint& y) {
    check_same_dim(x, y);
    // -<x,y> = 1 + <x-y, x-y>/2 on the hyperboloid; the difference form is
    // cancellation-free for close points (and exactly 0 for equal ones),
    // where acosh near 1 would amplify round-off by 1/sqrt(u).
    Eigen::VectorXd d = x.coords - y.coords;
    double q = -d[0] * d[0] + d.tail(d.size() - 1).squaredNorm();
    double u = std::max(0.0, 0.5 * q);
    return std::log1p(u + std::sqrt(u * (u + 2.0)));  // acosh(1 + u)
}

bool on_hyperboloid(const HPoint& x, double tol) {
    if (x.coords.size() < 3) return false;
    if (x.coords[0] < 1.0 - tol) return false;
    double q = -x.coords[0] * x.coords[0] + x.coords.tail(x.coords.size() - 1).squaredNorm();
    return std::abs(q + 1.0) <= tol;
}

HPoint axis_point(int n, double t) {
    HPoint x;
    x.coords = Eigen::VectorXd::Zero(n + 1);
    x.coords[0] = std::cosh(t);
    x.coords[1] = std::sinh(t);
    return x;
}

HPoint cylinder_to_point(const CylinderCoords& c) {
    const int nm1 = static_cast<int>(c.theta.size());
    if (nm1 < 2) throw std::invalid_argument("cylinder_to_point: theta must have dimension n-1 >= 2");
    if (c.R < 0.0) throw std::invalid_argument("cylinder_to_point: R must be nonnegative");
    if (c.R > 1e-12 && std::abs(c.theta.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("cylinder_to_point: theta must be a unit vector");
    HPoint x;
    x.coords = Eigen::VectorXd::Zero(nm1 + 2);
    const double ch = std::cosh(c.R), sh = std::sinh(c.R);
    x.coords[0] = ch * std::cosh(c.t);
    x.coords[1] = ch * std::sinh(c.t);
    x.coords.tail(nm1) = sh * c.theta;
    return x;
}

CylinderCoords point_to_cylinder(const HPoint& x) {
    const int n = x.dim();
    if (n < 3) throw std::invalid_argument("point_to_cylinder: need n >= 3");
    CylinderCoords c;
    const Eigen::VectorXd v = x.coords.tail(n - 1);
    const double sh = v.norm();          // sinh R
    const double ch = std::hypot(1.0, sh);  // cosh R, from -x0^2 + x1^2 + |v|^2 = -1
    c.R = std::asinh(sh);
    c.t = std::asinh(x.coords[1] / ch);
    if (sh <= 1e-12) {
        c.R = 0.0;
        c.theta = Eigen::VectorXd::Zero(n - 1);
        c.theta_valid = false;
    } else {
        c.theta = v / sh;
        c.theta_valid = true;
    }
    return c;
}

HPoint apply_isometry(const TubeIsometry& phi, long long k, const HPoint& x) {
    if (x.dim() != phi.n())
        throw std::invalid_argument("apply_isometry: dimension mismatch");
    const double s = static_cast<double>(k) * phi.ell();
    const double ch = std::cosh(s), sh = std::sinh(s);
    HPoint y;
    y.coords = Eigen::VectorXd(x.coords.size());
    y.coords[0] = ch * x.coords[0] + sh * x.coords[1];
    y.coords[1] = sh * x.coords[0] + ch * x.coords[1];
    y.coords.tail(phi.n() - 1) = phi.rot_power(k) * x.coords.tail(phi.n() - 1);
    return y;
}

double cylinder_intrinsic_dist(double R, const CylinderCoords& c1, const CylinderCoords& c2) {
    if (!(R >= 0.0)) throw std::invalid_argument("cylinder_intrinsic_dist: R must be nonnegative");
    if (std::abs(c1.R - R) > 1e-9 || std::abs(c2.R - R) > 1e-9)
        throw std::invalid_argument("cylinder_intrinsic_dist: points must lie on the cylinder of radius R");
    if (!c1.theta_valid || !c2.theta_valid)
        throw std::invalid_argument("cylinder_intrinsic_dist: theta must be valid");
    if (c1.theta.size() != c2.theta.size())
        throw std::invalid_argument("cylinder_intrinsic_dist: dimension mismatch");
    double cosang = c1.theta.dot(c2.theta) / (c1.theta.norm() * c2.theta.norm());
    double ang = std::acos(std::min(1.0, std::max(-1.0, cosang)));
    return std::hypot(std::sinh(R) * ang, std::cosh(R) * (c1.t - c2.t));
}

RadialComparison radial_comparison(double R_prime, double R, const CylinderCoords& c1,
                                   const CylinderCoords& c2) {
    if (R_prime < 2.0)
        throw std::invalid_argument("radial_comparison: requires R_prime >= 2");
    if (R < R_prime)
        throw std::invalid_argument("radial_comparison: requires R_prime <= R");
    // the projection fixes (theta, t); evaluate the pair on both cylinders
    CylinderCoords a1 = c1, a2 = c2;
    a1.R = a2.R = R_prime;
    RadialComparison out;
    out.d_low = cylinder_intrinsic_dist(R_prime, a1, a2);
    a1.R = a2.R = R;
    out.d_high = cylinder_intrinsic_dist(R, a1, a2);
    return out;
}

}  // namespace tubelab
