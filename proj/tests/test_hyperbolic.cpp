#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tubelab/hyperbolic.hpp"
#include "tubelab/rotation.hpp"

using namespace tubelab;

namespace {

Eigen::VectorXd random_unit(int d, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd v(d);
    do {
        for (int i = 0; i < d; ++i) v[i] = gauss(rng);
    } while (v.norm() < 1e-6);
    return v / v.norm();
}

CylinderCoords random_cyl(int n, std::mt19937_64& rng, double rmax = 3.0) {
    std::uniform_real_distribution<double> ur(0.05, rmax), ut(-3.0, 3.0);
    CylinderCoords c;
    c.R = ur(rng);
    c.theta = random_unit(n - 1, rng);
    c.t = ut(rng);
    return c;
}

HPoint random_point(int n, std::mt19937_64& rng, double rmax = 3.0) {
    return cylinder_to_point(random_cyl(n, rng, rmax));
}

HPoint basepoint(int n) {
    HPoint x;
    x.coords = Eigen::VectorXd::Zero(n + 1);
    x.coords[0] = 1.0;
    return x;
}

}  // namespace

TEST_CASE("minkowski pairing basics") {
    HPoint b = basepoint(4);
    CHECK(mink_inner(b, b) == doctest::Approx(-1.0).epsilon(1e-12));
    for (double t : {-2.0, -0.3, 0.0, 1.7}) {
        CHECK(mink_inner(b, axis_point(4, t)) == doctest::Approx(-std::cosh(t)).epsilon(1e-12));
    }
    std::mt19937_64 rng(11);
    for (int i = 0; i < 1000; ++i) {
        HPoint x = random_point(5, rng), y = random_point(5, rng);
        CHECK(on_hyperboloid(x));
        CHECK(mink_inner(x, y) <= -1.0 + 1e-12);
        CHECK(mink_inner(x, x) == doctest::Approx(-1.0).epsilon(1e-9));
    }
}

TEST_CASE("distance basics") {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 200; ++i) {
        HPoint x = random_point(4, rng);
        CHECK(dist(x, x) == 0.0);
    }
    for (double t1 : {-1.5, 0.0, 2.0})
        for (double t2 : {-2.0, 0.25})
            CHECK(dist(axis_point(6, t1), axis_point(6, t2)) ==
                  doctest::Approx(std::abs(t1 - t2)).epsilon(1e-12));
    // cylinder point at radius R vs its axis foot
    for (int i = 0; i < 200; ++i) {
        CylinderCoords c = random_cyl(5, rng);
        CHECK(dist(cylinder_to_point(c), axis_point(5, c.t)) == doctest::Approx(c.R).epsilon(1e-10));
    }
}

TEST_CASE("distance symmetry and triangle inequality") {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 2000; ++i) {
        HPoint x = random_point(4, rng), y = random_point(4, rng), z = random_point(4, rng);
        CHECK(dist(x, y) == doctest::Approx(dist(y, x)).epsilon(1e-12));
        CHECK(dist(x, z) <= dist(x, y) + dist(y, z) + 1e-9);
    }
}

TEST_CASE("cylinder chart round trips") {
    std::mt19937_64 rng(14);
    for (int i = 0; i < 1000; ++i) {
        CylinderCoords c = random_cyl(6, rng);
        CylinderCoords back = point_to_cylinder(cylinder_to_point(c));
        REQUIRE(back.theta_valid);
        CHECK(std::abs(back.R - c.R) < 1e-10);
        CHECK(std::abs(back.t - c.t) < 1e-10);
        CHECK((back.theta - c.theta).norm() < 1e-10);
        HPoint p = cylinder_to_point(back);
        CHECK((p.coords - cylinder_to_point(c).coords).norm() < 1e-10);
    }
    // axis points flag theta as invalid and report R = 0
    CylinderCoords ax = point_to_cylinder(axis_point(4, 0.7));
    CHECK_FALSE(ax.theta_valid);
    CHECK(ax.R == 0.0);
    CHECK(ax.t == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("axis foot minimizes distance at t = c.t") {
    std::mt19937_64 rng(15);
    for (int i = 0; i < 100; ++i) {
        CylinderCoords c = random_cyl(4, rng);
        HPoint p = cylinder_to_point(c);
        double d0 = dist(p, axis_point(4, c.t));
        CHECK(d0 == doctest::Approx(c.R).epsilon(1e-9));
        for (double dt : {-0.5, -0.01, 0.01, 0.5})
            CHECK(dist(p, axis_point(4, c.t + dt)) >= d0 - 1e-12);
    }
}

TEST_CASE("tube isometry construction and validation") {
    std::mt19937_64 rng(16);
    Eigen::MatrixXd r3 = random_so(3, rng);
    CHECK_NOTHROW(TubeIsometry(4, 0.5, r3));
    CHECK_THROWS_AS(TubeIsometry(4, 0.0, r3), std::invalid_argument);
    CHECK_THROWS_AS(TubeIsometry(4, -1.0, r3), std::invalid_argument);
    CHECK_THROWS_AS(TubeIsometry(5, 0.5, r3), std::invalid_argument);  // wrong size
    // non-orthogonal beyond 1e-10 rejected
    Eigen::MatrixXd bad = r3;
    bad(0, 0) += 1e-6;
    CHECK_THROWS_AS(TubeIsometry(4, 0.5, bad), std::invalid_argument);
    // det = -1 rejected
    Eigen::MatrixXd refl = Eigen::MatrixXd::Identity(3, 3);
    refl(0, 0) = -1.0;
    CHECK_THROWS_AS(TubeIsometry(4, 0.5, refl), std::invalid_argument);
    // drift in (1e-12, 1e-10] is re-orthonormalized
    Eigen::MatrixXd drifty = r3;
    drifty(0, 0) += 3e-11;
    TubeIsometry phi(4, 0.5, drifty);
    CHECK((phi.rot().transpose() * phi.rot() - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("rotation powers") {
    std::mt19937_64 rng(17);
    TubeIsometry phi(6, 0.3, random_so(5, rng));
    Eigen::MatrixXd r = phi.rot();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(5, 5);
    for (int k = 0; k <= 12; ++k) {
        CHECK((phi.rot_power(k) - acc).cwiseAbs().maxCoeff() < 1e-11);
        CHECK((phi.rot_power(-k) - acc.transpose()).cwiseAbs().maxCoeff() < 1e-11);
        acc = acc * r;
    }
    CHECK((phi.rot_power(7) * phi.rot_power(-3) - phi.rot_power(4)).cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("isometry action: identity, axis translation, cylinder form") {
    std::mt19937_64 rng(18);
    TubeIsometry phi(5, 0.4, random_so(4, rng));
    HPoint x = random_point(5, rng);
    CHECK((apply_isometry(phi, 0, x).coords - x.coords).norm() == 0.0);
    // axis point at t=0, k=3 -> axis point at 3*ell
    HPoint moved = apply_isometry(phi, 3, axis_point(5, 0.0));
    CHECK((moved.coords - axis_point(5, 3 * 0.4).coords).norm() < 1e-12);
    // cylinder action (R, theta, t) -> (R, rot^k theta, t + k ell)
    for (int i = 0; i < 200; ++i) {
        CylinderCoords c = random_cyl(5, rng);
        for (long long k : {-5LL, -1LL, 1LL, 2LL, 9LL}) {
            CylinderCoords img = point_to_cylinder(apply_isometry(phi, k, cylinder_to_point(c)));
            REQUIRE(img.theta_valid);
            CHECK(std::abs(img.R - c.R) < 1e-9);
            CHECK(std::abs(img.t - (c.t + static_cast<double>(k) * phi.ell())) < 1e-9);
            CHECK((img.theta - phi.rot_power(k) * c.theta).norm() < 1e-9);
        }
    }
}

TEST_CASE("isometry invariance and group law") {
    std::mt19937_64 rng(19);
    TubeIsometry phi(4, 0.25, random_so(3, rng));
    for (int i = 0; i < 2000; ++i) {
        HPoint x = random_point(4, rng), y = random_point(4, rng);
        CHECK(std::abs(mink_inner(apply_isometry(phi, 4, x), apply_isometry(phi, 4, y)) -
                       mink_inner(x, y)) < 1e-9);
        CHECK(std::abs(dist(apply_isometry(phi, -2, x), apply_isometry(phi, -2, y)) - dist(x, y)) <
              1e-9);
    }
    HPoint x = random_point(4, rng);
    HPoint a = apply_isometry(phi, 2, apply_isometry(phi, 5, x));
    HPoint b = apply_isometry(phi, 7, x);
    CHECK((a.coords - b.coords).norm() < 1e-10);
}

TEST_CASE("cylinder intrinsic distance") {
    std::mt19937_64 rng(20);
    // same theta, axial offset ell -> ell * cosh R
    for (double R : {0.5, 2.0, 4.0}) {
        CylinderCoords c1, c2;
        c1.R = c2.R = R;
        c1.theta = c2.theta = random_unit(4, rng);
        c1.t = 0.3;
        c2.t = 0.3 + 0.7;
        CHECK(cylinder_intrinsic_dist(R, c1, c2) == doctest::Approx(0.7 * std::cosh(R)).epsilon(1e-12));
        // antipodal theta, same t -> half great circle
        c2.t = c1.t;
        c2.theta = -c1.theta;
        CHECK(cylinder_intrinsic_dist(R, c1, c2) ==
              doctest::Approx(std::acos(-1.0) * std::sinh(R)).epsilon(1e-12));
    }
    // mismatched radii rejected
    CylinderCoords m1 = random_cyl(5, rng), m2 = random_cyl(5, rng);
    m1.R = 1.0;
    m2.R = 1.5;
    CHECK_THROWS_AS(cylinder_intrinsic_dist(1.0, m1, m2), std::invalid_argument);
    // dominates the ambient distance
    for (int i = 0; i < 10000; ++i) {
        CylinderCoords c1 = random_cyl(4, rng), c2 = random_cyl(4, rng);
        c2.R = c1.R;
        double intrinsic = cylinder_intrinsic_dist(c1.R, c1, c2);
        double ambient = dist(cylinder_to_point(c1), cylinder_to_point(c2));
        CHECK(intrinsic >= ambient - 1e-9);
    }
    // equality on the degenerate cylinder R = 0 (axis line)
    CylinderCoords a1, a2;
    a1.R = a2.R = 0.0;
    a1.theta = a2.theta = random_unit(3, rng);
    a1.t = -0.2;
    a2.t = 1.1;
    CHECK(cylinder_intrinsic_dist(0.0, a1, a2) == doctest::Approx(1.3).epsilon(1e-12));
}

TEST_CASE("radial comparison bounds") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> urp(2.0, 8.0), gap(0.0, 4.0);
    for (int i = 0; i < 10000; ++i) {
        double rp = urp(rng), R = rp + gap(rng);
        CylinderCoords c1 = random_cyl(5, rng), c2 = random_cyl(5, rng);
        RadialComparison rc = radial_comparison(rp, R, c1, c2);
        CHECK(rc.d_low <= rc.d_high + 1e-12);
        CHECK(rc.d_high <= kRadialComparisonC0 * std::exp(R - rp) * rc.d_low + 1e-12);
    }
    // R == R' collapses
    CylinderCoords c1 = random_cyl(4, rng), c2 = random_cyl(4, rng);
    RadialComparison eq = radial_comparison(3.0, 3.0, c1, c2);
    CHECK(eq.d_low == eq.d_high);
    // pure axial pair: exact ratio cosh R / cosh R'
    CylinderCoords a1 = c1, a2 = c1;
    a2.t = c1.t + 1.0;
    RadialComparison ax = radial_comparison(2.5, 4.0, a1, a2);
    CHECK(ax.d_high / ax.d_low == doctest::Approx(std::cosh(4.0) / std::cosh(2.5)).epsilon(1e-12));
    CHECK(ax.d_high / ax.d_low <= std::exp(4.0 - 2.5));
    CHECK_THROWS_AS(radial_comparison(1.5, 3.0, c1, c2), std::invalid_argument);
    CHECK_THROWS_AS(radial_comparison(3.0, 2.5, c1, c2), std::invalid_argument);
}

TEST_CASE("angular Lipschitz factor stays below the pinned constant") {
    // sup over R' >= 2 of (sinh R / sinh R') * exp(R' - R) = 1/(1 - exp(-4))
    double sup = 0.0;
    for (double rp = 2.0; rp <= 20.0; rp += 0.01)
        for (double d = 0.0; d <= 6.0; d += 0.05) {
            double ratio = std::sinh(rp + d) / std::sinh(rp) * std::exp(-d);
            sup = std::max(sup, ratio);
        }
    CHECK(sup == doctest::Approx(1.0 / (1.0 - std::exp(-4.0))).epsilon(1e-6));
    CHECK(sup < kRadialComparisonC0);
}

TEST_CASE("monotonicity of intrinsic distance in R") {
    std::mt19937_64 rng(22);
    for (int i = 0; i < 500; ++i) {
        CylinderCoords c1 = random_cyl(4, rng), c2 = random_cyl(4, rng);
        double prev = 0.0;
        for (double R = 2.0; R < 6.0; R += 0.25) {
            c1.R = c2.R = R;
            double d = cylinder_intrinsic_dist(R, c1, c2);
            CHECK(d >= prev - 1e-12);
            prev = d;
        }
    }
}

TEST_CASE("counting exponent") {
    CHECK(half_dim_exponent(4) == 2);
    CHECK(half_dim_exponent(5) == 3);
    CHECK(half_dim_exponent(6) == 3);
    CHECK(half_dim_exponent(13) == 7);
}
