#include "tubelab/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tubelab {

Eigen::MatrixXd RotationNormalForm::block_matrix() const {
    const int d = dim();
    Eigen::MatrixXd b = Eigen::MatrixXd::Identity(d, d);
    int i = 0;
    for (double a : angles) {
        const double c = std::cos(a), s = std::sin(a);
        b(i, i) = c;
        b(i, i + 1) = -s;
        b(i + 1, i) = s;
        b(i + 1, i + 1) = c;
        i += 2;
    }
    for (int k = 0; k < flip_dims; ++k, ++i) b(i, i) = -1.0;
    return b;
}

Eigen::MatrixXd RotationNormalForm::reconstruct() const {
    return q * block_matrix() * q.transpose();
}

RotationNormalForm so_normal_form(const Eigen::MatrixXd& rot) {
    const int d = static_cast<int>(rot.rows());
    if (d < 1 || rot.cols() != d) throw std::invalid_argument("so_normal_form: square input required");
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    if ((rot.transpose() * rot - eye).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("so_normal_form: input not orthogonal within 1e-10");
    if (std::abs(rot.determinant() - 1.0) > 1e-10)
        throw std::invalid_argument("so_normal_form: determinant must be +1 (reflections rejected)");

    Eigen::RealSchur<Eigen::MatrixXd> schur(rot);
    const Eigen::MatrixXd& t = schur.matrixT();
    const Eigen::MatrixXd& u = schur.matrixU();

    struct Plane {
        double angle;
        int col;  // first of two consecutive columns in u
    };
    std::vector<Plane> planes;
    std::vector<int> fixed_cols, flip_cols;
    int i = 0;
    while (i < d) {
        if (i + 1 < d && std::abs(t(i + 1, i)) > 1e-12) {
            // 2x2 block of a normal matrix: [[c, -s], [s, c]] up to round-off
            double c = 0.5 * (t(i, i) + t(i + 1, i + 1));
            double s = 0.5 * (t(i + 1, i) - t(i, i + 1));
            planes.push_back({std::atan2(s, c), i});
            i += 2;
        } else {
            (t(i, i) > 0.0 ? fixed_cols : flip_cols).push_back(i);
            i += 1;
        }
    }
    std::stable_sort(planes.begin(), planes.end(), [](const Plane& a, const Plane& b) {
        return std::abs(a.angle) > std::abs(b.angle);
    });

    RotationNormalForm nf;
    nf.q = Eigen::MatrixXd(d, d);
    int col = 0;
    for (const Plane& p : planes) {
        nf.q.col(col++) = u.col(p.col);
        nf.q.col(col++) = u.col(p.col + 1);
        nf.angles.push_back(p.angle);
    }
    for (int fc : flip_cols) nf.q.col(col++) = u.col(fc);
    for (int fc : fixed_cols) nf.q.col(col++) = u.col(fc);
    nf.flip_dims = static_cast<int>(flip_cols.size());
    nf.fixed_dims = static_cast<int>(fixed_cols.size());

    if ((nf.reconstruct() - rot).cwiseAbs().maxCoeff() > 1e-9)
        throw std::runtime_error("so_normal_form: reconstruction failed beyond 1e-9");
    return nf;
}

Eigen::MatrixXd rotation_from_angles(int dim, const std::vector<double>& angles) {
    if (2 * static_cast<int>(angles.size()) > dim)
        throw std::invalid_argument("rotation_from_angles: too many angles for dimension");
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(dim, dim);
    int i = 0;
    for (double a : angles) {
        const double c = std::cos(a), s = std::sin(a);
        m(i, i) = c;
        m(i, i + 1) = -s;
        m(i + 1, i) = s;
        m(i + 1, i + 1) = c;
        i += 2;
    }
    return m;
}

Eigen::MatrixXd random_so(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd g(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) g(i, j) = gauss(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int i = 0; i < dim; ++i)
        if (r(i, i) < 0.0) q.col(i) = -q.col(i);
    if (q.determinant() < 0.0) q.col(dim - 1) = -q.col(dim - 1);
    return q;
}

double angdist(double a) {
    const double two_pi = 2.0 * std::numbers::pi;
    double m = std::fmod(std::abs(a), two_pi);
    return std::min(m, two_pi - m);
}

}  // namespace tubelab
