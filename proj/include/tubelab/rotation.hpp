#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

namespace tubelab {

// Block-diagonal normal form of a special orthogonal matrix:
//   rot = q * blockdiag(R(angles[0]), ..., R(angles[m-1]), -1...(flip), +1...(fixed)) * q^T
// with R(a) = [[cos a, -sin a], [sin a, cos a]], angles in (-pi, pi] sorted by
// decreasing |angle|, and 2m + flip_dims + fixed_dims = dim.  flip_dims is the
// multiplicity of the eigenvalue -1 (always even for determinant +1).
struct RotationNormalForm {
    Eigen::MatrixXd q;           // orthogonal, columns ordered as above
    std::vector<double> angles;  // m rotation angles
    int fixed_dims = 0;
    int flip_dims = 0;

    int dim() const { return static_cast<int>(q.rows()); }
    // Rebuild the block-diagonal middle factor.
    Eigen::MatrixXd block_matrix() const;
    // q * block * q^T; reconstruction error is checked at construction.
    Eigen::MatrixXd reconstruct() const;
};

// Compute the normal form via the real Schur decomposition (orthogonal
// matrices are normal, so the quasi-triangular factor is block diagonal).
// Rejects inputs that are not orthogonal within 1e-10 or have determinant
// other than +1 (reflections), and verifies reconstruction within 1e-9.
RotationNormalForm so_normal_form(const Eigen::MatrixXd& rot);

// Block-diagonal rotation of size dim from explicit angles: planes first, the
// remaining dims fixed.  Requires 2*angles.size() <= dim.
Eigen::MatrixXd rotation_from_angles(int dim, const std::vector<double>& angles);

// Haar-ish random special orthogonal matrix (QR of a Gaussian matrix with the
// sign ambiguity fixed and determinant corrected to +1).
Eigen::MatrixXd random_so(int dim, std::mt19937_64& rng);

// Principal angular distance: |a mod 2pi| folded into [0, pi].
double angdist(double a);

}  // namespace tubelab
