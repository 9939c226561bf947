#pragma once

#include <Eigen/Dense>

namespace mtlmm {

/// (M + M') / 2, applied after covariance updates to suppress drift.
Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

/// True if ||M - M'||_max <= tol.
bool is_symmetric(const Eigen::MatrixXd& m, double tol = 1e-10);

/// Symmetric PSD square root via eigendecomposition, eigenvalues floored
/// at `floor` before taking the root.
Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m, double floor = 1e-12);

/// Symmetric inverse square root; eigenvalues floored at `floor`.
Eigen::MatrixXd sym_inv_sqrt(const Eigen::MatrixXd& m, double floor = 1e-12);

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix. Eigenvalues
/// below cutoff * max(eigenvalue) are treated as exact zeros.
Eigen::MatrixXd sym_pseudo_inverse(const Eigen::MatrixXd& m, double cutoff = 1e-10);

/// Nearest PSD projection: eigenvalues clipped at 0. Returns the projected
/// matrix; *projected (when non-null) reports whether clipping occurred.
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m, bool* projected = nullptr,
                            double tol = 1e-10);

/// Factor L with m = L L' and L of size n x rank, from the eigendecomposition
/// of a symmetric PSD matrix. Eigenvalues below cutoff * max(eig, 1) are dropped.
Eigen::MatrixXd psd_half_factor(const Eigen::MatrixXd& m, double cutoff = 1e-14);

/// Graph Laplacian D_G - G of a nonnegative symmetric adjacency matrix.
Eigen::MatrixXd graph_laplacian(const Eigen::MatrixXd& g);

}  // namespace mtlmm
