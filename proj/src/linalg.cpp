#include "mtlmm/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "mtlmm/errors.hpp"

namespace mtlmm {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
    return 0.5 * (m + m.transpose());
}

bool is_symmetric(const Eigen::MatrixXd& m, double tol) {
    if (m.rows() != m.cols()) return false;
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

namespace {

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_sym(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) {
        throw ShapeError("eigendecomposition requires a square matrix");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(m));
    if (es.info() != Eigen::Success) {
        throw NumericError("symmetric eigendecomposition failed");
    }
    return es;
}

}  // namespace

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m, double floor) {
    auto es = eig_sym(m);
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(floor).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd sym_inv_sqrt(const Eigen::MatrixXd& m, double floor) {
    auto es = eig_sym(m);
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd sym_pseudo_inverse(const Eigen::MatrixXd& m, double cutoff) {
    auto es = eig_sym(m);
    const double max_eig = es.eigenvalues().cwiseAbs().maxCoeff();
    const double thresh = cutoff * std::max(max_eig, 0.0);
    Eigen::VectorXd d = es.eigenvalues();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        d[i] = (d[i] > thresh) ? 1.0 / d[i] : 0.0;
    }
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m, bool* projected, double tol) {
    auto es = eig_sym(m);
    bool clipped = es.eigenvalues().minCoeff() < -tol;
    if (projected) *projected = clipped;
    if (!clipped) return symmetrize(m);
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0);
    return symmetrize(es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose());
}

Eigen::MatrixXd psd_half_factor(const Eigen::MatrixXd& m, double cutoff) {
    auto es = eig_sym(m);
    const double max_eig = std::max(es.eigenvalues().maxCoeff(), 1.0);
    const double thresh = cutoff * max_eig;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        if (es.eigenvalues()[i] > thresh) ++rank;
    }
    Eigen::MatrixXd half(m.rows(), rank);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        if (es.eigenvalues()[i] > thresh) {
            half.col(k++) = es.eigenvectors().col(i) * std::sqrt(es.eigenvalues()[i]);
        }
    }
    return half;
}

Eigen::MatrixXd graph_laplacian(const Eigen::MatrixXd& g) {
    if (g.rows() != g.cols()) {
        throw ShapeError("adjacency matrix must be square");
    }
    Eigen::VectorXd degree = g.rowwise().sum();
    Eigen::MatrixXd lap = -g;
    lap.diagonal() += degree;
    return lap;
}

}  // namespace mtlmm
