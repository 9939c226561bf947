#include "mtlmm/posterior.hpp"

#include <Eigen/Cholesky>

#include "mtlmm/errors.hpp"
#include "mtlmm/linalg.hpp"

namespace mtlmm {

namespace {

Eigen::MatrixXd sigma_inverse(const Eigen::MatrixXd& sigma) {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) {
        throw SingularMatrixError("residual covariance Sigma is not positive definite");
    }
    return llt.solve(Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols()));
}

// A_j = Sigma^-1 (x) Z_j'Z_j, the information contributed by group j.
Eigen::MatrixXd group_information(const GroupBlock& g, const Eigen::MatrixXd& sigma_inv) {
    const Eigen::Index r = sigma_inv.rows();
    const Eigen::Index q = g.Z.cols();
    const Eigen::MatrixXd ztz = g.Z.transpose() * g.Z;
    Eigen::MatrixXd a(q * r, q * r);
    for (Eigen::Index h = 0; h < r; ++h) {
        for (Eigen::Index c = 0; c < r; ++c) {
            a.block(h * q, c * q, q, q) = sigma_inv(h, c) * ztz;
        }
    }
    return a;
}

Eigen::MatrixXd covariance_from_information(const Eigen::MatrixXd& info,
                                            const Eigen::MatrixXd& psi) {
    // Gamma = Psi^{1/2} (I + Psi^{1/2} A Psi^{1/2})^{-1} Psi^{1/2}; equal to
    // (A + Psi^{-1})^{-1} for invertible Psi and its continuous extension on
    // the range of a singular prior (relative eigenvalue cutoff 1e-10).
    const Eigen::Index d = psi.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(psi));
    if (es.info() != Eigen::Success) {
        throw NumericError("eigendecomposition of Psi failed");
    }
    const double max_eig = es.eigenvalues().maxCoeff();
    if (es.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, std::abs(max_eig))) {
        throw SingularMatrixError("random-effects prior Psi is not positive semidefinite");
    }
    const double cutoff = 1e-10 * std::max(max_eig, 0.0);
    Eigen::VectorXd root = es.eigenvalues();
    for (Eigen::Index i = 0; i < d; ++i) {
        root[i] = root[i] > cutoff ? std::sqrt(root[i]) : 0.0;
    }
    const Eigen::MatrixXd half = es.eigenvectors() * root.asDiagonal() *
                                 es.eigenvectors().transpose();
    Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(d, d) + half * info * half;
    Eigen::LLT<Eigen::MatrixXd> llt(inner);
    if (llt.info() != Eigen::Success) {
        throw SingularMatrixError("posterior covariance system is not positive definite");
    }
    return symmetrize(half * llt.solve(half));
}

}  // namespace

Eigen::MatrixXd posterior_covariance(const GroupBlock& group, const ModelParams& params) {
    const Eigen::Index q = group.Z.cols();
    const Eigen::Index r = group.Y.cols();
    if (params.Psi.rows() != q * r || params.Sigma.rows() != r) {
        throw ShapeError("parameter dimensions do not match the group block");
    }
    const Eigen::MatrixXd sigma_inv = sigma_inverse(params.Sigma);
    return covariance_from_information(group_information(group, sigma_inv), params.Psi);
}

Eigen::VectorXd posterior_mean(const GroupBlock& group, const ModelParams& params,
                               const Eigen::MatrixXd& gamma) {
    const Eigen::MatrixXd sigma_inv = sigma_inverse(params.Sigma);
    const Eigen::MatrixXd resid = group.Y - group.X * params.B;
    const Eigen::MatrixXd scaled = group.Z.transpose() * resid * sigma_inv;  // q x r
    const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(scaled.data(), scaled.size());
    if (gamma.rows() != rhs.size()) {
        throw ShapeError("posterior covariance does not match qr dimension");
    }
    return gamma * rhs;
}

Eigen::MatrixXd posterior_second_moment(const Eigen::MatrixXd& gamma,
                                        const Eigen::VectorXd& mean) {
    if (gamma.rows() != mean.size() || gamma.cols() != mean.size()) {
        throw ShapeError("gamma and mean dimensions disagree");
    }
    return gamma + mean * mean.transpose();
}

PosteriorMoments e_step(const GroupedDataset& data, const ModelParams& params) {
    params.validate_shapes(data.dims);
    const Eigen::MatrixXd sigma_inv = sigma_inverse(params.Sigma);

    PosteriorMoments out;
    out.groups.reserve(data.groups.size());
    for (const auto& g : data.groups) {
        GroupMoments m;
        m.gamma = covariance_from_information(group_information(g, sigma_inv), params.Psi);
        const Eigen::MatrixXd scaled = g.Z.transpose() * (g.Y - g.X * params.B) * sigma_inv;
        const Eigen::VectorXd rhs =
            Eigen::Map<const Eigen::VectorXd>(scaled.data(), scaled.size());
        m.mean = m.gamma * rhs;
        m.second_moment = posterior_second_moment(m.gamma, m.mean);
        out.groups.push_back(std::move(m));
    }
    return out;
}

}  // namespace mtlmm
