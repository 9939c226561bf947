#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mtlmm/types.hpp"

namespace mtlmm {

/// Closed-form conditional moments of one group's random effect given the
/// data and current parameters.
struct GroupMoments {
    Eigen::MatrixXd gamma;          // qr x qr posterior covariance
    Eigen::VectorXd mean;           // length-qr posterior mean, vec form
    Eigen::MatrixXd second_moment;  // gamma + mean * mean'
};

struct PosteriorMoments {
    std::vector<GroupMoments> groups;
};

/// Posterior covariance [Sigma^-1 (x) Z_j'Z_j + Psi^-1]^-1, computed
/// without forming any n_j r-dimensional matrix. A singular PSD prior is
/// handled through its symmetric square root, which reproduces the
/// pseudo-inverse reduction on the range of Psi and keeps the posterior
/// covariance dominated by the prior.
Eigen::MatrixXd posterior_covariance(const GroupBlock& group, const ModelParams& params);

/// Posterior mean Gamma_j * vec(Z_j'(Y_j - X_j B) Sigma^-1).
Eigen::VectorXd posterior_mean(const GroupBlock& group, const ModelParams& params,
                               const Eigen::MatrixXd& gamma);

/// R_j = Gamma_j + mean * mean'.
Eigen::MatrixXd posterior_second_moment(const Eigen::MatrixXd& gamma,
                                        const Eigen::VectorXd& mean);

/// Full E-step over all groups, in group order.
PosteriorMoments e_step(const GroupedDataset& data, const ModelParams& params);

}  // namespace mtlmm
