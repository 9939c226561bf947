#pragma once

#include <Eigen/Dense>
#include <string>

#include "mtlmm/types.hpp"

namespace mtlmm {

/// Marginal log-likelihood of the grouped multitask mixed model:
/// sum over groups of the Gaussian log-density of vec(Y_j) with mean
/// (I_r (x) X_j) vec(B) and covariance
/// V_j = (I_r (x) Z_j) Psi (I_r (x) Z_j)' + Sigma (x) I_{n_j}.
///
/// Evaluated with the Woodbury identity so only r x r and qr x qr systems
/// are factored; the n_j r x n_j r matrix V_j is never formed. Normalizing
/// constant is -(n_j r / 2) log 2 pi per group. Psi may be singular PSD.
///
/// Throws SingularMatrixError when Sigma (hence V_j) is not positive
/// definite and ShapeError on dimension mismatch.
double marginal_loglik(const GroupedDataset& data, const ModelParams& params);

/// Penalty value p(B; lambda, ...) for the chosen family. Row 1 of B (the
/// intercepts) is always excluded. For the network-regularized family the
/// quadratic terms use graph Laplacians D_G - G on the intercept-free block.
double penalty_value(const Eigen::MatrixXd& B, const PenaltySpec& spec);

/// marginal_loglik(data, params) - penalty_value(params.B, spec).
double penalized_loglik(const GroupedDataset& data, const ModelParams& params,
                        const PenaltySpec& spec);

/// Population-level prediction X_new * B (random effect at its zero prior mean).
Eigen::MatrixXd predict(const Eigen::MatrixXd& X_new, const ModelParams& params);

/// Group-level prediction X_new * B + Z_new * Lambda_j for a known group.
/// Throws MissingGroupError when the label is not present in `blups`.
Eigen::MatrixXd predict(const Eigen::MatrixXd& X_new, const Eigen::MatrixXd& Z_new,
                        const ModelParams& params, const RandomEffects& blups,
                        const std::string& group);

}  // namespace mtlmm
