#pragma once

#include <Eigen/Dense>

#include "mtlmm/types.hpp"

namespace mtlmm {

struct SolverConfig {
    int max_sweeps = 1000;
    double tol = 1e-7;       // max absolute coefficient change per sweep
    bool active_set = true;  // active-set sweeps after the first full pass
};

struct SolverSolution {
    Eigen::MatrixXd B;             // p x r coefficients, intercept in row 1
    int sweeps_used = 0;
    double objective = 0.0;        // 0.5 * ||Y - XB||_F^2 + penalty
    double kkt_residual = 0.0;     // max violation of the stationarity conditions
    bool converged = false;
    bool zero_variance_columns = false;
};

/// sign(z) * max(|z| - gamma, 0).
double soft_threshold(double z, double gamma);

/// max(1 - gamma/||v||, 0) * v; the zero vector maps to itself.
Eigen::VectorXd group_soft_threshold(const Eigen::VectorXd& v, double gamma);

/// Penalized multitask least squares
///   min_B 0.5 * sum_j ||Y_j - X_j B||_F^2 + p(B; lambda)
/// on the stacked system (X: N x p with intercept column 1; Y: N x r), by
/// cyclic coordinate descent with exact coordinate minimization. The
/// intercept row is never penalized and is updated last in each sweep.
SolverSolution solve_elastic_net(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                 const ElasticNetPenalty& pen, const SolverConfig& cfg,
                                 const Eigen::MatrixXd* warm_start = nullptr);

/// Blockwise cyclic descent over coefficient rows b_l. with rowwise
/// group soft thresholding.
SolverSolution solve_group_lasso(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                 const GroupLassoPenalty& pen, const SolverConfig& cfg,
                                 const Eigen::MatrixXd* warm_start = nullptr);

/// l1 plus Laplacian quadratics on the intercept-free block; each entry
/// solves a scalar quadratic-plus-l1 problem in closed form.
SolverSolution solve_network_reg(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                 const NetworkRegPenalty& pen, const SolverConfig& cfg,
                                 const Eigen::MatrixXd* warm_start = nullptr);

/// Dispatch on the penalty family.
SolverSolution solve_penalized(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                               const PenaltySpec& spec, const SolverConfig& cfg,
                               const Eigen::MatrixXd* warm_start = nullptr);

/// Smallest lambda that zeroes every non-intercept coefficient at the
/// intercept-only fit. For ridge-heavy mixes the l1 weight is floored at
/// 1e-3 to keep the value finite.
double lambda_max(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                  const PenaltySpec& spec);

}  // namespace mtlmm
