#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mtlmm/errors.hpp"
#include "mtlmm/posterior.hpp"
#include "mtlmm/solvers.hpp"
#include "mtlmm/types.hpp"

namespace mtlmm {

struct EmConfig {
    double epsilon = 1e-6;  // relative objective-change convergence threshold
    int max_iter = 500;
    SolverConfig solver;
    bool trace = false;  // per-iteration logging to stderr
};

/// Per-iteration diagnostic record, consumable by the CLI trace output.
struct TraceRecord {
    int iteration = 0;
    double loglik_pen = 0.0;
    double penalty_B = 0.0;        // penalty at B-hat
    double penalty_B_tilde = 0.0;  // penalty at the whitened-scale coefficients
    long d0 = 0;
    double max_delta_B = 0.0;
};

struct FitResult {
    ModelParams params;
    RandomEffects blups;
    PosteriorMoments moments;            // at convergence
    std::vector<double> objective_trace; // penalized log-likelihood per iteration
    std::vector<TraceRecord> trace;
    int iterations = 0;
    bool converged = false;
    long d0 = 0;
    PenaltySpec penalty;
};

/// EM objective diverged to a non-finite value; carries the trace collected
/// up to the failure.
class DivergenceError : public NumericError {
public:
    DivergenceError(const std::string& msg, std::vector<double> trace)
        : NumericError(msg), objective_trace(std::move(trace)) {}
    std::vector<double> objective_trace;
};

/// Sigma = I_r, Psi = I_qr, B from the chosen penalty solver applied to the
/// fixed-effects-only problem.
ModelParams initialize(const GroupedDataset& data, const PenaltySpec& spec,
                       const EmConfig& cfg);

struct MStepB {
    Eigen::MatrixXd B_hat;    // B-tilde post-multiplied by Sigma^{1/2}
    Eigen::MatrixXd B_tilde;  // solution of the whitened penalized problem
    SolverSolution solution;
};

/// Fixed-effects update: subtract the current BLUPs, whiten the response as
/// Ytilde_j Sigma^{-1/2}, solve the penalized least-squares subproblem, and
/// back-transform. `warm_B` is a previous B-hat-scale iterate.
MStepB m_step_B(const GroupedDataset& data, const PosteriorMoments& moments,
                const Eigen::MatrixXd& Sigma, const PenaltySpec& spec,
                const SolverConfig& solver_cfg, const Eigen::MatrixXd* warm_B = nullptr);

/// Psi-hat = (1/J) sum_j R_j, symmetrized.
Eigen::MatrixXd m_step_Psi(const PosteriorMoments& moments);

/// Residual covariance update; entry (h,k) averages the conditional
/// cross-products of residual columns plus the trace correction
/// tr(Gamma_j^{(h,k)} Z_j'Z_j).
Eigen::MatrixXd m_step_Sigma(const GroupedDataset& data, const ModelParams& params,
                             const PosteriorMoments& moments);

/// Nonzero entries of B plus the free covariance entries
/// r(r+1)/2 + qr(qr+1)/2.
long count_nonzero_params(const Eigen::MatrixXd& B, int r, int q);

/// Full ECM loop: initialization (or a caller-provided starting point),
/// alternating E- and M-steps until the relative change in the penalized
/// log-likelihood falls below cfg.epsilon or max_iter is reached.
FitResult fit(const GroupedDataset& data, const PenaltySpec& spec, const EmConfig& cfg,
              const ModelParams* init = nullptr);

/// Penalized multitask regression without random effects: a single solver
/// pass, residual covariance from the fit, Psi fixed at zero. Shares the
/// FitResult shape so selection and reporting code treats both model types
/// uniformly.
FitResult fit_fixed_effects(const GroupedDataset& data, const PenaltySpec& spec,
                            const EmConfig& cfg);

/// Percentage of variation due to random effects, one fraction per response:
/// the random-effect diagonal mass of the response's q x q block of Psi over
/// that mass plus the response's residual variance.
Eigen::VectorXd pvre(const Eigen::MatrixXd& Psi, const Eigen::MatrixXd& Sigma);
Eigen::VectorXd pvre(const ModelParams& params);

}  // namespace mtlmm
