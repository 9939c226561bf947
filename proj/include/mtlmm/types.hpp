#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mtlmm {

/// Dimensional metadata of a multitask mixed-effects design:
/// p fixed-effect columns (incl. intercept), r responses, q random-effect
/// columns, J groups with per-group sample sizes n_j.
struct ModelDims {
    int p = 0;
    int r = 0;
    int q = 0;
    int J = 0;
    std::vector<int> n;

    int total_rows() const;
    void validate() const;
};

/// One group's design block: X_j (n_j x p, column 1 all ones), Z_j (n_j x q),
/// Y_j (n_j x r), plus an opaque group label.
struct GroupBlock {
    std::string label;
    Eigen::MatrixXd X;
    Eigen::MatrixXd Z;
    Eigen::MatrixXd Y;
};

/// Per-group blocks carrying the full design; the unit of all likelihood
/// computation. Immutable after construction.
struct GroupedDataset {
    ModelDims dims;
    std::vector<GroupBlock> groups;

    static GroupedDataset from_blocks(std::vector<GroupBlock> blocks);
    void validate() const;

    const GroupBlock* find(const std::string& label) const;

    Eigen::MatrixXd stacked_X() const;
    Eigen::MatrixXd stacked_Y() const;
    std::vector<std::string> labels() const;
};

/// The parameter triple theta = {B, Sigma, Psi}.
/// B: p x r fixed effects; Sigma: r x r residual covariance (SPD);
/// Psi: qr x qr random-effects covariance (PSD).
struct ModelParams {
    Eigen::MatrixXd B;
    Eigen::MatrixXd Sigma;
    Eigen::MatrixXd Psi;

    void validate_shapes(const ModelDims& dims) const;
    void validate(const ModelDims& dims) const;
};

/// Per-group q x r random-effect matrices (BLUPs when estimated), keyed by
/// group label.
struct RandomEffects {
    std::vector<std::string> labels;
    std::vector<Eigen::MatrixXd> lambda;

    const Eigen::MatrixXd* find(const std::string& label) const;
    void validate(const ModelDims& dims) const;
};

struct ElasticNetPenalty {
    double lambda = 0.0;
    double alpha = 0.5;
};

struct GroupLassoPenalty {
    double lambda = 0.0;
    double alpha = 0.5;
};

struct NetworkRegPenalty {
    double lambda = 0.0;
    double lambda_x = 0.0;
    double lambda_y = 0.0;
    Eigen::MatrixXd g_x;  // (p-1) x (p-1) adjacency over non-intercept predictors
    Eigen::MatrixXd g_y;  // r x r adjacency over responses
};

/// Tagged choice of penalty family with its hyperparameters.
using PenaltySpec = std::variant<ElasticNetPenalty, GroupLassoPenalty, NetworkRegPenalty>;

/// Scalar and adjacency validity; when p, r are known, also shape-checks the
/// adjacency matrices against the coefficient matrix.
void validate_penalty(const PenaltySpec& spec, int p = -1, int r = -1);

double penalty_lambda(const PenaltySpec& spec);
PenaltySpec with_lambda(PenaltySpec spec, double lambda);
std::string penalty_family_name(const PenaltySpec& spec);

}  // namespace mtlmm
