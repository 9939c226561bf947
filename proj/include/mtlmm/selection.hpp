#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "mtlmm/em.hpp"
#include "mtlmm/types.hpp"

namespace mtlmm {

/// Descending lambda path, plus auxiliary grids for the network-regularized
/// family. Descending order is what makes warm starts effective.
struct LambdaGrid {
    std::vector<double> values;
    std::vector<double> lambda_x;  // network-reg only; empty means "keep spec value"
    std::vector<double> lambda_y;

    /// count log-spaced values from lmax down to min_ratio * lmax.
    static LambdaGrid log_spaced(double lmax, int count = 50, double min_ratio = 1e-3);
    void validate() const;
};

struct CvCurvePoint {
    double lambda = 0.0;
    double lambda_x = 0.0;
    double lambda_y = 0.0;
    Eigen::VectorXd rmse_per_response;  // pooled over held-out rows of all folds
    double pooled_rmse = 0.0;           // unweighted mean of per-response RMSEs
    double fold_sd = 0.0;               // sd across folds of the per-fold pooled RMSE
};

struct CvResult {
    std::vector<CvCurvePoint> curve;
    double chosen_lambda = 0.0;
    double chosen_lambda_x = 0.0;
    double chosen_lambda_y = 0.0;
    double one_se_lambda = 0.0;  // largest lambda within one SE of the minimum
    std::uint64_t seed = 0;
    std::vector<std::vector<int>> fold_of_row;  // per group, fold index per row
};

/// Group-stratified k-fold cross validation over the lambda grid (and the
/// auxiliary grids for network-reg), warm-started along the descending path.
/// Held-out rows are predicted with the trained group BLUPs when
/// `mixed_model` is set. Throws ValidationError when a group would lose all
/// of its training rows in some fold.
CvResult kfold_cv(const GroupedDataset& data, const PenaltySpec& family,
                  const LambdaGrid& grid, int k, std::uint64_t seed, const EmConfig& cfg,
                  bool mixed_model = true);

struct PathPoint {
    double lambda = 0.0;
    Eigen::VectorXd validation_rmse;
    double pooled_rmse = 0.0;
    double bic = 0.0;
};

/// Train/validation holdout selection: fit the path on the training data,
/// score each point on the validation data, keep the pooled-RMSE minimizer.
/// The fits are returned so callers can reuse the path (support recovery,
/// refits at the chosen lambda).
struct HoldoutResult {
    std::vector<PathPoint> curve;
    std::vector<FitResult> fits;  // aligned with curve
    int chosen_index = -1;
};

HoldoutResult holdout_select(const GroupedDataset& train, const GroupedDataset& validation,
                             const PenaltySpec& family, const std::vector<double>& lambdas,
                             const EmConfig& cfg, bool mixed_model = true);

/// Modified BIC, 2 l(theta-hat) - d0 log N with l the unpenalized marginal
/// log-likelihood; larger is better under this sign convention.
double modified_bic(const FitResult& fit, const GroupedDataset& data);

/// Per-response root mean squared error.
Eigen::VectorXd rmse(const Eigen::MatrixXd& y_true, const Eigen::MatrixXd& y_pred);

double frobenius_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct RocPoint {
    double lambda = 0.0;
    double sensitivity = 0.0;  // true zeros recovered as zero / true zeros
    double specificity = 0.0;  // true nonzeros kept nonzero / true nonzeros
};

/// Support-recovery curve along a fitted path. Intercept rows are excluded;
/// "zero" means exactly 0.0. When the true matrix has no zero (or no
/// nonzero) coefficient entries the corresponding rate is NaN.
std::vector<RocPoint> support_roc(const Eigen::MatrixXd& B_true,
                                  const std::vector<std::pair<double, Eigen::MatrixXd>>& path);

/// Area under the sensitivity-vs-specificity curve, with the limiting
/// anchors (specificity 0, sensitivity 1) and (1, 0) appended, by the
/// trapezoid rule over ascending specificity.
double roc_auc(const std::vector<RocPoint>& points);

struct ActiveCounts {
    Eigen::VectorXi per_response;  // nonzero coefficients per response, intercept excluded
    int joint_rows = 0;            // coefficient rows with any nonzero entry
};

ActiveCounts active_feature_count(const Eigen::MatrixXd& B);

/// Rowwise predictions for every group of a dataset: X_j B (+ Z_j Lambda_j
/// when BLUPs are supplied and the group is known). Rows follow the
/// dataset's stacked order.
Eigen::MatrixXd predict_grouped(const GroupedDataset& data, const ModelParams& params,
                                const RandomEffects* blups = nullptr);

/// Subset of a dataset by stacked row indices (sorted internally); every
/// group present in the subset is kept with its rows in original order.
GroupedDataset subset_rows(const GroupedDataset& data, const std::vector<int>& stacked_rows);

}  // namespace mtlmm
