#include "mtlmm/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mtlmm/likelihood.hpp"
#include "mtlmm/rng.hpp"

namespace mtlmm {

LambdaGrid LambdaGrid::log_spaced(double lmax, int count, double min_ratio) {
    if (lmax <= 0.0) throw ValidationError("lambda_max must be positive");
    if (count < 1) throw ValidationError("grid count must be >= 1");
    if (min_ratio <= 0.0 || min_ratio > 1.0) {
        throw ValidationError("min_ratio must be in (0, 1]");
    }
    LambdaGrid grid;
    if (count == 1) {
        grid.values.push_back(lmax);
        return grid;
    }
    const double step = std::log(min_ratio) / static_cast<double>(count - 1);
    for (int i = 0; i < count; ++i) {
        grid.values.push_back(lmax * std::exp(step * i));
    }
    return grid;
}

void LambdaGrid::validate() const {
    if (values.empty()) throw ValidationError("lambda grid is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] <= 0.0) throw ValidationError("lambda grid values must be positive");
        if (i > 0 && values[i] >= values[i - 1]) {
            throw ValidationError("lambda grid must be strictly decreasing");
        }
    }
    for (double v : lambda_x) {
        if (v < 0.0) throw ValidationError("lambda_x grid values must be nonnegative");
    }
    for (double v : lambda_y) {
        if (v < 0.0) throw ValidationError("lambda_y grid values must be nonnegative");
    }
}

GroupedDataset subset_rows(const GroupedDataset& data, const std::vector<int>& stacked_rows) {
    std::vector<int> rows = stacked_rows;
    std::sort(rows.begin(), rows.end());
    const int total = data.dims.total_rows();
    std::vector<std::vector<int>> local(data.groups.size());
    std::vector<int> offsets(data.groups.size() + 1, 0);
    for (std::size_t j = 0; j < data.groups.size(); ++j) {
        offsets[j + 1] = offsets[j] + data.dims.n[j];
    }
    std::size_t j = 0;
    for (int idx : rows) {
        if (idx < 0 || idx >= total) throw ValidationError("row index out of range");
        while (idx >= offsets[j + 1]) ++j;
        local[j].push_back(idx - offsets[j]);
    }
    std::vector<GroupBlock> blocks;
    for (std::size_t g = 0; g < data.groups.size(); ++g) {
        if (local[g].empty()) continue;
        const auto& src = data.groups[g];
        GroupBlock b;
        b.label = src.label;
        const Eigen::Index m = static_cast<Eigen::Index>(local[g].size());
        b.X.resize(m, src.X.cols());
        b.Z.resize(m, src.Z.cols());
        b.Y.resize(m, src.Y.cols());
        for (Eigen::Index i = 0; i < m; ++i) {
            b.X.row(i) = src.X.row(local[g][i]);
            b.Z.row(i) = src.Z.row(local[g][i]);
            b.Y.row(i) = src.Y.row(local[g][i]);
        }
        blocks.push_back(std::move(b));
    }
    return GroupedDataset::from_blocks(std::move(blocks));
}

Eigen::MatrixXd predict_grouped(const GroupedDataset& data, const ModelParams& params,
                                const RandomEffects* blups) {
    Eigen::MatrixXd out(data.dims.total_rows(), data.dims.r);
    Eigen::Index row = 0;
    for (const auto& g : data.groups) {
        Eigen::MatrixXd pred = g.X * params.B;
        if (blups) {
            if (const Eigen::MatrixXd* lam = blups->find(g.label)) {
                pred += g.Z * (*lam);
            }
        }
        out.middleRows(row, pred.rows()) = pred;
        row += pred.rows();
    }
    return out;
}

Eigen::VectorXd rmse(const Eigen::MatrixXd& y_true, const Eigen::MatrixXd& y_pred) {
    if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols()) {
        throw ShapeError("rmse: prediction and truth shapes differ");
    }
    if (y_true.rows() == 0) throw ShapeError("rmse: empty input");
    return ((y_true - y_pred).array().square().colwise().mean()).sqrt().matrix();
}

double frobenius_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("frobenius_distance: shapes differ");
    }
    return (a - b).norm();
}

double modified_bic(const FitResult& fit, const GroupedDataset& data) {
    const double ll = marginal_loglik(data, fit.params);
    return 2.0 * ll - static_cast<double>(fit.d0) *
                          std::log(static_cast<double>(data.dims.total_rows()));
}

std::vector<RocPoint> support_roc(const Eigen::MatrixXd& B_true,
                                  const std::vector<std::pair<double, Eigen::MatrixXd>>& path) {
    const Eigen::Index p = B_true.rows();
    const Eigen::Index r = B_true.cols();
    long true_zero = 0;
    long true_nonzero = 0;
    for (Eigen::Index l = 1; l < p; ++l) {
        for (Eigen::Index c = 0; c < r; ++c) {
            (B_true(l, c) == 0.0 ? true_zero : true_nonzero)++;
        }
    }
    std::vector<RocPoint> out;
    out.reserve(path.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& [lambda, b_hat] : path) {
        if (b_hat.rows() != p || b_hat.cols() != r) {
            throw ShapeError("support_roc: estimate shape differs from truth");
        }
        long both_zero = 0;
        long both_nonzero = 0;
        for (Eigen::Index l = 1; l < p; ++l) {
            for (Eigen::Index c = 0; c < r; ++c) {
                const bool tz = B_true(l, c) == 0.0;
                const bool ez = b_hat(l, c) == 0.0;
                if (tz && ez) ++both_zero;
                if (!tz && !ez) ++both_nonzero;
            }
        }
        RocPoint pt;
        pt.lambda = lambda;
        pt.sensitivity = true_zero > 0
                             ? static_cast<double>(both_zero) / static_cast<double>(true_zero)
                             : nan;
        pt.specificity = true_nonzero > 0 ? static_cast<double>(both_nonzero) /
                                                static_cast<double>(true_nonzero)
                                          : nan;
        out.push_back(pt);
    }
    return out;
}

double roc_auc(const std::vector<RocPoint>& points) {
    std::vector<std::pair<double, double>> xy;
    xy.reserve(points.size() + 2);
    for (const auto& pt : points) {
        if (std::isnan(pt.sensitivity) || std::isnan(pt.specificity)) {
            throw NumericError("roc_auc: undefined sensitivity or specificity");
        }
        xy.emplace_back(pt.specificity, pt.sensitivity);
    }
    xy.emplace_back(0.0, 1.0);  // all-zero limit (lambda -> infinity)
    xy.emplace_back(1.0, 0.0);  // dense limit (lambda -> 0)
    std::sort(xy.begin(), xy.end());
    double auc = 0.0;
    for (std::size_t i = 1; i < xy.size(); ++i) {
        auc += 0.5 * (xy[i].first - xy[i - 1].first) * (xy[i].second + xy[i - 1].second);
    }
    return auc;
}

ActiveCounts active_feature_count(const Eigen::MatrixXd& B) {
    ActiveCounts counts;
    counts.per_response = Eigen::VectorXi::Zero(B.cols());
    for (Eigen::Index l = 1; l < B.rows(); ++l) {
        bool any = false;
        for (Eigen::Index c = 0; c < B.cols(); ++c) {
            if (B(l, c) != 0.0) {
                ++counts.per_response[c];
                any = true;
            }
        }
        if (any) ++counts.joint_rows;
    }
    return counts;
}

HoldoutResult holdout_select(const GroupedDataset& train, const GroupedDataset& validation,
                             const PenaltySpec& family, const std::vector<double>& lambdas,
                             const EmConfig& cfg, bool mixed_model) {
    if (lambdas.empty()) throw ValidationError("holdout_select: empty lambda path");
    HoldoutResult out;
    out.curve.reserve(lambdas.size());
    out.fits.reserve(lambdas.size());

    const ModelParams* warm = nullptr;
    for (double lambda : lambdas) {
        const PenaltySpec spec = with_lambda(family, lambda);
        FitResult fit_res = mixed_model ? fit(train, spec, cfg, warm)
                                        : fit_fixed_effects(train, spec, cfg);
        PathPoint pt;
        pt.lambda = lambda;
        const Eigen::MatrixXd pred = predict_grouped(
            validation, fit_res.params, mixed_model ? &fit_res.blups : nullptr);
        pt.validation_rmse = rmse(validation.stacked_Y(), pred);
        pt.pooled_rmse = pt.validation_rmse.mean();
        pt.bic = modified_bic(fit_res, train);
        out.fits.push_back(std::move(fit_res));
        warm = mixed_model ? &out.fits.back().params : nullptr;
        out.curve.push_back(std::move(pt));
    }

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < out.curve.size(); ++i) {
        if (out.curve[i].pooled_rmse < best) {
            best = out.curve[i].pooled_rmse;
            out.chosen_index = static_cast<int>(i);
        }
    }
    return out;
}

namespace {

struct FoldSplit {
    std::vector<GroupedDataset> train;
    std::vector<GroupedDataset> heldout;
    std::vector<std::vector<int>> fold_of_row;  // per group
};

FoldSplit make_folds(const GroupedDataset& data, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("k-fold CV requires k >= 2");
    FoldSplit split;
    split.fold_of_row.resize(data.groups.size());

    // Stratified assignment: within each group, a seeded shuffle of the row
    // positions dealt round-robin over folds. The stream is derived from
    // (seed, group ordinal) so labels play no role.
    for (std::size_t j = 0; j < data.groups.size(); ++j) {
        const int nj = data.dims.n[j];
        std::vector<int> perm(nj);
        for (int i = 0; i < nj; ++i) perm[i] = i;
        std::mt19937_64 engine = make_engine(seed, j);
        std::shuffle(perm.begin(), perm.end(), engine);
        split.fold_of_row[j].resize(nj);
        for (int i = 0; i < nj; ++i) split.fold_of_row[j][perm[i]] = i % k;
    }

    for (int f = 0; f < k; ++f) {
        std::vector<GroupBlock> train_blocks;
        std::vector<GroupBlock> held_blocks;
        for (std::size_t j = 0; j < data.groups.size(); ++j) {
            const auto& src = data.groups[j];
            std::vector<int> keep;
            std::vector<int> held;
            for (int i = 0; i < data.dims.n[j]; ++i) {
                (split.fold_of_row[j][i] == f ? held : keep).push_back(i);
            }
            if (keep.empty()) {
                throw ValidationError("fold " + std::to_string(f + 1) + " empties group '" +
                                      src.label + "'; reduce k or add rows");
            }
            auto take = [&](const std::vector<int>& idx) {
                GroupBlock b;
                b.label = src.label;
                const Eigen::Index m = static_cast<Eigen::Index>(idx.size());
                b.X.resize(m, src.X.cols());
                b.Z.resize(m, src.Z.cols());
                b.Y.resize(m, src.Y.cols());
                for (Eigen::Index i = 0; i < m; ++i) {
                    b.X.row(i) = src.X.row(idx[i]);
                    b.Z.row(i) = src.Z.row(idx[i]);
                    b.Y.row(i) = src.Y.row(idx[i]);
                }
                return b;
            };
            train_blocks.push_back(take(keep));
            if (!held.empty()) held_blocks.push_back(take(held));
        }
        split.train.push_back(GroupedDataset::from_blocks(std::move(train_blocks)));
        if (held_blocks.empty()) {
            throw ValidationError("fold " + std::to_string(f + 1) + " holds out no rows");
        }
        split.heldout.push_back(GroupedDataset::from_blocks(std::move(held_blocks)));
    }
    return split;
}

}  // namespace

CvResult kfold_cv(const GroupedDataset& data, const PenaltySpec& family,
                  const LambdaGrid& grid, int k, std::uint64_t seed, const EmConfig& cfg,
                  bool mixed_model) {
    data.validate();
    grid.validate();
    FoldSplit folds = make_folds(data, k, seed);

    const bool is_net = std::holds_alternative<NetworkRegPenalty>(family);
    std::vector<double> aux_x = grid.lambda_x;
    std::vector<double> aux_y = grid.lambda_y;
    if (!is_net || aux_x.empty()) aux_x = {is_net ? std::get<NetworkRegPenalty>(family).lambda_x : 0.0};
    if (!is_net || aux_y.empty()) aux_y = {is_net ? std::get<NetworkRegPenalty>(family).lambda_y : 0.0};

    CvResult result;
    result.seed = seed;
    result.fold_of_row = folds.fold_of_row;

    for (double lx : aux_x) {
        for (double ly : aux_y) {
            PenaltySpec base = family;
            if (is_net) {
                auto& net = std::get<NetworkRegPenalty>(base);
                net.lambda_x = lx;
                net.lambda_y = ly;
            }
            // Warm state per fold, carried along the descending path.
            std::vector<ModelParams> warm(k);
            std::vector<bool> has_warm(k, false);

            for (double lambda : grid.values) {
                const PenaltySpec spec = with_lambda(base, lambda);
                Eigen::VectorXd sq_sum = Eigen::VectorXd::Zero(data.dims.r);
                long held_rows = 0;
                std::vector<double> fold_pooled(k, 0.0);
                for (int f = 0; f < k; ++f) {
                    FitResult fr = mixed_model
                                       ? fit(folds.train[f], spec, cfg,
                                             has_warm[f] ? &warm[f] : nullptr)
                                       : fit_fixed_effects(folds.train[f], spec, cfg);
                    warm[f] = fr.params;
                    has_warm[f] = mixed_model;
                    const Eigen::MatrixXd pred =
                        predict_grouped(folds.heldout[f], fr.params,
                                        mixed_model ? &fr.blups : nullptr);
                    const Eigen::MatrixXd truth = folds.heldout[f].stacked_Y();
                    const Eigen::MatrixXd diff = truth - pred;
                    sq_sum += diff.array().square().colwise().sum().matrix().transpose();
                    held_rows += truth.rows();
                    fold_pooled[f] = rmse(truth, pred).mean();
                }
                CvCurvePoint pt;
                pt.lambda = lambda;
                pt.lambda_x = lx;
                pt.lambda_y = ly;
                pt.rmse_per_response =
                    (sq_sum / static_cast<double>(held_rows)).array().sqrt().matrix();
                pt.pooled_rmse = pt.rmse_per_response.mean();
                double mean = 0.0;
                for (double v : fold_pooled) mean += v;
                mean /= k;
                double var = 0.0;
                for (double v : fold_pooled) var += (v - mean) * (v - mean);
                pt.fold_sd = k > 1 ? std::sqrt(var / (k - 1)) : 0.0;
                result.curve.push_back(std::move(pt));
            }
        }
    }

    int best = -1;
    double best_rmse = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < result.curve.size(); ++i) {
        if (result.curve[i].pooled_rmse < best_rmse) {
            best_rmse = result.curve[i].pooled_rmse;
            best = static_cast<int>(i);
        }
    }
    result.chosen_lambda = result.curve[best].lambda;
    result.chosen_lambda_x = result.curve[best].lambda_x;
    result.chosen_lambda_y = result.curve[best].lambda_y;

    // One-standard-error alternative: the largest lambda (within the chosen
    // auxiliary pair) whose pooled RMSE is within one SE of the minimum.
    const double threshold =
        best_rmse + result.curve[best].fold_sd / std::sqrt(static_cast<double>(k));
    result.one_se_lambda = result.chosen_lambda;
    for (const auto& pt : result.curve) {
        if (pt.lambda_x == result.chosen_lambda_x && pt.lambda_y == result.chosen_lambda_y &&
            pt.pooled_rmse <= threshold && pt.lambda > result.one_se_lambda) {
            result.one_se_lambda = pt.lambda;
        }
    }
    return result;
}

}  // namespace mtlmm
