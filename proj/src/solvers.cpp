#include "mtlmm/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mtlmm/errors.hpp"
#include "mtlmm/linalg.hpp"

namespace mtlmm {

double soft_threshold(double z, double gamma) {
    if (gamma < 0.0) throw ValidationError("soft_threshold: gamma must be nonnegative");
    const double mag = std::abs(z) - gamma;
    return mag > 0.0 ? (z > 0.0 ? mag : -mag) : 0.0;
}

Eigen::VectorXd group_soft_threshold(const Eigen::VectorXd& v, double gamma) {
    if (gamma < 0.0) throw ValidationError("group_soft_threshold: gamma must be nonnegative");
    const double norm = v.norm();
    if (norm <= gamma) return Eigen::VectorXd::Zero(v.size());
    return (1.0 - gamma / norm) * v;
}

namespace {

constexpr double kObjectiveSlack = 1e-8;

// Shared coordinate-descent state over the stacked system. The residual
// matrix is maintained incrementally and refreshed once at convergence for
// the KKT computation.
struct Descent {
    const Eigen::MatrixXd& X;
    const Eigen::MatrixXd& Y;
    Eigen::MatrixXd B;
    Eigen::MatrixXd R;  // Y - X B
    Eigen::VectorXd col_sq;
    bool zero_variance = false;

    Descent(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
            const Eigen::MatrixXd* warm)
        : X(x), Y(y) {
        if (x.rows() != y.rows()) throw ShapeError("X and Y row counts differ");
        if (x.cols() < 1) throw ShapeError("X needs at least the intercept column");
        if (warm) {
            if (warm->rows() != x.cols() || warm->cols() != y.cols()) {
                throw ShapeError("warm start has wrong shape");
            }
            B = *warm;
        } else {
            B = Eigen::MatrixXd::Zero(x.cols(), y.cols());
        }
        col_sq = x.colwise().squaredNorm();
        for (Eigen::Index l = 1; l < x.cols(); ++l) {
            if (col_sq[l] == 0.0) {
                zero_variance = true;
                B.row(l).setZero();  // zero-variance columns are forced to zero
            }
        }
        if (col_sq[0] <= 0.0) throw ValidationError("intercept column is identically zero");
        R = Y - X * B;
    }

    void set_entry(Eigen::Index l, Eigen::Index c, double value) {
        const double delta = value - B(l, c);
        if (delta != 0.0) {
            R.col(c) -= delta * X.col(l);
            B(l, c) = value;
        }
    }

    // Unpenalized intercept row, updated last in every sweep.
    double update_intercepts() {
        double max_change = 0.0;
        for (Eigen::Index c = 0; c < B.cols(); ++c) {
            const double value = B(0, c) + X.col(0).dot(R.col(c)) / col_sq[0];
            max_change = std::max(max_change, std::abs(value - B(0, c)));
            set_entry(0, c, value);
        }
        return max_change;
    }

    void refresh_residual() { R = Y - X * B; }
};

// Generic solver loop: full sweeps establish convergence, active-set sweeps
// in between iterate on the current support only.
template <typename FullSweep, typename ActiveSweep, typename Objective>
void run_sweeps(const SolverConfig& cfg, SolverSolution& out,
                FullSweep full_sweep, ActiveSweep active_sweep, Objective objective) {
    if (cfg.max_sweeps < 1) throw ValidationError("max_sweeps must be >= 1");
    if (cfg.tol <= 0.0) throw ValidationError("tol must be positive");

    double prev_obj = std::numeric_limits<double>::infinity();
    auto check_monotone = [&](double obj) {
        if (!std::isfinite(obj)) {
            throw NumericError("coordinate descent objective is not finite");
        }
        if (obj > prev_obj + kObjectiveSlack * (1.0 + std::abs(prev_obj))) {
            throw NumericError("coordinate descent objective increased");
        }
        prev_obj = obj;
    };

    int sweeps = 0;
    bool converged = false;
    while (sweeps < cfg.max_sweeps) {
        const double change = full_sweep();
        ++sweeps;
        check_monotone(objective());
        if (change < cfg.tol) {
            converged = true;
            break;
        }
        if (cfg.active_set) {
            while (sweeps < cfg.max_sweeps) {
                const double active_change = active_sweep();
                ++sweeps;
                check_monotone(objective());
                if (active_change < cfg.tol) break;
            }
        }
    }
    out.sweeps_used = sweeps;
    out.converged = converged;
}

double elastic_net_objective(const Descent& d, const ElasticNetPenalty& pen) {
    const auto coef = d.B.bottomRows(d.B.rows() - 1);
    return 0.5 * d.R.squaredNorm() +
           pen.lambda * ((1.0 - pen.alpha) * coef.array().square().sum() +
                         pen.alpha * coef.array().abs().sum());
}

double group_lasso_objective(const Descent& d, const GroupLassoPenalty& pen) {
    const auto coef = d.B.bottomRows(d.B.rows() - 1);
    double row_norms = 0.0;
    for (Eigen::Index l = 0; l < coef.rows(); ++l) row_norms += coef.row(l).norm();
    return 0.5 * d.R.squaredNorm() +
           pen.lambda * ((1.0 - pen.alpha) * coef.array().square().sum() +
                         pen.alpha * row_norms);
}

}  // namespace

SolverSolution solve_elastic_net(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                 const ElasticNetPenalty& pen, const SolverConfig& cfg,
                                 const Eigen::MatrixXd* warm_start) {
    validate_penalty(PenaltySpec{pen});
    Descent d(X, Y, warm_start);
    const Eigen::Index p = X.cols();
    const Eigen::Index r = Y.cols();
    const double l1 = pen.lambda * pen.alpha;
    const double ridge2 = 2.0 * pen.lambda * (1.0 - pen.alpha);

    auto update_entry = [&](Eigen::Index l, Eigen::Index c) {
        const double denom = d.col_sq[l] + ridge2;
        if (denom <= 0.0) {
            d.set_entry(l, c, 0.0);
            return 0.0;
        }
        const double z = d.X.col(l).dot(d.R.col(c)) + d.col_sq[l] * d.B(l, c);
        const double value = soft_threshold(z, l1) / denom;
        const double change = std::abs(value - d.B(l, c));
        d.set_entry(l, c, value);
        return change;
    };

    auto full_sweep = [&]() {
        double max_change = 0.0;
        for (Eigen::Index c = 0; c < r; ++c) {
            for (Eigen::Index l = 1; l < p; ++l) {
                max_change = std::max(max_change, update_entry(l, c));
            }
        }
        return std::max(max_change, d.update_intercepts());
    };

    std::vector<std::pair<Eigen::Index, Eigen::Index>> active;
    auto active_sweep = [&]() {
        active.clear();
        for (Eigen::Index c = 0; c < r; ++c) {
            for (Eigen::Index l = 1; l < p; ++l) {
                if (d.B(l, c) != 0.0) active.emplace_back(l, c);
            }
        }
        double max_change = 0.0;
        for (const auto& [l, c] : active) {
            max_change = std::max(max_change, update_entry(l, c));
        }
        return std::max(max_change, d.update_intercepts());
    };

    SolverSolution out;
    run_sweeps(cfg, out, full_sweep, active_sweep,
               [&]() { return elastic_net_objective(d, pen); });

    d.refresh_residual();
    double kkt = 0.0;
    for (Eigen::Index c = 0; c < r; ++c) {
        kkt = std::max(kkt, std::abs(d.X.col(0).dot(d.R.col(c))) / d.col_sq[0]);
        for (Eigen::Index l = 1; l < p; ++l) {
            const double grad = d.X.col(l).dot(d.R.col(c));
            const double b = d.B(l, c);
            if (b != 0.0) {
                kkt = std::max(kkt, std::abs(grad - ridge2 * b - l1 * (b > 0 ? 1.0 : -1.0)));
            } else {
                kkt = std::max(kkt, std::max(0.0, std::abs(grad) - l1));
            }
        }
    }
    out.kkt_residual = kkt;
    out.objective = elastic_net_objective(d, pen);
    out.B = d.B;
    out.zero_variance_columns = d.zero_variance;
    return out;
}

SolverSolution solve_group_lasso(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                 const GroupLassoPenalty& pen, const SolverConfig& cfg,
                                 const Eigen::MatrixXd* warm_start) {
    validate_penalty(PenaltySpec{pen});
    Descent d(X, Y, warm_start);
    const Eigen::Index p = X.cols();
    const double l1 = pen.lambda * pen.alpha;
    const double ridge2 = 2.0 * pen.lambda * (1.0 - pen.alpha);

    auto update_row = [&](Eigen::Index l) {
        const double denom = d.col_sq[l] + ridge2;
        if (denom <= 0.0) {
            for (Eigen::Index c = 0; c < d.B.cols(); ++c) d.set_entry(l, c, 0.0);
            return 0.0;
        }
        Eigen::VectorXd rho = d.R.transpose() * d.X.col(l) + d.col_sq[l] * d.B.row(l).transpose();
        Eigen::VectorXd value = group_soft_threshold(rho, l1) / denom;
        double change = 0.0;
        for (Eigen::Index c = 0; c < d.B.cols(); ++c) {
            change = std::max(change, std::abs(value[c] - d.B(l, c)));
            d.set_entry(l, c, value[c]);
        }
        return change;
    };

    auto full_sweep = [&]() {
        double max_change = 0.0;
        for (Eigen::Index l = 1; l < p; ++l) {
            max_change = std::max(max_change, update_row(l));
        }
        return std::max(max_change, d.update_intercepts());
    };

    std::vector<Eigen::Index> active;
    auto active_sweep = [&]() {
        active.clear();
        for (Eigen::Index l = 1; l < p; ++l) {
            if (!d.B.row(l).isZero(0.0)) active.push_back(l);
        }
        double max_change = 0.0;
        for (Eigen::Index l : active) {
            max_change = std::max(max_change, update_row(l));
        }
        return std::max(max_change, d.update_intercepts());
    };

    SolverSolution out;
    run_sweeps(cfg, out, full_sweep, active_sweep,
               [&]() { return group_lasso_objective(d, pen); });

    d.refresh_residual();
    double kkt = 0.0;
    for (Eigen::Index c = 0; c < d.B.cols(); ++c) {
        kkt = std::max(kkt, std::abs(d.X.col(0).dot(d.R.col(c))) / d.col_sq[0]);
    }
    for (Eigen::Index l = 1; l < p; ++l) {
        const Eigen::VectorXd grad = d.R.transpose() * d.X.col(l);
        const Eigen::VectorXd row = d.B.row(l).transpose();
        if (!row.isZero(0.0)) {
            const Eigen::VectorXd stat = grad - ridge2 * row - l1 * row / row.norm();
            kkt = std::max(kkt, stat.norm());
        } else {
            kkt = std::max(kkt, std::max(0.0, grad.norm() - l1));
        }
    }
    out.kkt_residual = kkt;
    out.objective = group_lasso_objective(d, pen);
    out.B = d.B;
    out.zero_variance_columns = d.zero_variance;
    return out;
}

SolverSolution solve_network_reg(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                                 const NetworkRegPenalty& pen, const SolverConfig& cfg,
                                 const Eigen::MatrixXd* warm_start) {
    validate_penalty(PenaltySpec{pen}, static_cast<int>(X.cols()), static_cast<int>(Y.cols()));
    Descent d(X, Y, warm_start);
    const Eigen::Index p = X.cols();
    const Eigen::Index r = Y.cols();
    const Eigen::MatrixXd lap_x = graph_laplacian(pen.g_x);
    const Eigen::MatrixXd lap_y = graph_laplacian(pen.g_y);

    auto objective = [&]() {
        const auto coef = d.B.bottomRows(p - 1);
        return 0.5 * d.R.squaredNorm() + pen.lambda * coef.array().abs().sum() +
               pen.lambda_x * (coef.transpose() * lap_x * coef).trace() +
               pen.lambda_y * (coef * lap_y * coef.transpose()).trace();
    };

    // Smooth gradient of the Laplacian terms at entry (i, c) of the
    // intercept-free block, excluding the diagonal (self) contribution.
    auto laplacian_cross = [&](Eigen::Index i, Eigen::Index c) {
        const double gx = lap_x.row(i).dot(d.B.col(c).tail(p - 1)) - lap_x(i, i) * d.B(i + 1, c);
        const double gy = lap_y.col(c).dot(d.B.row(i + 1).transpose()) -
                          lap_y(c, c) * d.B(i + 1, c);
        return 2.0 * pen.lambda_x * gx + 2.0 * pen.lambda_y * gy;
    };

    auto update_entry = [&](Eigen::Index l, Eigen::Index c) {
        const Eigen::Index i = l - 1;
        const double denom =
            d.col_sq[l] + 2.0 * pen.lambda_x * lap_x(i, i) + 2.0 * pen.lambda_y * lap_y(c, c);
        if (denom <= 0.0) {
            d.set_entry(l, c, 0.0);
            return 0.0;
        }
        const double z = d.X.col(l).dot(d.R.col(c)) + d.col_sq[l] * d.B(l, c) -
                         laplacian_cross(i, c);
        const double value = soft_threshold(z, pen.lambda) / denom;
        const double change = std::abs(value - d.B(l, c));
        d.set_entry(l, c, value);
        return change;
    };

    auto full_sweep = [&]() {
        double max_change = 0.0;
        for (Eigen::Index c = 0; c < r; ++c) {
            for (Eigen::Index l = 1; l < p; ++l) {
                max_change = std::max(max_change, update_entry(l, c));
            }
        }
        return std::max(max_change, d.update_intercepts());
    };

    std::vector<std::pair<Eigen::Index, Eigen::Index>> active;
    auto active_sweep = [&]() {
        active.clear();
        for (Eigen::Index c = 0; c < r; ++c) {
            for (Eigen::Index l = 1; l < p; ++l) {
                if (d.B(l, c) != 0.0) active.emplace_back(l, c);
            }
        }
        double max_change = 0.0;
        for (const auto& [l, c] : active) {
            max_change = std::max(max_change, update_entry(l, c));
        }
        return std::max(max_change, d.update_intercepts());
    };

    SolverSolution out;
    run_sweeps(cfg, out, full_sweep, active_sweep, objective);

    d.refresh_residual();
    double kkt = 0.0;
    for (Eigen::Index c = 0; c < r; ++c) {
        kkt = std::max(kkt, std::abs(d.X.col(0).dot(d.R.col(c))) / d.col_sq[0]);
        for (Eigen::Index l = 1; l < p; ++l) {
            const Eigen::Index i = l - 1;
            const double self = 2.0 * pen.lambda_x * lap_x(i, i) * d.B(l, c) +
                                2.0 * pen.lambda_y * lap_y(c, c) * d.B(l, c);
            const double smooth = d.X.col(l).dot(d.R.col(c)) - laplacian_cross(i, c) - self;
            const double b = d.B(l, c);
            if (b != 0.0) {
                kkt = std::max(kkt, std::abs(smooth - pen.lambda * (b > 0 ? 1.0 : -1.0)));
            } else {
                kkt = std::max(kkt, std::max(0.0, std::abs(smooth) - pen.lambda));
            }
        }
    }
    out.kkt_residual = kkt;
    out.objective = objective();
    out.B = d.B;
    out.zero_variance_columns = d.zero_variance;
    return out;
}

SolverSolution solve_penalized(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                               const PenaltySpec& spec, const SolverConfig& cfg,
                               const Eigen::MatrixXd* warm_start) {
    return std::visit(
        [&](const auto& pen) {
            using T = std::decay_t<decltype(pen)>;
            if constexpr (std::is_same_v<T, ElasticNetPenalty>) {
                return solve_elastic_net(X, Y, pen, cfg, warm_start);
            } else if constexpr (std::is_same_v<T, GroupLassoPenalty>) {
                return solve_group_lasso(X, Y, pen, cfg, warm_start);
            } else {
                return solve_network_reg(X, Y, pen, cfg, warm_start);
            }
        },
        spec);
}

double lambda_max(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                  const PenaltySpec& spec) {
    if (X.rows() != Y.rows()) throw ShapeError("X and Y row counts differ");
    const Eigen::Index p = X.cols();
    const double icpt_sq = X.col(0).squaredNorm();
    if (icpt_sq <= 0.0) throw ValidationError("intercept column is identically zero");

    // Residual after the intercept-only fit.
    Eigen::MatrixXd R = Y;
    for (Eigen::Index c = 0; c < Y.cols(); ++c) {
        R.col(c) -= X.col(0) * (X.col(0).dot(Y.col(c)) / icpt_sq);
    }

    if (std::holds_alternative<GroupLassoPenalty>(spec)) {
        const double alpha = std::max(std::get<GroupLassoPenalty>(spec).alpha, 1e-3);
        double best = 0.0;
        for (Eigen::Index l = 1; l < p; ++l) {
            best = std::max(best, (R.transpose() * X.col(l)).norm());
        }
        return best / alpha;
    }
    double best = 0.0;
    for (Eigen::Index l = 1; l < p; ++l) {
        best = std::max(best, (R.transpose() * X.col(l)).cwiseAbs().maxCoeff());
    }
    if (std::holds_alternative<ElasticNetPenalty>(spec)) {
        return best / std::max(std::get<ElasticNetPenalty>(spec).alpha, 1e-3);
    }
    return best;  // network-reg: lambda is the plain l1 weight
}

}  // namespace mtlmm
