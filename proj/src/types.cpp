#include "mtlmm/types.hpp"

#include <Eigen/Eigenvalues>
#include <numeric>
#include <set>

#include "mtlmm/errors.hpp"
#include "mtlmm/linalg.hpp"

namespace mtlmm {

int ModelDims::total_rows() const {
    return std::accumulate(n.begin(), n.end(), 0);
}

void ModelDims::validate() const {
    if (p < 1) throw ValidationError("p must be >= 1");
    if (r < 1) throw ValidationError("r must be >= 1");
    if (q < 1) throw ValidationError("q must be >= 1");
    if (J < 1) throw ValidationError("J must be >= 1");
    if (static_cast<int>(n.size()) != J) {
        throw ValidationError("group size list must have J entries");
    }
    for (int nj : n) {
        if (nj < 1) throw ValidationError("every group size n_j must be >= 1");
    }
}

GroupedDataset GroupedDataset::from_blocks(std::vector<GroupBlock> blocks) {
    if (blocks.empty()) throw ValidationError("dataset needs at least one group");
    GroupedDataset ds;
    ds.dims.J = static_cast<int>(blocks.size());
    ds.dims.p = static_cast<int>(blocks.front().X.cols());
    ds.dims.q = static_cast<int>(blocks.front().Z.cols());
    ds.dims.r = static_cast<int>(blocks.front().Y.cols());
    for (const auto& b : blocks) ds.dims.n.push_back(static_cast<int>(b.X.rows()));
    ds.groups = std::move(blocks);
    ds.validate();
    return ds;
}

void GroupedDataset::validate() const {
    dims.validate();
    if (static_cast<int>(groups.size()) != dims.J) {
        throw ShapeError("group count does not match dims.J");
    }
    std::set<std::string> seen;
    for (int j = 0; j < dims.J; ++j) {
        const auto& g = groups[j];
        const int nj = dims.n[j];
        if (g.X.rows() != nj || g.X.cols() != dims.p) {
            throw ShapeError("group '" + g.label + "': X must be n_j x p");
        }
        if (g.Z.rows() != nj || g.Z.cols() != dims.q) {
            throw ShapeError("group '" + g.label + "': Z must be n_j x q");
        }
        if (g.Y.rows() != nj || g.Y.cols() != dims.r) {
            throw ShapeError("group '" + g.label + "': Y must be n_j x r");
        }
        if ((g.X.col(0).array() != 1.0).any()) {
            throw ValidationError("group '" + g.label + "': X column 1 must be all ones (intercept)");
        }
        if (!g.X.allFinite() || !g.Z.allFinite() || !g.Y.allFinite()) {
            throw ValidationError("group '" + g.label + "': non-finite entries");
        }
        if (!seen.insert(g.label).second) {
            throw ValidationError("duplicate group label '" + g.label + "'");
        }
    }
}

const GroupBlock* GroupedDataset::find(const std::string& label) const {
    for (const auto& g : groups) {
        if (g.label == label) return &g;
    }
    return nullptr;
}

Eigen::MatrixXd GroupedDataset::stacked_X() const {
    Eigen::MatrixXd x(dims.total_rows(), dims.p);
    Eigen::Index row = 0;
    for (const auto& g : groups) {
        x.middleRows(row, g.X.rows()) = g.X;
        row += g.X.rows();
    }
    return x;
}

Eigen::MatrixXd GroupedDataset::stacked_Y() const {
    Eigen::MatrixXd y(dims.total_rows(), dims.r);
    Eigen::Index row = 0;
    for (const auto& g : groups) {
        y.middleRows(row, g.Y.rows()) = g.Y;
        row += g.Y.rows();
    }
    return y;
}

std::vector<std::string> GroupedDataset::labels() const {
    std::vector<std::string> out;
    out.reserve(groups.size());
    for (const auto& g : groups) out.push_back(g.label);
    return out;
}

void ModelParams::validate_shapes(const ModelDims& dims) const {
    const int qr = dims.q * dims.r;
    if (B.rows() != dims.p || B.cols() != dims.r) {
        throw ShapeError("B must be p x r");
    }
    if (Sigma.rows() != dims.r || Sigma.cols() != dims.r) {
        throw ShapeError("Sigma must be r x r");
    }
    if (Psi.rows() != qr || Psi.cols() != qr) {
        throw ShapeError("Psi must be qr x qr");
    }
}

void ModelParams::validate(const ModelDims& dims) const {
    validate_shapes(dims);
    if (!is_symmetric(Sigma, 1e-10)) throw ValidationError("Sigma must be symmetric");
    if (!is_symmetric(Psi, 1e-10)) throw ValidationError("Psi must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_sigma(Sigma);
    if (es_sigma.eigenvalues().minCoeff() <= 0.0) {
        throw ValidationError("Sigma must be positive definite");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_psi(Psi);
    if (es_psi.eigenvalues().minCoeff() < -1e-10) {
        throw ValidationError("Psi must be positive semidefinite");
    }
    if (!B.allFinite()) throw ValidationError("B has non-finite entries");
}

const Eigen::MatrixXd* RandomEffects::find(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == label) return &lambda[i];
    }
    return nullptr;
}

void RandomEffects::validate(const ModelDims& dims) const {
    if (labels.size() != lambda.size()) {
        throw ShapeError("random effects: labels and matrices differ in count");
    }
    for (std::size_t i = 0; i < lambda.size(); ++i) {
        if (lambda[i].rows() != dims.q || lambda[i].cols() != dims.r) {
            throw ShapeError("random effect for '" + labels[i] + "' must be q x r");
        }
        if (!lambda[i].allFinite()) {
            throw ValidationError("random effect for '" + labels[i] + "' has non-finite entries");
        }
    }
}

namespace {

void validate_adjacency(const Eigen::MatrixXd& g, const std::string& name, int expected) {
    if (g.rows() != g.cols()) throw ShapeError(name + " adjacency must be square");
    if (expected >= 0 && g.rows() != expected) {
        throw ShapeError(name + " adjacency has wrong dimension");
    }
    if (!is_symmetric(g, 1e-10)) throw ValidationError(name + " adjacency must be symmetric");
    if ((g.array() < 0.0).any()) throw ValidationError(name + " adjacency must be nonnegative");
    if (g.diagonal().cwiseAbs().maxCoeff() > 0.0) {
        throw ValidationError(name + " adjacency must have zero diagonal");
    }
}

void check_unit_interval(double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("alpha must be in [0, 1]");
}

void check_nonneg(double v, const char* name) {
    if (v < 0.0) throw ValidationError(std::string(name) + " must be nonnegative");
}

}  // namespace

void validate_penalty(const PenaltySpec& spec, int p, int r) {
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            check_nonneg(s.lambda, "lambda");
            if constexpr (std::is_same_v<T, ElasticNetPenalty> ||
                          std::is_same_v<T, GroupLassoPenalty>) {
                check_unit_interval(s.alpha);
            } else {
                check_nonneg(s.lambda_x, "lambda_x");
                check_nonneg(s.lambda_y, "lambda_y");
                validate_adjacency(s.g_x, "predictor", p >= 1 ? p - 1 : -1);
                validate_adjacency(s.g_y, "response", r);
            }
        },
        spec);
}

double penalty_lambda(const PenaltySpec& spec) {
    return std::visit([](const auto& s) { return s.lambda; }, spec);
}

PenaltySpec with_lambda(PenaltySpec spec, double lambda) {
    std::visit([&](auto& s) { s.lambda = lambda; }, spec);
    return spec;
}

std::string penalty_family_name(const PenaltySpec& spec) {
    if (std::holds_alternative<ElasticNetPenalty>(spec)) return "elastic_net";
    if (std::holds_alternative<GroupLassoPenalty>(spec)) return "group_lasso";
    return "network_reg";
}

}  // namespace mtlmm
