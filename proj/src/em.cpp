#include "mtlmm/em.hpp"

#include <cmath>
#include <cstdio>

#include "mtlmm/likelihood.hpp"
#include "mtlmm/linalg.hpp"

namespace mtlmm {

namespace {

Eigen::MatrixXd reshape_mean(const Eigen::VectorXd& mean, int q, int r) {
    return Eigen::Map<const Eigen::MatrixXd>(mean.data(), q, r);
}

RandomEffects blups_from_moments(const GroupedDataset& data, const PosteriorMoments& moments) {
    RandomEffects out;
    out.labels = data.labels();
    out.lambda.reserve(moments.groups.size());
    for (const auto& m : moments.groups) {
        out.lambda.push_back(reshape_mean(m.mean, data.dims.q, data.dims.r));
    }
    return out;
}

}  // namespace

ModelParams initialize(const GroupedDataset& data, const PenaltySpec& spec,
                       const EmConfig& cfg) {
    data.validate();
    const auto& dims = data.dims;
    ModelParams params;
    params.Sigma = Eigen::MatrixXd::Identity(dims.r, dims.r);
    params.Psi = Eigen::MatrixXd::Identity(dims.q * dims.r, dims.q * dims.r);
    params.B = solve_penalized(data.stacked_X(), data.stacked_Y(), spec, cfg.solver).B;
    return params;
}

MStepB m_step_B(const GroupedDataset& data, const PosteriorMoments& moments,
                const Eigen::MatrixXd& Sigma, const PenaltySpec& spec,
                const SolverConfig& solver_cfg, const Eigen::MatrixXd* warm_B) {
    const auto& dims = data.dims;
    if (static_cast<int>(moments.groups.size()) != dims.J) {
        throw ShapeError("moments do not cover all groups");
    }
    const Eigen::MatrixXd sqrt_sigma = sym_sqrt(Sigma);
    const Eigen::MatrixXd inv_sqrt_sigma = sym_inv_sqrt(Sigma);

    const int N = dims.total_rows();
    Eigen::MatrixXd x(N, dims.p);
    Eigen::MatrixXd ystar(N, dims.r);
    Eigen::Index row = 0;
    for (int j = 0; j < dims.J; ++j) {
        const auto& g = data.groups[j];
        const Eigen::MatrixXd lam = reshape_mean(moments.groups[j].mean, dims.q, dims.r);
        x.middleRows(row, g.X.rows()) = g.X;
        ystar.middleRows(row, g.X.rows()) = (g.Y - g.Z * lam) * inv_sqrt_sigma;
        row += g.X.rows();
    }

    MStepB out;
    if (warm_B) {
        const Eigen::MatrixXd warm_tilde = (*warm_B) * inv_sqrt_sigma;
        out.solution = solve_penalized(x, ystar, spec, solver_cfg, &warm_tilde);
    } else {
        out.solution = solve_penalized(x, ystar, spec, solver_cfg);
    }
    out.B_tilde = out.solution.B;
    out.B_hat = out.B_tilde * sqrt_sigma;
    return out;
}

Eigen::MatrixXd m_step_Psi(const PosteriorMoments& moments) {
    if (moments.groups.empty()) throw ValidationError("m_step_Psi needs at least one group");
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(moments.groups.front().second_moment.rows(),
                                                moments.groups.front().second_moment.cols());
    for (const auto& m : moments.groups) sum += m.second_moment;
    return symmetrize(sum / static_cast<double>(moments.groups.size()));
}

Eigen::MatrixXd m_step_Sigma(const GroupedDataset& data, const ModelParams& params,
                             const PosteriorMoments& moments) {
    const auto& dims = data.dims;
    params.validate_shapes(dims);
    if (static_cast<int>(moments.groups.size()) != dims.J) {
        throw ShapeError("moments do not cover all groups");
    }
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dims.r, dims.r);
    for (int j = 0; j < dims.J; ++j) {
        const auto& g = data.groups[j];
        const auto& m = moments.groups[j];
        const Eigen::MatrixXd lam = reshape_mean(m.mean, dims.q, dims.r);
        const Eigen::MatrixXd ehat = g.Y - g.Z * lam - g.X * params.B;
        acc += ehat.transpose() * ehat;
        const Eigen::MatrixXd ztz = g.Z.transpose() * g.Z;
        for (int h = 0; h < dims.r; ++h) {
            for (int k = 0; k < dims.r; ++k) {
                const auto block = m.gamma.block(h * dims.q, k * dims.q, dims.q, dims.q);
                acc(h, k) += (block.transpose().array() * ztz.array()).sum();
            }
        }
    }
    return symmetrize(acc / static_cast<double>(dims.total_rows()));
}

long count_nonzero_params(const Eigen::MatrixXd& B, int r, int q) {
    long nnz = 0;
    for (Eigen::Index c = 0; c < B.cols(); ++c) {
        for (Eigen::Index l = 0; l < B.rows(); ++l) {
            if (B(l, c) != 0.0) ++nnz;
        }
    }
    const long qr = static_cast<long>(q) * r;
    return nnz + static_cast<long>(r) * (r + 1) / 2 + qr * (qr + 1) / 2;
}

FitResult fit(const GroupedDataset& data, const PenaltySpec& spec, const EmConfig& cfg,
              const ModelParams* init) {
    data.validate();
    const auto& dims = data.dims;
    validate_penalty(spec, dims.p, dims.r);
    if (cfg.epsilon <= 0.0) throw ValidationError("epsilon must be positive");
    if (cfg.max_iter < 1) throw ValidationError("max_iter must be >= 1");

    FitResult result;
    result.penalty = spec;
    result.params = init ? *init : initialize(data, spec, cfg);
    if (init) result.params.validate(dims);

    double ll = penalized_loglik(data, result.params, spec);
    if (!std::isfinite(ll)) {
        throw DivergenceError("penalized log-likelihood not finite at initialization", {ll});
    }
    result.objective_trace.push_back(ll);
    result.d0 = count_nonzero_params(result.params.B, dims.r, dims.q);
    result.trace.push_back({0, ll, penalty_value(result.params.B, spec),
                            penalty_value(result.params.B, spec), result.d0, 0.0});

    for (int t = 1; t <= cfg.max_iter; ++t) {
        const PosteriorMoments moments = e_step(data, result.params);
        const Eigen::MatrixXd b_prev = result.params.B;
        MStepB mb = m_step_B(data, moments, result.params.Sigma, spec, cfg.solver,
                             &result.params.B);
        result.params.B = mb.B_hat;
        result.params.Psi = m_step_Psi(moments);
        result.params.Sigma = m_step_Sigma(data, result.params, moments);

        const double ll_new = penalized_loglik(data, result.params, spec);
        result.objective_trace.push_back(ll_new);
        result.iterations = t;
        result.d0 = count_nonzero_params(result.params.B, dims.r, dims.q);
        const double max_delta = (result.params.B - b_prev).cwiseAbs().maxCoeff();
        result.trace.push_back({t, ll_new, penalty_value(result.params.B, spec),
                                penalty_value(mb.B_tilde, spec), result.d0, max_delta});
        if (cfg.trace) {
            std::fprintf(stderr, "[em] iter %d loglik_pen %.10g d0 %ld max|dB| %.3g\n", t,
                         ll_new, result.d0, max_delta);
        }
        if (!std::isfinite(ll_new)) {
            throw DivergenceError("penalized log-likelihood diverged at iteration " +
                                      std::to_string(t),
                                  result.objective_trace);
        }
        if (std::abs(ll_new - ll) / std::max(std::abs(ll), 1.0) < cfg.epsilon) {
            result.converged = true;
            ll = ll_new;
            break;
        }
        ll = ll_new;
    }

    result.moments = e_step(data, result.params);
    result.blups = blups_from_moments(data, result.moments);
    return result;
}

FitResult fit_fixed_effects(const GroupedDataset& data, const PenaltySpec& spec,
                            const EmConfig& cfg) {
    data.validate();
    const auto& dims = data.dims;
    validate_penalty(spec, dims.p, dims.r);

    const Eigen::MatrixXd x = data.stacked_X();
    const Eigen::MatrixXd y = data.stacked_Y();
    const SolverSolution sol = solve_penalized(x, y, spec, cfg.solver);

    FitResult result;
    result.penalty = spec;
    result.params.B = sol.B;
    const Eigen::MatrixXd resid = y - x * sol.B;
    result.params.Sigma =
        symmetrize(resid.transpose() * resid / static_cast<double>(dims.total_rows()));
    const int qr = dims.q * dims.r;
    result.params.Psi = Eigen::MatrixXd::Zero(qr, qr);

    result.moments.groups.reserve(dims.J);
    result.blups.labels = data.labels();
    for (int j = 0; j < dims.J; ++j) {
        GroupMoments m;
        m.gamma = Eigen::MatrixXd::Zero(qr, qr);
        m.mean = Eigen::VectorXd::Zero(qr);
        m.second_moment = Eigen::MatrixXd::Zero(qr, qr);
        result.moments.groups.push_back(std::move(m));
        result.blups.lambda.push_back(Eigen::MatrixXd::Zero(dims.q, dims.r));
    }

    long nnz = 0;
    for (Eigen::Index c = 0; c < sol.B.cols(); ++c) {
        for (Eigen::Index l = 0; l < sol.B.rows(); ++l) {
            if (sol.B(l, c) != 0.0) ++nnz;
        }
    }
    result.d0 = nnz + static_cast<long>(dims.r) * (dims.r + 1) / 2;
    result.iterations = 1;
    result.converged = sol.converged;
    result.objective_trace.push_back(penalized_loglik(data, result.params, spec));
    result.trace.push_back({1, result.objective_trace.back(),
                            penalty_value(sol.B, spec), penalty_value(sol.B, spec),
                            result.d0, 0.0});
    return result;
}

Eigen::VectorXd pvre(const Eigen::MatrixXd& Psi, const Eigen::MatrixXd& Sigma) {
    const Eigen::Index r = Sigma.rows();
    if (r == 0 || Psi.rows() % r != 0) {
        throw ShapeError("Psi dimension must be a multiple of the response count");
    }
    const Eigen::Index q = Psi.rows() / r;
    Eigen::VectorXd out(r);
    for (Eigen::Index c = 0; c < r; ++c) {
        double re_var = 0.0;
        for (Eigen::Index a = 0; a < q; ++a) re_var += Psi(c * q + a, c * q + a);
        const double denom = re_var + Sigma(c, c);
        if (denom == 0.0) {
            throw NumericError("PVRE undefined: zero total variance for response " +
                               std::to_string(c + 1));
        }
        out[c] = re_var / denom;
    }
    return out;
}

Eigen::VectorXd pvre(const ModelParams& params) {
    return pvre(params.Psi, params.Sigma);
}

}  // namespace mtlmm
