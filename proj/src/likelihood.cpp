#include "mtlmm/likelihood.hpp"

#include <cmath>

#include "mtlmm/errors.hpp"
#include "mtlmm/linalg.hpp"

namespace mtlmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

struct SigmaFactor {
    Eigen::MatrixXd inverse;
    double logdet = 0.0;
};

SigmaFactor factor_sigma(const Eigen::MatrixXd& sigma) {
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) {
        throw SingularMatrixError("residual covariance Sigma is not positive definite");
    }
    SigmaFactor f;
    f.inverse = llt.solve(Eigen::MatrixXd::Identity(sigma.rows(), sigma.cols()));
    f.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return f;
}

// vec(A) for a column-stacked matrix.
Eigen::VectorXd vec(const Eigen::MatrixXd& a) {
    return Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
}

}  // namespace

double marginal_loglik(const GroupedDataset& data, const ModelParams& params) {
    const auto& dims = data.dims;
    params.validate_shapes(dims);

    const SigmaFactor sf = factor_sigma(params.Sigma);
    // Psi = L L' with L of size qr x k; k < qr handles singular priors.
    const Eigen::MatrixXd half = psd_half_factor(params.Psi);
    const Eigen::Index k = half.cols();

    double total = 0.0;
    for (const auto& g : data.groups) {
        const Eigen::Index nj = g.Y.rows();
        const Eigen::MatrixXd resid = g.Y - g.X * params.B;
        const Eigen::MatrixXd ztz = g.Z.transpose() * g.Z;

        // e' (Sigma^-1 (x) I) e = tr(Sigma^-1 E'E)
        double quad = (sf.inverse * (resid.transpose() * resid)).trace();
        double logdet = static_cast<double>(nj) * sf.logdet;

        if (k > 0) {
            // A_j = Sigma^-1 (x) Z'Z; M = I_k + L' A_j L
            const Eigen::Index qr = half.rows();
            Eigen::MatrixXd a(qr, qr);
            for (int h = 0; h < dims.r; ++h) {
                for (int c = 0; c < dims.r; ++c) {
                    a.block(h * dims.q, c * dims.q, dims.q, dims.q) = sf.inverse(h, c) * ztz;
                }
            }
            Eigen::MatrixXd m = Eigen::MatrixXd::Identity(k, k) + half.transpose() * a * half;
            Eigen::LLT<Eigen::MatrixXd> mllt(m);
            if (mllt.info() != Eigen::Success) {
                throw SingularMatrixError("marginal covariance V_j is not positive definite");
            }
            // u = (I (x) Z)'(Sigma^-1 (x) I) e = vec(Z' E Sigma^-1)
            Eigen::VectorXd u = vec(g.Z.transpose() * resid * sf.inverse);
            Eigen::VectorXd w = half.transpose() * u;
            quad -= w.dot(mllt.solve(w));
            logdet += 2.0 * mllt.matrixLLT().diagonal().array().log().sum();
        }

        total += -0.5 * static_cast<double>(nj * dims.r) * kLog2Pi - 0.5 * logdet - 0.5 * quad;
    }
    return total;
}

double penalty_value(const Eigen::MatrixXd& B, const PenaltySpec& spec) {
    const Eigen::Index p = B.rows();
    const Eigen::Index r = B.cols();
    validate_penalty(spec, static_cast<int>(p), static_cast<int>(r));
    if (p < 1) throw ShapeError("B must have at least the intercept row");

    const auto coef = B.bottomRows(p - 1);  // intercepts excluded everywhere

    if (const auto* en = std::get_if<ElasticNetPenalty>(&spec)) {
        const double ridge = coef.array().square().sum();
        const double l1 = coef.array().abs().sum();
        return en->lambda * ((1.0 - en->alpha) * ridge + en->alpha * l1);
    }
    if (const auto* gl = std::get_if<GroupLassoPenalty>(&spec)) {
        const double ridge = coef.array().square().sum();
        double row_norms = 0.0;
        for (Eigen::Index l = 0; l < coef.rows(); ++l) {
            row_norms += coef.row(l).norm();
        }
        return gl->lambda * ((1.0 - gl->alpha) * ridge + gl->alpha * row_norms);
    }
    const auto& net = std::get<NetworkRegPenalty>(spec);
    const Eigen::MatrixXd lap_x = graph_laplacian(net.g_x);
    const Eigen::MatrixXd lap_y = graph_laplacian(net.g_y);
    const double l1 = net.lambda * coef.array().abs().sum();
    const double qx = net.lambda_x * (coef.transpose() * lap_x * coef).trace();
    const double qy = net.lambda_y * (coef * lap_y * coef.transpose()).trace();
    return l1 + qx + qy;
}

double penalized_loglik(const GroupedDataset& data, const ModelParams& params,
                        const PenaltySpec& spec) {
    return marginal_loglik(data, params) - penalty_value(params.B, spec);
}

Eigen::MatrixXd predict(const Eigen::MatrixXd& X_new, const ModelParams& params) {
    if (X_new.cols() != params.B.rows()) {
        throw ShapeError("X_new column count does not match fixed-effect rows");
    }
    return X_new * params.B;
}

Eigen::MatrixXd predict(const Eigen::MatrixXd& X_new, const Eigen::MatrixXd& Z_new,
                        const ModelParams& params, const RandomEffects& blups,
                        const std::string& group) {
    const Eigen::MatrixXd* lam = blups.find(group);
    if (!lam) {
        throw MissingGroupError("group '" + group + "' has no estimated random effect");
    }
    if (X_new.rows() != Z_new.rows()) {
        throw ShapeError("X_new and Z_new must have the same row count");
    }
    if (Z_new.cols() != lam->rows()) {
        throw ShapeError("Z_new column count does not match random-effect rows");
    }
    return predict(X_new, params) + Z_new * (*lam);
}

}  // namespace mtlmm
