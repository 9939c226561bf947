#include "mtlmm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mtlmm/errors.hpp"
#include "mtlmm/linalg.hpp"
#include "mtlmm/rng.hpp"

namespace mtlmm {

namespace {

// Stream ids; fixed so each draw is reproducible independently of the others.
enum Stream : std::uint64_t { kMask = 0, kDesign = 1, kRandomEffects = 2, kNoise = 3, kSplit = 4 };

}  // namespace

Eigen::MatrixXd ScenarioSpec::default_psi() {
    Eigen::MatrixXd psi(5, 5);
    psi << 50.00, -1.59, -0.60, -0.22, 2.38,
           -1.59, 40.00, -0.96, -0.91, 0.37,
           -0.60, -0.96, 30.00, -0.43, 0.50,
           -0.22, -0.91, -0.43, 20.00, 0.80,
            2.38,  0.37,  0.50,  0.80, 0.16;
    return psi;
}

Eigen::MatrixXd ScenarioSpec::default_sigma() {
    Eigen::MatrixXd sigma(5, 5);
    sigma << 3.56, -2.17, 1.15, 2.52, 0.00,
            -2.17,  9.04, 0.20, 0.59, 0.00,
             1.15,  0.20, 4.35, 2.85, 0.02,
             2.52,  0.59, 2.85, 5.34, 0.03,
             0.00,  0.00, 0.02, 0.03, 5.03;
    return sigma;
}

void ScenarioSpec::apply_defaults() {
    if (psi_true.size() == 0) psi_true = default_psi();
    if (sigma_true.size() == 0) sigma_true = default_sigma();
}

void ScenarioSpec::validate() const {
    if (n_total < 1 || n_groups < 1) throw ValidationError("N and J must be >= 1");
    if (n_total % n_groups != 0) {
        throw ValidationError("N must be divisible by J for equally-sized groups");
    }
    if (p < 1 || r < 1) throw ValidationError("p and r must be >= 1");
    if (q != 1) {
        throw ValidationError("the generator models a random intercept only (q = 1)");
    }
    if (nonzero_fraction < 0.0 || nonzero_fraction > 1.0) {
        throw ValidationError("nonzero fraction must be in [0, 1]");
    }
    if (signal_rows < 0 || signal_rows > p) {
        throw ValidationError("signal row count must be in [0, p]");
    }
    const int qr = q * r;
    if (psi_true.rows() != qr || psi_true.cols() != qr) {
        throw ShapeError("psi_true must be qr x qr");
    }
    if (sigma_true.rows() != r || sigma_true.cols() != r) {
        throw ShapeError("sigma_true must be r x r");
    }
    if (!is_symmetric(psi_true, 1e-8) || !is_symmetric(sigma_true, 1e-8)) {
        throw ValidationError("true covariance matrices must be symmetric");
    }
}

Eigen::MatrixXd make_B_true(const ScenarioSpec& spec_in) {
    ScenarioSpec spec = spec_in;
    spec.apply_defaults();
    spec.validate();
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(spec.p, spec.r);
    b.row(0).setConstant(spec.signal);
    if (spec.scenario == Scenario::RowWiseSparse) {
        // Signal block of `signal_rows` rows; by default the intercept row
        // counts as the first of them.
        const int extra = spec.intercept_in_signal_block ? spec.signal_rows - 1
                                                         : spec.signal_rows;
        const int last = std::min(1 + std::max(extra, 0), spec.p);
        for (int l = 1; l < last; ++l) b.row(l).setConstant(spec.signal);
    } else {
        std::mt19937_64 engine = make_engine(spec.seed, kMask);
        std::bernoulli_distribution keep(spec.nonzero_fraction);
        for (int l = 1; l < spec.p; ++l) {
            for (int c = 0; c < spec.r; ++c) {
                b(l, c) = keep(engine) ? spec.signal : 0.0;
            }
        }
    }
    return b;
}

namespace {

SplitIndices stratified_thirds(int n_groups, int per_group, std::uint64_t seed) {
    SplitIndices split;
    for (int j = 0; j < n_groups; ++j) {
        std::vector<int> perm(per_group);
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 engine = make_engine(seed, kSplit + 16ULL * (j + 1));
        std::shuffle(perm.begin(), perm.end(), engine);
        const int offset = j * per_group;
        for (int i = 0; i < per_group; ++i) {
            const int row = offset + perm[i];
            switch (i % 3) {
                case 0: split.train.push_back(row); break;
                case 1: split.validation.push_back(row); break;
                default: split.test.push_back(row); break;
            }
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

}  // namespace

SimulatedDataset generate(const ScenarioSpec& spec_in) {
    ScenarioSpec spec = spec_in;
    spec.apply_defaults();
    spec.validate();

    SimulatedDataset sim;
    sim.B_true = make_B_true(spec);
    sim.psi_used = project_psd(spec.psi_true, &sim.psi_projected);

    const Eigen::MatrixXd psi_half = sym_sqrt(sim.psi_used, 0.0);
    Eigen::LLT<Eigen::MatrixXd> sigma_llt(spec.sigma_true);
    if (sigma_llt.info() != Eigen::Success) {
        throw ValidationError("sigma_true must be positive definite");
    }
    const Eigen::MatrixXd sigma_half = sigma_llt.matrixL();

    const int per_group = spec.n_total / spec.n_groups;
    const int qr = spec.q * spec.r;

    std::mt19937_64 design_engine = make_engine(spec.seed, kDesign);
    std::mt19937_64 re_engine = make_engine(spec.seed, kRandomEffects);
    std::mt19937_64 noise_engine = make_engine(spec.seed, kNoise);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<GroupBlock> blocks;
    sim.lambda_true.labels.clear();
    for (int j = 0; j < spec.n_groups; ++j) {
        GroupBlock g;
        g.label = "g" + std::to_string(j + 1);

        g.X.resize(per_group, spec.p);
        g.X.col(0).setOnes();
        for (int i = 0; i < per_group; ++i) {
            for (int l = 1; l < spec.p; ++l) g.X(i, l) = gauss(design_engine);
        }
        g.Z = Eigen::MatrixXd::Ones(per_group, 1);

        Eigen::VectorXd z(qr);
        for (int i = 0; i < qr; ++i) z[i] = gauss(re_engine);
        const Eigen::VectorXd lam_vec = psi_half * z;
        const Eigen::MatrixXd lam =
            Eigen::Map<const Eigen::MatrixXd>(lam_vec.data(), spec.q, spec.r);

        Eigen::MatrixXd noise(per_group, spec.r);
        for (int i = 0; i < per_group; ++i) {
            Eigen::VectorXd e(spec.r);
            for (int c = 0; c < spec.r; ++c) e[c] = gauss(noise_engine);
            noise.row(i) = (sigma_half * e).transpose();
        }

        g.Y = g.X * sim.B_true + g.Z * lam + noise;
        sim.lambda_true.labels.push_back(g.label);
        sim.lambda_true.lambda.push_back(lam);
        blocks.push_back(std::move(g));
    }

    sim.data = GroupedDataset::from_blocks(std::move(blocks));
    sim.split = stratified_thirds(spec.n_groups, per_group, spec.seed);
    return sim;
}

Eigen::MatrixXd adjacency_from_correlation(const Eigen::MatrixXd& m, double threshold,
                                           bool binary) {
    const Eigen::Index d = m.cols();
    if (d < 2) throw ValidationError("adjacency needs at least two columns");
    if (m.rows() < 2) throw ValidationError("adjacency needs at least two rows");

    Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
    Eigen::VectorXd norms = centered.colwise().norm();
    for (Eigen::Index a = 0; a < d; ++a) {
        if (norms[a] == 0.0) {
            throw NumericError("correlation undefined: column " + std::to_string(a + 1) +
                               " is constant");
        }
    }
    Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index a = 0; a < d; ++a) {
        for (Eigen::Index b = a + 1; b < d; ++b) {
            const double corr =
                std::abs(centered.col(a).dot(centered.col(b)) / (norms[a] * norms[b]));
            if (corr > threshold) {
                const double w = binary ? 1.0 : corr;
                adj(a, b) = w;
                adj(b, a) = w;
            }
        }
    }
    return adj;
}

}  // namespace mtlmm
