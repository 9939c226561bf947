#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mtlmm/types.hpp"

namespace mtlmm {

enum class Scenario { RowWiseSparse, SparseAtRandom };

/// Grouped Gaussian design with a random intercept per group: standard
/// normal predictors, all-ones Z, vec(Lambda_j) ~ N(0, Psi), rows of E_j
/// i.i.d. N(0, Sigma). Defaults reproduce the reference simulation setup
/// (N = 600, J = 10, p = 101, r = 5, q = 1, signal 0.5, fixed Psi and
/// Sigma with random-effect variances 50, 40, 30, 20, 0.16).
struct ScenarioSpec {
    Scenario scenario = Scenario::RowWiseSparse;
    int n_total = 600;
    int n_groups = 10;
    int p = 101;  // including the intercept column
    int r = 5;
    int q = 1;
    std::uint64_t seed = 1;
    double signal = 0.5;
    double nonzero_fraction = 0.7;  // sparse-at-random scenario
    int signal_rows = 21;           // row-wise scenario block size
    bool intercept_in_signal_block = true;
    Eigen::MatrixXd psi_true;    // defaults to the reference 5 x 5 matrix
    Eigen::MatrixXd sigma_true;  // defaults to the reference 5 x 5 matrix

    static Eigen::MatrixXd default_psi();
    static Eigen::MatrixXd default_sigma();

    /// Fills psi_true / sigma_true with the defaults when left empty.
    void apply_defaults();
    void validate() const;
};

struct SplitIndices {
    std::vector<int> train;
    std::vector<int> validation;
    std::vector<int> test;  // stacked row indices, disjoint and exhaustive
};

struct SimulatedDataset {
    GroupedDataset data;
    Eigen::MatrixXd B_true;
    RandomEffects lambda_true;
    SplitIndices split;
    Eigen::MatrixXd psi_used;  // PSD projection of psi_true when needed
    bool psi_projected = false;
};

/// True fixed-effects matrix for the chosen sparsity scenario. The
/// intercept row carries the signal value in both scenarios; the
/// sparse-at-random Bernoulli mask is drawn from the spec seed.
Eigen::MatrixXd make_B_true(const ScenarioSpec& spec);

/// Full seeded generation: design, random effects, noise, responses, and a
/// group-stratified train/validation/test split in equal thirds.
SimulatedDataset generate(const ScenarioSpec& spec);

/// Thresholded absolute-correlation adjacency over the columns of M:
/// entry (a, b) is |corr| when it exceeds the threshold, else 0; zero
/// diagonal. With `binary` the surviving edges get weight 1.
Eigen::MatrixXd adjacency_from_correlation(const Eigen::MatrixXd& m, double threshold,
                                           bool binary = false);

}  // namespace mtlmm
