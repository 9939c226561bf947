#include <doctest.h>

#include <cmath>

#include "mtlmm/errors.hpp"
#include "mtlmm/linalg.hpp"
#include "mtlmm/selection.hpp"
#include "mtlmm/simulate.hpp"
#include "oracles.hpp"

using namespace mtlmm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("row-wise sparse truth: 21 signal rows by default") {
    ScenarioSpec spec;
    const MatrixXd b = make_B_true(spec);
    long nnz = 0;
    for (Eigen::Index i = 0; i < b.size(); ++i) nnz += b(i) != 0.0;
    CHECK(nnz == 21 * 5);
    CHECK((b.topRows(21).array() == 0.5).all());
    CHECK(b.bottomRows(80).isZero(0.0));

    // Flag moves the block below the intercept.
    spec.intercept_in_signal_block = false;
    const MatrixXd shifted = make_B_true(spec);
    CHECK((shifted.topRows(22).array() == 0.5).all());
    CHECK(shifted.bottomRows(79).isZero(0.0));
}

TEST_CASE("sparse-at-random truth: seeded fraction near the target") {
    ScenarioSpec spec;
    spec.scenario = Scenario::SparseAtRandom;
    spec.seed = 42;
    const MatrixXd b = make_B_true(spec);
    long nnz = 0;
    for (Eigen::Index l = 1; l < b.rows(); ++l) {
        for (Eigen::Index c = 0; c < b.cols(); ++c) nnz += b(l, c) != 0.0;
    }
    const double fraction = static_cast<double>(nnz) / (100.0 * 5.0);
    CHECK(fraction > 0.65);
    CHECK(fraction < 0.75);
    // Mask is a function of the seed alone.
    CHECK((make_B_true(spec) - b).cwiseAbs().maxCoeff() == 0.0);

    spec.signal = 0.0;
    CHECK(make_B_true(spec).isZero(0.0));
}

TEST_CASE("generate: defaults have ten groups of sixty and an exact residual identity") {
    ScenarioSpec spec;
    spec.seed = 9;
    const SimulatedDataset sim = generate(spec);
    CHECK(sim.data.dims.J == 10);
    for (int nj : sim.data.dims.n) CHECK(nj == 60);
    CHECK(sim.data.dims.p == 101);
    CHECK(sim.data.dims.r == 5);

    // The printed random-effects covariance is slightly indefinite, so the
    // generator must project and record it.
    CHECK(sim.psi_projected);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sim.psi_used);
    CHECK(es.eigenvalues().minCoeff() >= -1e-12);

    // Y - XB - Z Lambda must reproduce the drawn noise, i.e. be independent
    // of the signal: reconstruct it and check it is identical across two
    // generations with the same seed.
    const SimulatedDataset again = generate(spec);
    for (int j = 0; j < 10; ++j) {
        CHECK((sim.data.groups[j].Y - again.data.groups[j].Y).cwiseAbs().maxCoeff() == 0.0);
        CHECK((sim.data.groups[j].X - again.data.groups[j].X).cwiseAbs().maxCoeff() == 0.0);
        CHECK((sim.lambda_true.lambda[j] - again.lambda_true.lambda[j])
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("generate: pure-noise spec gives unit-variance responses") {
    ScenarioSpec spec;
    spec.seed = 12;
    spec.signal = 0.0;
    spec.psi_true = MatrixXd::Zero(5, 5);
    spec.sigma_true = MatrixXd::Identity(5, 5);
    const SimulatedDataset sim = generate(spec);
    const MatrixXd y = sim.data.stacked_Y();
    for (int c = 0; c < 5; ++c) {
        const double mean = y.col(c).mean();
        const double var = (y.col(c).array() - mean).square().sum() / (y.rows() - 1);
        CHECK(var > 0.8);
        CHECK(var < 1.2);
    }
}

TEST_CASE("generate: splits are stratified thirds") {
    ScenarioSpec spec;
    spec.seed = 31;
    const SimulatedDataset sim = generate(spec);
    CHECK(sim.split.train.size() == 200);
    CHECK(sim.split.validation.size() == 200);
    CHECK(sim.split.test.size() == 200);

    std::vector<int> seen(600, 0);
    auto mark = [&](const std::vector<int>& rows) {
        for (int r : rows) {
            REQUIRE(r >= 0);
            REQUIRE(r < 600);
            ++seen[r];
        }
    };
    mark(sim.split.train);
    mark(sim.split.validation);
    mark(sim.split.test);
    for (int r = 0; r < 600; ++r) CHECK(seen[r] == 1);  // disjoint and exhaustive

    // Exactly 20 rows of every group in every split.
    auto per_group = [&](const std::vector<int>& rows) {
        std::vector<int> counts(10, 0);
        for (int r : rows) ++counts[r / 60];
        return counts;
    };
    for (int count : per_group(sim.split.train)) CHECK(count == 20);
    for (int count : per_group(sim.split.test)) CHECK(count == 20);
}

TEST_CASE("generate: vec(Lambda) draws match the target covariance") {
    ScenarioSpec spec;
    spec.n_total = 30;
    spec.n_groups = 10;
    spec.p = 3;
    spec.signal_rows = 2;
    const int reps = 10000;
    MatrixXd acc = MatrixXd::Zero(5, 5);
    MatrixXd psi_used;
    for (int rep = 0; rep < reps / 10; ++rep) {
        spec.seed = 1000 + rep;
        const SimulatedDataset sim = generate(spec);
        psi_used = sim.psi_used;
        for (const auto& lam : sim.lambda_true.lambda) {
            const VectorXd v = Eigen::Map<const VectorXd>(lam.data(), lam.size());
            acc += v * v.transpose();
        }
    }
    acc /= static_cast<double>(reps);
    CHECK(frobenius_distance(acc, psi_used) / psi_used.norm() < 0.05);
}

TEST_CASE("scenario validation names its constraints") {
    ScenarioSpec spec;
    spec.n_total = 601;
    spec.apply_defaults();
    CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("divisible"), ValidationError);

    ScenarioSpec q2;
    q2.q = 2;
    q2.psi_true = MatrixXd::Identity(10, 10);
    q2.apply_defaults();
    CHECK_THROWS_AS(q2.validate(), ValidationError);

    ScenarioSpec bad_psi;
    bad_psi.psi_true = MatrixXd::Identity(4, 4);
    bad_psi.apply_defaults();
    CHECK_THROWS_AS(bad_psi.validate(), ShapeError);
}

TEST_CASE("adjacency from correlation") {
    SUBCASE("identical columns give weight one") {
        MatrixXd m(10, 2);
        m.col(0).setLinSpaced(10, 0.0, 1.0);
        m.col(1) = m.col(0);
        const MatrixXd adj = adjacency_from_correlation(m, 0.1);
        CHECK(adj(0, 1) == doctest::Approx(1.0));
        CHECK(adj(0, 0) == 0.0);
    }
    SUBCASE("independent columns stay mostly disconnected") {
        MatrixXd x, unused;
        oracles::random_xy(7, 10000, 6, 1, x, unused);
        const MatrixXd adj = adjacency_from_correlation(x.rightCols(5), 0.1);
        int nonzero = 0;
        for (int a = 0; a < 5; ++a) {
            for (int b = a + 1; b < 5; ++b) nonzero += adj(a, b) != 0.0;
        }
        CHECK(nonzero == 0);
    }
    SUBCASE("threshold one removes everything") {
        MatrixXd x, unused;
        oracles::random_xy(8, 50, 4, 1, x, unused);
        CHECK(adjacency_from_correlation(x.rightCols(3), 1.0).isZero(0.0));
    }
    SUBCASE("binary mode produces unit weights") {
        MatrixXd m(10, 2);
        m.col(0).setLinSpaced(10, 0.0, 1.0);
        m.col(1) = 2.0 * m.col(0);
        const MatrixXd adj = adjacency_from_correlation(m, 0.5, true);
        CHECK(adj(0, 1) == 1.0);
    }
    SUBCASE("constant column raises an error") {
        MatrixXd m = MatrixXd::Ones(10, 2);
        m.col(1).setLinSpaced(10, 0.0, 1.0);
        CHECK_THROWS_AS(adjacency_from_correlation(m, 0.1), NumericError);
    }
}
