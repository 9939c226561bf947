#include <doctest.h>

#include <cmath>
#include <random>

#include "mtlmm/errors.hpp"
#include "mtlmm/rng.hpp"
#include "mtlmm/solvers.hpp"
#include "oracles.hpp"

using namespace mtlmm;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

NetworkRegPenalty small_net(int p, int r, double lambda, double lx, double ly,
                            std::uint64_t seed = 0) {
    NetworkRegPenalty net;
    net.lambda = lambda;
    net.lambda_x = lx;
    net.lambda_y = ly;
    net.g_x = MatrixXd::Zero(p - 1, p - 1);
    net.g_y = MatrixXd::Zero(r, r);
    if (seed) {
        std::mt19937_64 engine = make_engine(seed, 99);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int i = 0; i < p - 1; ++i) {
            for (int j = i + 1; j < p - 1; ++j) {
                const double w = unif(engine) < 0.4 ? unif(engine) : 0.0;
                net.g_x(i, j) = net.g_x(j, i) = w;
            }
        }
        for (int i = 0; i < r; ++i) {
            for (int j = i + 1; j < r; ++j) {
                const double w = unif(engine) < 0.5 ? unif(engine) : 0.0;
                net.g_y(i, j) = net.g_y(j, i) = w;
            }
        }
    }
    return net;
}

}  // namespace

TEST_CASE("soft threshold") {
    CHECK(soft_threshold(3.0, 1.0) == 2.0);
    CHECK(soft_threshold(-0.5, 1.0) == 0.0);
    CHECK(soft_threshold(-2.0, 0.5) == -1.5);
    CHECK(soft_threshold(1.0, 1.0) == 0.0);  // ties resolve to zero
    CHECK_THROWS_AS(soft_threshold(1.0, -0.1), ValidationError);
}

TEST_CASE("group soft threshold") {
    Eigen::Vector2d v(3.0, 4.0);
    CHECK(group_soft_threshold(v, 5.0).isZero(0.0));  // norm exactly at threshold
    const VectorXd shrunk = group_soft_threshold(v, 2.5);
    CHECK(shrunk[0] == doctest::Approx(1.5));
    CHECK(shrunk[1] == doctest::Approx(2.0));
    CHECK(group_soft_threshold(VectorXd::Zero(3), 1.0).isZero(0.0));
}

TEST_CASE("elastic net: lambda = 0 recovers least squares") {
    MatrixXd x, y;
    oracles::random_xy(7, 30, 5, 2, x, y);
    const SolverSolution sol = solve_elastic_net(x, y, {0.0, 0.5}, {});
    CHECK((sol.B - oracles::ols(x, y)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(sol.converged);
}

TEST_CASE("elastic net: huge lambda zeroes coefficients, intercepts take the mean") {
    MatrixXd x, y;
    oracles::random_xy(8, 40, 4, 2, x, y);
    // Center the predictors so the intercept equals the response mean.
    for (int c = 1; c < 4; ++c) x.col(c).array() -= x.col(c).mean();
    const SolverSolution sol = solve_elastic_net(x, y, {1e9, 0.5}, {});
    CHECK(sol.B.bottomRows(3).isZero(0.0));
    for (int c = 0; c < 2; ++c) {
        CHECK(sol.B(0, c) == doctest::Approx(y.col(c).mean()).epsilon(1e-9));
    }
}

TEST_CASE("elastic net matches the proximal-gradient reference") {
    MatrixXd x, y;
    oracles::random_xy(9, 6, 3, 2, x, y);
    const ElasticNetPenalty pen{0.7, 0.5};
    const SolverSolution sol = solve_elastic_net(x, y, pen, {});
    const auto ref = oracles::prox_gradient_solve(x, y, pen);
    CHECK(std::abs(sol.objective - ref.objective) < 1e-5);
    CHECK((sol.B - ref.B).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("group lasso: lambda = 0 recovers least squares") {
    MatrixXd x, y;
    oracles::random_xy(17, 30, 5, 3, x, y);
    const SolverSolution sol = solve_group_lasso(x, y, {0.0, 0.5}, {});
    CHECK((sol.B - oracles::ols(x, y)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("group lasso: orthonormal design has the closed-form row solution") {
    // Orthonormal columns via a QR factor; X'X = I makes each penalized row
    // update exact in a single pass.
    MatrixXd raw, y;
    oracles::random_xy(18, 24, 4, 2, raw, y);
    Eigen::HouseholderQR<MatrixXd> qr(raw);
    MatrixXd x = qr.householderQ() * MatrixXd::Identity(24, 4);
    const double lambda = 0.8;
    const SolverSolution sol = solve_group_lasso(x, y, {lambda, 1.0}, {});
    for (int l = 1; l < 4; ++l) {
        const VectorXd target = group_soft_threshold(y.transpose() * x.col(l), lambda);
        CHECK((sol.B.row(l).transpose() - target).cwiseAbs().maxCoeff() < 1e-7);
    }
}

TEST_CASE("group lasso rows are jointly zero or jointly active") {
    MatrixXd x, y;
    oracles::random_xy(19, 25, 6, 3, x, y);
    const double lmax = lambda_max(x, y, GroupLassoPenalty{0.0, 1.0});
    int zero_rows = 0;
    for (double frac : {0.1, 0.3, 0.6, 0.9}) {
        const SolverSolution sol = solve_group_lasso(x, y, {frac * lmax, 1.0}, {});
        for (int l = 1; l < 6; ++l) {
            const bool all_zero = sol.B.row(l).isZero(0.0);
            const bool none_zero = (sol.B.row(l).array() != 0.0).all();
            CHECK((all_zero || none_zero));
            if (all_zero) ++zero_rows;
        }
    }
    CHECK(zero_rows > 0);  // near lambda_max rows must drop
}

TEST_CASE("group lasso matches the proximal-gradient reference") {
    MatrixXd x, y;
    oracles::random_xy(20, 6, 3, 2, x, y);
    const GroupLassoPenalty pen{0.6, 0.7};
    const SolverSolution sol = solve_group_lasso(x, y, pen, {});
    const auto ref = oracles::prox_gradient_solve(x, y, pen);
    CHECK(std::abs(sol.objective - ref.objective) < 1e-5);
    CHECK((sol.B - ref.B).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("network penalty with zero Laplacian weights is the plain lasso") {
    MatrixXd x, y;
    oracles::random_xy(21, 20, 5, 2, x, y);
    const SolverSolution net = solve_network_reg(x, y, small_net(5, 2, 0.4, 0.0, 0.0), {});
    const SolverSolution lasso = solve_elastic_net(x, y, {0.4, 1.0}, {});
    CHECK((net.B - lasso.B).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("a strong predictor-graph edge ties duplicated columns together") {
    MatrixXd x, y;
    oracles::random_xy(22, 30, 3, 1, x, y);
    x.conservativeResize(30, 4);
    x.col(3) = x.col(2);  // duplicated predictor
    y = x.col(2) * 2.0 + 0.01 * y;
    NetworkRegPenalty net = small_net(4, 1, 0.0, 1e4, 0.0);
    net.g_x(1, 2) = net.g_x(2, 1) = 1.0;  // edge between the duplicated pair
    const SolverSolution sol = solve_network_reg(x, y, net, {});
    CHECK(std::abs(sol.B(2, 0) - sol.B(3, 0)) < 1e-4);
}

TEST_CASE("network solver matches the proximal-gradient reference") {
    MatrixXd x, y;
    oracles::random_xy(23, 6, 3, 2, x, y);
    const NetworkRegPenalty pen = small_net(3, 2, 0.3, 0.2, 0.1, 23);
    const SolverSolution sol = solve_network_reg(x, y, pen, {});
    const auto ref = oracles::prox_gradient_solve(x, y, pen);
    CHECK(std::abs(sol.objective - ref.objective) < 1e-5);
    CHECK((sol.B - ref.B).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("oracle equivalence across families on random instances") {
    int instance = 0;
    for (std::uint64_t seed = 200; instance < 15; ++seed, ++instance) {
        const int n = 10 + static_cast<int>(seed % 30);
        const int p = 3 + static_cast<int>(seed % 6);
        const int r = 1 + static_cast<int>(seed % 3);
        MatrixXd x, y;
        oracles::random_xy(seed, n, p, r, x, y);

        const ElasticNetPenalty en{0.5, 0.6};
        CHECK(std::abs(solve_elastic_net(x, y, en, {}).objective -
                       oracles::prox_gradient_solve(x, y, en).objective) < 1e-5);

        const GroupLassoPenalty gl{0.5, 0.6};
        CHECK(std::abs(solve_group_lasso(x, y, gl, {}).objective -
                       oracles::prox_gradient_solve(x, y, gl).objective) < 1e-5);

        const NetworkRegPenalty net = small_net(p, r, 0.3, 0.2, 0.1, seed);
        CHECK(std::abs(solve_network_reg(x, y, net, {}).objective -
                       oracles::prox_gradient_solve(x, y, net).objective) < 1e-5);
    }
}

TEST_CASE("KKT residual is small at convergence") {
    MatrixXd x, y;
    oracles::random_xy(31, 40, 6, 3, x, y);
    SolverConfig cfg;
    CHECK(solve_elastic_net(x, y, {0.5, 0.5}, cfg).kkt_residual < 10 * cfg.tol);
    CHECK(solve_group_lasso(x, y, {0.5, 0.5}, cfg).kkt_residual < 10 * cfg.tol);
    CHECK(solve_network_reg(x, y, small_net(6, 3, 0.5, 0.2, 0.1, 31), cfg).kkt_residual <
          10 * cfg.tol);
}

TEST_CASE("warm start reaches the cold-start solution") {
    MatrixXd x, y;
    oracles::random_xy(33, 30, 5, 2, x, y);
    const ElasticNetPenalty en{0.4, 0.5};
    const SolverSolution cold = solve_elastic_net(x, y, en, {});
    // Perturbed previous iterate as warm start.
    MatrixXd warm = cold.B;
    warm.array() += 0.05;
    const SolverSolution warm_sol = solve_elastic_net(x, y, en, {}, &warm);
    CHECK((warm_sol.B - cold.B).cwiseAbs().maxCoeff() < 1e-6);

    const GroupLassoPenalty gl{0.4, 0.5};
    const SolverSolution gl_cold = solve_group_lasso(x, y, gl, {});
    warm = gl_cold.B;
    warm.array() *= 1.1;
    CHECK((solve_group_lasso(x, y, gl, {}, &warm).B - gl_cold.B).cwiseAbs().maxCoeff() <
          1e-6);

    const NetworkRegPenalty net = small_net(5, 2, 0.4, 0.1, 0.1, 33);
    const SolverSolution net_cold = solve_network_reg(x, y, net, {});
    warm = net_cold.B;
    warm.array() += 0.03;
    CHECK((solve_network_reg(x, y, net, {}, &warm).B - net_cold.B).cwiseAbs().maxCoeff() <
          1e-6);
}

TEST_CASE("solutions are invariant to how the rows were stacked") {
    MatrixXd x, y;
    oracles::random_xy(35, 24, 4, 2, x, y);
    MatrixXd x2(24, 4), y2(24, 2);
    x2 << x.bottomRows(12), x.topRows(12);
    y2 << y.bottomRows(12), y.topRows(12);
    const ElasticNetPenalty en{0.3, 0.5};
    CHECK((solve_elastic_net(x, y, en, {}).B - solve_elastic_net(x2, y2, en, {}).B)
              .cwiseAbs()
              .maxCoeff() < 1e-8);
}

TEST_CASE("zero-variance columns are forced to zero and flagged") {
    MatrixXd x, y;
    oracles::random_xy(36, 20, 4, 2, x, y);
    x.col(2).setZero();
    const SolverSolution sol = solve_elastic_net(x, y, {0.1, 0.5}, {});
    CHECK(sol.zero_variance_columns);
    CHECK(sol.B.row(2).isZero(0.0));
}

TEST_CASE("asymmetric adjacency is rejected") {
    MatrixXd x, y;
    oracles::random_xy(37, 10, 3, 2, x, y);
    NetworkRegPenalty net = small_net(3, 2, 0.1, 0.1, 0.1);
    net.g_x(0, 1) = 0.5;  // breaks symmetry
    CHECK_THROWS_AS(solve_network_reg(x, y, net, {}), ValidationError);
}

TEST_CASE("lambda_max zeroes every coefficient at the intercept-only fit") {
    MatrixXd x, y;
    oracles::random_xy(38, 30, 5, 2, x, y);
    SUBCASE("elastic net") {
        const double lmax = lambda_max(x, y, ElasticNetPenalty{0.0, 0.5});
        const SolverSolution at = solve_elastic_net(x, y, {lmax * 1.0001, 0.5}, {});
        CHECK(at.B.bottomRows(4).isZero(0.0));
        const SolverSolution below = solve_elastic_net(x, y, {lmax * 0.8, 0.5}, {});
        CHECK_FALSE(below.B.bottomRows(4).isZero(0.0));
    }
    SUBCASE("group lasso") {
        const double lmax = lambda_max(x, y, GroupLassoPenalty{0.0, 1.0});
        const SolverSolution at = solve_group_lasso(x, y, {lmax * 1.0001, 1.0}, {});
        CHECK(at.B.bottomRows(4).isZero(0.0));
    }
}
