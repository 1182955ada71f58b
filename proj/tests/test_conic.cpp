#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pnpmpc/affine_builder.hpp"
#include "pnpmpc/conic.hpp"
#include "pnpmpc/qp.hpp"

using namespace pnpmpc;

namespace {

Mat random_symmetric(std::mt19937& rng, int n, double scale = 1.0)
{
    std::uniform_real_distribution<double> unif(-scale, scale);
    Mat S = Mat::NullaryExpr(n, n, [&] { return unif(rng); });
    return symmetrize(S);
}

Mat random_psd(std::mt19937& rng, int n)
{
    Mat S = random_symmetric(rng, n);
    return S * S.transpose();
}

// Dense brute-force reference for small strictly convex QPs: enumerate active
// sets of the inequality rows and keep the best KKT point that is feasible
// with nonnegative multipliers.
Vec active_set_reference(const Mat& P, const Vec& q, const Mat& Ai, const Vec& bi)
{
    const int d = static_cast<int>(P.rows());
    const int m = static_cast<int>(Ai.rows());
    double best = std::numeric_limits<double>::infinity();
    Vec best_z;
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
        std::vector<int> act;
        for (int r = 0; r < m; ++r)
            if (mask & (1u << r)) act.push_back(r);
        const int k = static_cast<int>(act.size());
        Mat kkt = Mat::Zero(d + k, d + k);
        kkt.topLeftCorner(d, d) = P;
        for (int r = 0; r < k; ++r) {
            kkt.block(d + r, 0, 1, d) = Ai.row(act[r]);
            kkt.block(0, d + r, d, 1) = Ai.row(act[r]).transpose();
        }
        Vec rhs(d + k);
        rhs.head(d) = -q;
        for (int r = 0; r < k; ++r) rhs(d + r) = bi(act[r]);
        Eigen::FullPivLU<Mat> lu(kkt);
        if (!lu.isInvertible()) continue;
        Vec sol = lu.solve(rhs);
        Vec z = sol.head(d);
        Vec mu = sol.tail(k);
        if ((mu.array() < -1e-9).any()) continue;
        if (((Ai * z - bi).array() > 1e-9).any()) continue;
        const double obj = 0.5 * z.dot(P * z) + q.dot(z);
        if (obj < best) {
            best = obj;
            best_z = z;
        }
    }
    REQUIRE(best_z.size() == d);
    return best_z;
}

}  // namespace

TEST_CASE("psd projection clamps negative eigenvalues")
{
    Mat S = Vec{{1.0, -1.0}}.asDiagonal();
    Mat proj = project_psd(S);
    Mat expect = Vec{{1.0, 0.0}}.asDiagonal();
    REQUIRE((proj - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("psd projection leaves PSD input unchanged and is idempotent")
{
    std::mt19937 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Mat S = random_psd(rng, 4);
        REQUIRE((project_psd(S) - S).cwiseAbs().maxCoeff() < 1e-12);
        Mat G = random_symmetric(rng, 4, 2.0);
        Mat once = project_psd(G);
        REQUIRE((project_psd(once) - once).cwiseAbs().maxCoeff() < 1e-11);
    }
}

TEST_CASE("psd projection is Frobenius-nearest against random PSD samples")
{
    std::mt19937 rng(11);
    Mat S = random_symmetric(rng, 5, 1.5);
    Mat proj = project_psd(S);
    const double d0 = (S - proj).norm();
    for (int trial = 0; trial < 1000; ++trial) {
        Mat cand = random_psd(rng, 5);
        REQUIRE((S - cand).norm() >= d0 - 1e-12);
    }
}

TEST_CASE("psd projection rejects non-symmetric input")
{
    Mat S{{0.0, 1.0}, {0.0, 0.0}};
    REQUIRE_THROWS_AS(project_psd(S), std::invalid_argument);
}

TEST_CASE("LMI: sign-constrained scalar pinned to -1 is infeasible")
{
    AffineLMIProblem prob;
    prob.dim = 1;
    LMIBlock blk;
    blk.S0 = Mat::Zero(1, 1);
    blk.terms.emplace_back(0, Mat::Identity(1, 1));
    prob.blocks.push_back(blk);
    prob.linear_eq.push_back({{{0, 1.0}}, -1.0});
    auto res = solve_lmi_feasibility(prob);
    REQUIRE(res.status == LMIStatus::Infeasible);
}

TEST_CASE("LMI: interval feasibility via diag(z, 1-z)")
{
    AffineLMIProblem prob;
    prob.dim = 1;
    LMIBlock blk;
    blk.S0 = Mat{{0.0, 0.0}, {0.0, 1.0}};
    Mat basis{{1.0, 0.0}, {0.0, -1.0}};
    blk.terms.emplace_back(0, basis);
    prob.blocks.push_back(blk);
    auto res = solve_lmi_feasibility(prob);
    REQUIRE(res.status == LMIStatus::Feasible);
    const double z = res.z(0);
    REQUIRE(z >= -1e-7);
    REQUIRE(z <= 1.0 + 1e-7);
    REQUIRE(min_eigenvalue(blk.eval(res.z)) >= -1e-6);
}

TEST_CASE("LMI: discrete Lyapunov feasibility with eigencheck verifier")
{
    // P - A^T P A >= margin I, P >= I for a Schur-stable A.
    Mat A{{0.9, 0.2}, {0.0, 0.8}};
    VarPool pool;
    MatrixVar P = pool.symmetric(2);
    AffineLMIProblem prob;
    prob.dim = pool.dim();

    SymBlockBuilder decrease({2});
    decrease.add_term(0, 0, P);
    decrease.add_term(0, 0, P, -A.transpose(), A);
    decrease.add_const(0, 0, -0.01 * Mat::Identity(2, 2));
    prob.blocks.push_back(decrease.build());
    prob.blocks.push_back(definite_block(P, 1.0));

    LMIOptions opts;
    opts.z0 = Vec::Zero(prob.dim);
    auto res = solve_lmi_feasibility(prob, opts);
    REQUIRE(res.status == LMIStatus::Feasible);
    Mat Pv = P.value(res.z);
    REQUIRE(min_eigenvalue(Pv - Mat::Identity(2, 2)) >= -1e-6);
    REQUIRE(min_eigenvalue(Pv - A.transpose() * Pv * A - 0.01 * Mat::Identity(2, 2)) >= -1e-6);
}

TEST_CASE("QP: scalar bound")
{
    QuadraticProgram qp;
    qp.dim = 1;
    qp.P = SpMat(1, 1);
    qp.P.insert(0, 0) = 2.0;
    qp.q = Vec::Zero(1);
    qp.A_eq = SpMat(0, 1);
    qp.b_eq = Vec(0);
    qp.A_ineq = SpMat(1, 1);
    qp.A_ineq.insert(0, 0) = -1.0;  // -z <= -1
    qp.b_ineq = Vec::Constant(1, -1.0);
    auto res = solve_qp(qp);
    REQUIRE(res.status == QPStatus::Solved);
    REQUIRE(res.z(0) == Catch::Approx(1.0).margin(1e-5));
    REQUIRE(res.objective == Catch::Approx(1.0).margin(1e-5));
}

TEST_CASE("QP: unconstrained projection returns the target")
{
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    Vec c = Vec::NullaryExpr(6, [&] { return unif(rng); });
    QuadraticProgram qp;
    qp.dim = 6;
    qp.P = SpMat(6, 6);
    for (int i = 0; i < 6; ++i) qp.P.insert(i, i) = 2.0;
    qp.q = -2.0 * c;
    qp.A_eq = SpMat(0, 6);
    qp.b_eq = Vec(0);
    qp.A_ineq = SpMat(0, 6);
    qp.b_ineq = Vec(0);
    auto res = solve_qp(qp);
    REQUIRE(res.status == QPStatus::Solved);
    REQUIRE((res.z - c).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("QP: random strictly convex instances match the active-set reference")
{
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const int d = 20, m = 10;
        Mat Pd = random_psd(rng, d) + 0.5 * Mat::Identity(d, d);
        Vec q = Vec::NullaryExpr(d, [&] { return unif(rng); });
        Mat Ai = Mat::NullaryExpr(m, d, [&] { return unif(rng); });
        Vec bi = Vec::NullaryExpr(m, [&] { return 0.5 + std::abs(unif(rng)); });

        QuadraticProgram qp;
        qp.dim = d;
        qp.P = Pd.sparseView();
        qp.q = q;
        qp.A_eq = SpMat(0, d);
        qp.b_eq = Vec(0);
        qp.A_ineq = Ai.sparseView();
        qp.b_ineq = bi;
        auto res = solve_qp(qp);
        REQUIRE(res.status == QPStatus::Solved);

        Vec ref = active_set_reference(Pd, q, Ai, bi);
        REQUIRE((res.z - ref).cwiseAbs().maxCoeff() < 1e-5);
        REQUIRE(res.objective <= qp.objective(ref) + 1e-6);

        // KKT residuals at the returned point.
        Vec grad = Pd * res.z + q + Ai.transpose() * res.y;
        REQUIRE(grad.cwiseAbs().maxCoeff() < 1e-5);
        REQUIRE(((Ai * res.z - bi).array() <= 1e-5).all());
        REQUIRE((res.y.array() >= -1e-5).all());
    }
}

TEST_CASE("QP: contradictory bounds are reported primal infeasible")
{
    QuadraticProgram qp;
    qp.dim = 1;
    qp.P = SpMat(1, 1);
    qp.P.insert(0, 0) = 2.0;
    qp.q = Vec::Zero(1);
    qp.A_eq = SpMat(0, 1);
    qp.b_eq = Vec(0);
    qp.A_ineq = SpMat(2, 1);
    qp.A_ineq.insert(0, 0) = 1.0;   // z <= 0
    qp.A_ineq.insert(1, 0) = -1.0;  // z >= 1
    qp.b_ineq = Vec(2);
    qp.b_ineq << 0.0, -1.0;
    auto res = solve_qp(qp);
    REQUIRE(res.status == QPStatus::PrimalInfeasible);
}

TEST_CASE("QP: linear cost over a free direction is dual infeasible")
{
    QuadraticProgram qp;
    qp.dim = 1;
    qp.P = SpMat(1, 1);
    qp.q = Vec::Constant(1, 1.0);
    qp.A_eq = SpMat(0, 1);
    qp.b_eq = Vec(0);
    qp.A_ineq = SpMat(1, 1);
    qp.A_ineq.insert(0, 0) = 1.0;  // z <= 1, unbounded below
    qp.b_ineq = Vec::Constant(1, 1.0);
    auto res = solve_qp(qp);
    REQUIRE(res.status == QPStatus::DualInfeasible);
}
