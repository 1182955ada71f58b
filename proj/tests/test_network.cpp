#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "pnpmpc/benchmark.hpp"
#include "pnpmpc/network.hpp"
#include "pnpmpc/network_io.hpp"

using namespace pnpmpc;

namespace {

// Independent evaluator of the per-subsystem coupled dynamics: local matrices
// plus explicit output differences, without going through A_nbhd.
Vec step_direct(const NetworkModel& net, const Vec& x, const Vec& u)
{
    Vec xp(net.n_total);
    for (int i = 0; i < net.size(); ++i) {
        const auto& si = net.subsystems[i];
        Vec xi = x.segment(net.state_offset[i], si.n());
        Vec acc = si.A * xi + si.B * u.segment(net.input_offset[i], si.m());
        for (int k = 0; k < net.channels(); ++k) {
            double v = 0.0;
            for (int j : net.neighbors[i]) {
                if (j == i) continue;
                const auto& sj = net.subsystems[j];
                const double yj = sj.C.row(k).dot(x.segment(net.state_offset[j], sj.n()));
                const double yi = si.C.row(k).dot(xi);
                v += net.graph.gain(k, i, j) * (yj - yi);
            }
            acc += si.F.col(k) * v;
        }
        xp.segment(net.state_offset[i], si.n()) = acc;
    }
    return xp;
}

NetworkModel random_network(std::mt19937& rng, int M)
{
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::vector<SubsystemModel> subs;
    for (int i = 0; i < M; ++i) {
        SubsystemModel s;
        s.id = i + 1;
        const int n = 2, m = 1, p = 2;
        s.A = Mat::NullaryExpr(n, n, [&] { return 0.5 * unif(rng); });
        s.B = Mat::NullaryExpr(n, m, [&] { return unif(rng); });
        s.F = Mat::NullaryExpr(n, p, [&] { return unif(rng); });
        s.C = Mat::NullaryExpr(p, n, [&] { return unif(rng); });
        s.state_poly = Polytope::box(n, 1.0);
        s.input_poly = Polytope::box(m, 1.0);
        subs.push_back(s);
    }
    CouplingGraph g = CouplingGraph::empty(M, 2);
    for (int i = 1; i < M; ++i)
        g.add_edge(i - 1, i, {0.3 * std::abs(unif(rng)), 0.3 * std::abs(unif(rng))});
    if (M > 2) g.add_edge(0, M - 1, {0.2, 0.1});
    return assemble_network(std::move(subs), std::move(g));
}

}  // namespace

TEST_CASE("two-subsystem single-channel Laplacian")
{
    CouplingGraph g = CouplingGraph::empty(2, 1);
    g.add_edge(0, 1, {0.4});
    const auto lap = build_laplacians(g);
    Mat expect{{0.4, -0.4}, {-0.4, 0.4}};
    REQUIRE((lap.per_channel[0] - expect).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-15));
    REQUIRE((lap.global - expect).cwiseAbs().maxCoeff() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("isolated subsystem Laplacian is zero")
{
    CouplingGraph g = CouplingGraph::empty(1, 2);
    const auto lap = build_laplacians(g);
    REQUIRE(lap.per_channel[0].cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(lap.global.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("eight-mass Laplacian: zero row sums and PSD spectrum")
{
    const auto net = msd::eight_mass_network();
    const auto lap = build_laplacians(net.graph);
    for (const auto& L : lap.per_channel) {
        REQUIRE(L.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
        REQUIRE(min_eigenvalue(L) > -1e-12);
    }
    REQUIRE(min_eigenvalue(lap.global) > -1e-12);
    REQUIRE(is_symmetric(lap.global));
}

TEST_CASE("weight on a non-neighbour pair is a structural error")
{
    CouplingGraph g = CouplingGraph::empty(3, 1);
    g.add_edge(0, 1, {0.4});
    g.weights[0][{0, 2}] = 0.1;  // not backed by the neighbour sets
    REQUIRE_THROWS_AS(build_laplacians(g), std::invalid_argument);
}

TEST_CASE("isolated subsystem assembles to its own dynamics")
{
    auto net = singleton_network(msd::subsystem(1), true, 0.0);
    REQUIRE((net.A_nbhd[0] - net.subsystems[0].A).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((net.W[0] - net.U[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("benchmark coupling blocks")
{
    msd::BuildOptions opt;
    opt.masses = {1, 2};
    auto net = msd::continuous_network(opt);
    const auto& s1 = net.subsystems[0];
    const auto& s2 = net.subsystems[1];
    // A_nbhd columns: [own block | neighbour block] for mass 1.
    Mat own = net.A_nbhd[0].leftCols(2);
    Mat coup = net.A_nbhd[0].rightCols(2);
    Mat own_expect = s1.A - s1.F.col(0) * 0.4 * s1.C.row(0) - s1.F.col(1) * 0.8 * s1.C.row(1);
    Mat coup_expect = s1.F.col(0) * 0.4 * s2.C.row(0) + s1.F.col(1) * 0.8 * s2.C.row(1);
    REQUIRE((own - own_expect).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE((coup - coup_expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("neighbourhood form reproduces the per-subsystem dynamics")
{
    std::mt19937 rng(7);
    auto net = random_network(rng, 5);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vec x = Vec::NullaryExpr(net.n_total, [&] { return unif(rng); });
        Vec u = Vec::NullaryExpr(net.m_total, [&] { return unif(rng); });
        REQUIRE((net.step(x, u) - step_direct(net, x, u)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("mismatched output dimensions are rejected")
{
    auto a = msd::subsystem(1);
    SubsystemModel b = msd::subsystem(2);
    b.F = b.F.leftCols(1).eval();
    b.C = b.C.topRows(1).eval();
    CouplingGraph g = CouplingGraph::empty(2, 2);
    g.add_edge(0, 1, {0.4, 0.8});
    REQUIRE_THROWS_AS(assemble_network({a, b}, g), std::invalid_argument);
}

TEST_CASE("forward Euler discretization of the local matrices")
{
    auto net = singleton_network(msd::subsystem(1), true, 0.0);
    auto disc = discretize(net, 0.1);
    Mat Ad{{1.0, 0.1}, {-0.1, 0.8}};
    Mat Bd{{0.0}, {0.1}};
    REQUIRE((disc.subsystems[0].A - Ad).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE((disc.subsystems[0].B - Bd).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE(disc.sampling_time == 0.1);
    REQUIRE_THROWS_AS(discretize(net, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(discretize(net, -1.0), std::invalid_argument);
}

TEST_CASE("discretized trajectory tracks a fine-step reference integration")
{
    msd::BuildOptions opt;
    opt.masses = msd::all_masses();
    auto cont = msd::continuous_network(opt);
    const double tau = 0.1;
    auto disc = discretize(cont, tau);

    Vec x0 = Vec::Zero(cont.n_total);
    for (int i = 0; i < cont.size(); ++i) x0(cont.state_offset[i]) = 0.05;
    const Vec u = Vec::Zero(cont.m_total);

    // Coarse Euler for 1 s.
    Vec x_coarse = x0;
    for (int t = 0; t < 10; ++t) x_coarse = disc.step(x_coarse, u);

    // Reference: Euler at tau/100.
    auto fine = discretize(cont, tau / 100.0);
    Vec x_ref = x0;
    for (int t = 0; t < 1000; ++t) x_ref = fine.step(x_ref, u);

    const double err = (x_coarse - x_ref).cwiseAbs().maxCoeff();
    REQUIRE(err < 0.5 * tau * x0.cwiseAbs().maxCoeff());
}

TEST_CASE("selector matrices extract by index")
{
    std::mt19937 rng(11);
    auto net = random_network(rng, 4);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Vec x = Vec::NullaryExpr(net.n_total, [&] { return unif(rng); });
    Vec u = Vec::NullaryExpr(net.m_total, [&] { return unif(rng); });
    for (int i = 0; i < net.size(); ++i) {
        for (const Mat* S : {&net.U[i], &net.W[i], &net.V[i]}) {
            for (int r = 0; r < S->rows(); ++r) {
                REQUIRE((*S).row(r).sum() == 1.0);
                REQUIRE(((*S).row(r).array() >= 0.0).all());
            }
        }
        REQUIRE((net.U[i] * x - x.segment(net.state_offset[i], net.subsystems[i].n())).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((net.V[i] * u - u.segment(net.input_offset[i], net.subsystems[i].m())).cwiseAbs().maxCoeff() == 0.0);
        Vec xn = net.W[i] * x;
        int off = 0;
        for (int j : net.neighbors[i]) {
            REQUIRE((xn.segment(off, net.subsystems[j].n()) -
                     x.segment(net.state_offset[j], net.subsystems[j].n())).cwiseAbs().maxCoeff() == 0.0);
            off += net.subsystems[j].n();
        }
    }
}

TEST_CASE("network JSON round trip preserves the model")
{
    auto net = msd::seven_mass_network();
    const json j = network_to_json(net);
    auto back = network_from_json(j);
    REQUIRE(back.size() == net.size());
    REQUIRE(network_hash(back) == network_hash(net));
    for (int i = 0; i < net.size(); ++i) {
        REQUIRE((back.subsystems[i].A - net.subsystems[i].A).cwiseAbs().maxCoeff() == 0.0);
        REQUIRE((back.A_nbhd[i] - net.A_nbhd[i]).cwiseAbs().maxCoeff() == 0.0);
    }
}
