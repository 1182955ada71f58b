#include <catch2/catch_amalgamated.hpp>

#include "pnpmpc/benchmark.hpp"
#include "pnpmpc/bundle_io.hpp"
#include "pnpmpc/synthesis.hpp"

using namespace pnpmpc;

namespace {

PassivityCertificate synth_or_fail(const NetworkModel& net, int i, SynthesisOptions opts = {})
{
    auto r = synthesize_passivity(net, i, coupling_rows(net, i), opts);
    REQUIRE(std::holds_alternative<PassivityCertificate>(r));
    return std::get<PassivityCertificate>(r);
}

CertificateSet synth_network_or_fail(const NetworkModel& net)
{
    auto r = synthesize_network(net);
    if (std::holds_alternative<Rejection>(r)) FAIL(std::get<Rejection>(r).to_string());
    return std::get<CertificateSet>(r);
}

// Discrete Lyapunov equation solve via Kronecker vectorization:
// X - A^T X A = W.
Mat discrete_lyapunov(const Mat& A, const Mat& W)
{
    const int n = static_cast<int>(A.rows());
    Mat kron = Mat::Identity(n * n, n * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                for (int l = 0; l < n; ++l)
                    kron(i * n + j, k * n + l) -= A(k, i) * A(l, j);
    Vec w(n * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) w(i * n + j) = W(i, j);
    Vec x = kron.fullPivLu().solve(w);
    Mat X(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) X(i, j) = x(i * n + j);
    return symmetrize(X);
}

}  // namespace

TEST_CASE("coupling rows vanish for an isolated subsystem")
{
    auto net = singleton_network(msd::subsystem(1), false, 0.1);
    auto rows = coupling_rows(net, 0);
    REQUIRE(rows.state_abs_sums.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(rows.output_abs_sums.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("coupling rows of the two-mass chain match the dense assembly")
{
    msd::BuildOptions opt;
    opt.masses = {1, 2};
    auto net = msd::discrete_network(opt);
    // For the benchmark C_i = I, so C^T L^T block i is rows of L and the
    // per-row sums double each coupling gain.
    auto r0 = coupling_rows(net, 0);
    REQUIRE(r0.state_abs_sums(0) == Catch::Approx(2 * 0.4));
    REQUIRE(r0.state_abs_sums(1) == Catch::Approx(2 * 0.8));
    REQUIRE(r0.output_abs_sums(0) == Catch::Approx(2 * 0.4));
    REQUIRE(r0.output_abs_sums(1) == Catch::Approx(2 * 0.8));

    const auto lap = build_laplacians(net.graph);
    const Mat C = stacked_output_matrix(net);
    const Mat LC = lap.global * C;
    REQUIRE((r0.output_rows - LC.topRows(2)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("coupling row blocks partition the dense products")
{
    auto net = msd::seven_mass_network();
    const auto lap = build_laplacians(net.graph);
    const Mat C = stacked_output_matrix(net);
    const Mat LC = lap.global * C;
    const Mat CL = C.transpose() * lap.global.transpose();
    Mat LC_stacked(LC.rows(), LC.cols());
    Mat CL_stacked(CL.rows(), CL.cols());
    for (int i = 0; i < net.size(); ++i) {
        auto rows = coupling_rows(net, i);
        LC_stacked.middleRows(i * net.channels(), net.channels()) = rows.output_rows;
        CL_stacked.middleRows(net.state_offset[i], net.subsystems[i].n()) = rows.state_rows;
    }
    REQUIRE((LC_stacked - LC).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((CL_stacked - CL).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("terminal controller synthesis for an isolated benchmark mass")
{
    auto net = singleton_network(msd::subsystem(1), false, 0.0);
    net = discretize(singleton_network(msd::subsystem(1), true, 0.0), 0.1);
    auto cert = synth_or_fail(net, 0);
    const auto& sub = net.subsystems[0];
    REQUIRE(spectral_radius(sub.A + sub.B * cert.K) < 1.0);
    REQUIRE(min_eigenvalue(cert.P) > 0.0);
    auto rep = verify_passivity(sub, cert);
    REQUIRE(rep.pass());
}

TEST_CASE("plug-in mass with weak coupling is accepted")
{
    // coupling scale r = 0.01: k_18 = 0.025, c_18 = 0.05
    auto net = msd::eight_mass_network(2.5 * 0.01, 5.0 * 0.01);
    int pos8 = -1;
    for (int i = 0; i < net.size(); ++i)
        if (net.subsystems[i].id == 8) pos8 = i;
    REQUIRE(pos8 >= 0);
    auto cert = synth_or_fail(net, pos8);
    auto rep = verify_passivity(net.subsystems[pos8], cert);
    REQUIRE(rep.pass());
    REQUIRE(rep.matrix_min_eig >= -1e-7);
}

TEST_CASE("verification rejects a corrupted certificate")
{
    auto net = msd::seven_mass_network();
    auto cert = synth_or_fail(net, 0);
    const auto& sub = net.subsystems[0];

    SECTION("flipped feedback sign")
    {
        PassivityCertificate bad = cert;
        bad.K(0, 0) = -bad.K(0, 0);
        auto rep = verify_passivity(sub, bad);
        REQUIRE_FALSE(rep.pass());
        REQUIRE(rep.sample_violations > 0);
    }
    SECTION("dissipation inflated past the caps")
    {
        PassivityCertificate bad = cert;
        bad.Gamma *= 100.0;
        auto rep = verify_passivity(sub, bad);
        REQUIRE_FALSE(rep.matrix_ok);
    }
}

TEST_CASE("sampled dissipation inequality holds for synthesized certificates")
{
    auto net = msd::seven_mass_network();
    for (int i : {0, 4}) {
        auto cert = synth_or_fail(net, i);
        auto rep = verify_passivity(net.subsystems[i], cert, 1000);
        REQUIRE(rep.sample_violations == 0);
        REQUIRE(rep.caps_ok);
        REQUIRE(rep.matrix_ok);
    }
}

TEST_CASE("stage cost for an isolated subsystem")
{
    auto net = discretize(singleton_network(msd::subsystem(1), true, 0.0), 0.1);
    auto cert = synth_or_fail(net, 0);
    std::map<int, Mat> nbr_P{{0, cert.P}};
    auto r = synthesize_stage_cost(net, 0, nbr_P, cert.K, {{0, 1.0}}, Mat::Identity(2, 2), Mat::Identity(1, 1));
    REQUIRE(std::holds_alternative<StageCostWeights>(r));
    auto w = std::get<StageCostWeights>(r);
    REQUIRE(min_eigenvalue(w.Q) > 0.0);
    REQUIRE(min_eigenvalue(w.R) > 0.0);
    const Mat resid = stage_cost_matrix(net, 0, nbr_P, cert.K, w.Q, w.R, {{0, 1.0}});
    REQUIRE(min_eigenvalue(resid) >= -1e-7);
}

TEST_CASE("stage cost is infeasible when the neighbour storage is withheld")
{
    // Two coupled masses; give subsystem 0 too little own budget and a zero
    // matrix for its neighbour. The propagated storage cannot be covered.
    msd::BuildOptions opt;
    opt.masses = {1, 2};
    auto net = msd::discrete_network(opt);
    auto cert = synth_or_fail(net, 0);
    std::map<int, Mat> nbr_P{{0, cert.P}, {1, Mat::Zero(2, 2)}};
    auto r = synthesize_stage_cost(net, 0, nbr_P, cert.K, {{0, 0.1}, {1, 0.5}},
                                   Mat::Identity(2, 2), Mat::Identity(1, 1));
    REQUIRE(std::holds_alternative<Rejection>(r));
}

TEST_CASE("full network synthesis passes the global Lyapunov oracle")
{
    auto net = msd::seven_mass_network();
    auto certs = synth_network_or_fail(net);
    for (const auto& [id, e] : certs.by_id) {
        REQUIRE(min_eigenvalue(e.weights.Q) > 0.0);
        REQUIRE(min_eigenvalue(e.weights.R) > 0.0);
        double row_sum = 0.0;
        for (const auto& [j, v] : e.weights.n_row) {
            REQUIRE(v > 0.0);
            row_sum += v;
        }
        REQUIRE(row_sum <= 1.0 + 1e-9);
    }
    auto rep = verify_global_lyapunov(net, certs);
    REQUIRE(rep.min_eig >= -1e-7);

    SECTION("inflating one stage cost breaks the global inequality")
    {
        CertificateSet bad = certs;
        bad.by_id.begin()->second.weights.Q *= 1e4;
        REQUIRE(verify_global_lyapunov(net, bad).min_eig < -1e-7);
    }
}

TEST_CASE("per-subsystem decrease certificates hold after joint synthesis")
{
    auto net = msd::seven_mass_network();
    auto certs = synth_network_or_fail(net);
    std::map<int, std::map<int, double>> rows;
    for (const auto& [id, e] : certs.by_id) rows[id] = e.weights.n_row;
    for (int i = 0; i < net.size(); ++i) {
        const auto& e = certs.at(net.subsystems[i].id);
        std::map<int, Mat> nbr_P;
        for (int j : net.neighbors[i]) nbr_P[j] = certs.at(net.subsystems[j].id).cert.P;
        const Mat resid = stage_cost_matrix(net, i, nbr_P, e.cert.K, e.weights.Q, e.weights.R,
                                            weights_for_subsystem(net, i, rows));
        REQUIRE(min_eigenvalue(resid) >= -1e-7);
    }
}

TEST_CASE("single-subsystem global check agrees with a discrete Lyapunov solve")
{
    auto net = discretize(singleton_network(msd::subsystem(1), true, 0.0), 0.1);
    auto certs = synth_network_or_fail(net);
    const auto& e = certs.at(1);
    const Mat Acl = net.subsystems[0].A + net.subsystems[0].B * e.cert.K;
    const Mat W = e.weights.Q + e.cert.K.transpose() * e.weights.R * e.cert.K;
    const Mat X = discrete_lyapunov(Acl, W);
    // P - A^T P A >= W implies P >= X, the exact Lyapunov solution.
    REQUIRE(min_eigenvalue(e.cert.P - X) >= -1e-7);
    REQUIRE(verify_global_lyapunov(net, certs).min_eig >= -1e-7);
}

TEST_CASE("certificate bundle JSON round trip")
{
    auto net = discretize(singleton_network(msd::subsystem(3), true, 0.0), 0.1);
    auto certs = synth_network_or_fail(net);
    const json j = certificates_to_json(certs, network_hash(net));
    auto back = certificates_from_json(j);
    REQUIRE(back.by_id.size() == certs.by_id.size());
    const auto& a = certs.at(3);
    const auto& b = back.at(3);
    REQUIRE((a.cert.P - b.cert.P).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((a.cert.K - b.cert.K).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((a.weights.Q - b.weights.Q).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(a.weights.n_row == b.weights.n_row);
}
