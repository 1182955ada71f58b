#pragma once

#include <future>
#include <optional>
#include <random>
#include <variant>

#include "pnpmpc/affine_builder.hpp"
#include "pnpmpc/conic.hpp"
#include "pnpmpc/network.hpp"

namespace pnpmpc {

/// Row blocks of L*C and C^T*L^T for one subsystem, plus the per-row
/// absolute sums that cap the dissipation and feedthrough matrices.
struct CouplingRows {
    Mat state_rows;        // n_i x (M p), rows of C^T L^T owned by the subsystem
    Mat output_rows;       // p x n, rows of L C owned by the subsystem
    Vec state_abs_sums;    // length n_i, caps Gamma^{-1}
    Vec output_abs_sums;   // length p, caps D
};

inline CouplingRows coupling_rows(const NetworkModel& net, int i)
{
    const auto lap = build_laplacians(net.graph);
    const Mat C = stacked_output_matrix(net);
    const Mat LC = lap.global * C;
    const Mat CL = C.transpose() * lap.global.transpose();
    CouplingRows out;
    out.state_rows = CL.middleRows(net.state_offset[i], net.subsystems[i].n());
    out.output_rows = LC.middleRows(i * net.channels(), net.channels());
    out.state_abs_sums = abs_row_sums(out.state_rows);
    out.output_abs_sums = abs_row_sums(out.output_rows);
    return out;
}

/// Terminal controller certificate: storage matrix P, feedback K, virtual
/// output feedthrough D and dissipation Gamma, together with the synthesis
/// images E = P^-1, Y = K P^-1, X = Gamma^-1.
struct PassivityCertificate {
    Mat P;      // n x n symmetric positive definite
    Mat K;      // m x n
    Vec D;      // diagonal of the p x p feedthrough
    Vec Gamma;  // diagonal of the n x n dissipation matrix
    Mat E, Y;
    Vec X;
    double epsilon = 1e-6;
    double contraction = 0.0;  // certified storage contraction rate
    Vec state_abs_sums;   // context for re-checking the caps
    Vec output_abs_sums;
};

/// Stage cost weights of one subsystem. `n_row` holds the subsystem's own
/// row of the coupling-budget scalars: n_row[j] multiplies this subsystem's
/// P inside neighbour j's decrease certificate, and the row must sum to at
/// most one for the local certificates to add up to the global one.
struct StageCostWeights {
    Mat Q;  // n x n
    Mat R;  // m x m
    Mat S;  // n x n tracking-offset weight
    std::map<int, double> n_row;  // neighbour id -> budget share
};

struct SynthesisOptions {
    double epsilon = 1e-6;        // strict-passivity slack in the Gamma caps
    double eps_def = 1e-6;        // definiteness margin for E, X, D, Q, R
    double block_margin = 1e-6;   // PSD margin on the certificate blocks
    double cap_margin = 1e-9;     // slack inside the diagonal cap rows
    double budget_floor = 1e-4;   // smallest admissible budget share on a support pair
    double lmi_tol = 1e-7;
    int lmi_max_iter = 20000;
    // Definiteness floors tried for the stage-cost weights, largest first;
    // the deepest feasible floor keeps Q, R at a useful scale instead of
    // collapsing to the eps_def boundary.
    std::vector<double> weight_floor_grid = {1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01};
    // Storage contraction targets: the synthesis looks for certificates with
    // V(x+) <= (1 - c) V(x) + coupling terms, walking down the grid until
    // feasible. A deeper contraction frees decrease budget for the
    // neighbours' stage-cost certificates. The plain certificate is the last
    // entry, so the feasibility boundary is unchanged.
    std::vector<double> contraction_grid = {0.30, 0.20, 0.12, 0.06, 0.03, 0.01, 0.0};
};

struct Rejection {
    LMIStatus status = LMIStatus::Infeasible;
    int subsystem_id = -1;
    std::string stage;  // "terminal_controller" or "stage_cost"
    std::string to_string() const
    {
        return stage + " synthesis for subsystem " + std::to_string(subsystem_id) +
               (status == LMIStatus::Infeasible ? ": infeasible" : ": iteration limit");
    }
};

/// Own-state selector inside the neighbourhood stack, U_i W_i^T.
inline Mat own_selector(const NetworkModel& net, int i)
{
    const int nN = net.nbhd_dim(i);
    Mat S = Mat::Zero(net.subsystems[i].n(), nN);
    S.middleCols(net.nbhd_offset(i, i), net.subsystems[i].n()) = Mat::Identity(net.subsystems[i].n(), net.subsystems[i].n());
    return S;
}

/// Neighbourhood closed-loop map A_{N_i} + B_i K_i U_i W_i^T.
inline Mat closed_loop_nbhd(const NetworkModel& net, int i, const Mat& K)
{
    return net.A_nbhd[i] + net.subsystems[i].B * K * own_selector(net, i);
}

/// Embedding of neighbour j's matrix at its slot of the neighbourhood stack,
/// W_i U_j^T M U_j W_i^T.
inline Mat embed_nbhd(const NetworkModel& net, int i, int j, const Mat& M)
{
    const int nN = net.nbhd_dim(i);
    Mat out = Mat::Zero(nN, nN);
    const int off = net.nbhd_offset(i, j);
    out.block(off, off, M.rows(), M.cols()) = M;
    return out;
}

/// Synthesizes the terminal controller of one subsystem from the passivity
/// block matrix plus the diagonal cap rows. Returns the recovered
/// certificate or the solver status on rejection.
inline std::variant<PassivityCertificate, Rejection>
synthesize_passivity(const NetworkModel& net, int i, const CouplingRows& rows, SynthesisOptions opts = {})
{
    const auto& sub = net.subsystems[i];
    const int n = sub.n(), m = sub.m(), p = sub.p();

    VarPool pool;
    MatrixVar E = pool.symmetric(n);
    MatrixVar Y = pool.full(m, n);
    MatrixVar X = pool.diagonal(n);
    MatrixVar D = pool.diagonal(p);

    LMIStatus last_status = LMIStatus::Infeasible;
    for (double c : opts.contraction_grid) {
        AffineLMIProblem prob;
        SymBlockBuilder big({n, p, n, n});
        // Contraction-scaled certificate block: the plain block matrix is the
        // c = 0 case, and any c > 0 solution satisfies it with margin c E.
        big.add_term(0, 0, E, Mat(), (1.0 - c) * Mat::Identity(n, n));
        big.add_term(0, 1, E, Mat(), 0.5 * sub.C.transpose());
        big.add_term(2, 0, E, sub.A, Mat());
        big.add_term(2, 0, Y, sub.B, Mat());
        big.add_const(2, 1, sub.F);
        big.add_term(1, 1, D);
        big.add_term(2, 2, E);
        big.add_term(0, 3, E);
        big.add_term(3, 3, X);
        LMIBlock main = big.build();
        main.S0 -= opts.block_margin * Mat::Identity(main.size(), main.size());
        prob.blocks.push_back(std::move(main));
        prob.blocks.push_back(definite_block(E, opts.eps_def));
        prob.blocks.push_back(definite_block(X, opts.eps_def));
        prob.blocks.push_back(definite_block(D, opts.eps_def));

        for (int j = 0; j < n; ++j)
            prob.linear_ineq.push_back({{{X.entries[j].first, 1.0}},
                                        1.0 / (rows.state_abs_sums(j) + opts.epsilon) - opts.cap_margin});
        for (int k = 0; k < p; ++k)
            if (rows.output_abs_sums(k) > 0.0)
                prob.linear_ineq.push_back({{{D.entries[k].first, 1.0}},
                                            1.0 / rows.output_abs_sums(k) - opts.cap_margin});
        prob.dim = pool.dim();

        LMIOptions lopts;
        lopts.tol = opts.lmi_tol;
        lopts.max_iter = opts.lmi_max_iter;
        // Start from E = I, X and D at half their caps (or one where uncapped).
        lopts.z0 = Vec::Zero(prob.dim);
        for (const auto& [t, basis] : E.entries)
            if (basis.trace() == 2.0)  // diagonal entries of the symmetric var
                lopts.z0(t) = 1.0;
        for (int j = 0; j < n; ++j)
            lopts.z0(X.entries[j].first) = 0.5 / (rows.state_abs_sums(j) + opts.epsilon);
        for (int k = 0; k < p; ++k)
            lopts.z0(D.entries[k].first) =
                rows.output_abs_sums(k) > 0.0 ? 0.5 / rows.output_abs_sums(k) : 1.0;

        auto res = solve_lmi_feasibility(prob, lopts);
        last_status = res.status;
        if (res.status != LMIStatus::Feasible) continue;

        PassivityCertificate cert;
        cert.E = E.value(res.z);
        cert.Y = Y.value(res.z);
        cert.X = X.value(res.z).diagonal();
        cert.D = D.value(res.z).diagonal();
        cert.P = symmetrize(cert.E.inverse());
        cert.K = cert.Y * cert.P;
        cert.Gamma = cert.X.cwiseInverse();
        cert.epsilon = opts.epsilon;
        cert.contraction = c;
        cert.state_abs_sums = rows.state_abs_sums;
        cert.output_abs_sums = rows.output_abs_sums;
        return cert;
    }
    return Rejection{last_status, sub.id, "terminal_controller"};
}

/// The dissipation inequality as one symmetric matrix in (dx, dv).
inline Mat passivity_inequality_matrix(const SubsystemModel& sub, const PassivityCertificate& cert)
{
    const Mat AK = sub.A + sub.B * cert.K;
    const int n = sub.n(), p = sub.p();
    Mat N(n + p, n + p);
    N.topLeftCorner(n, n) = cert.P - Mat(cert.Gamma.asDiagonal()) - AK.transpose() * cert.P * AK;
    N.topRightCorner(n, p) = 0.5 * sub.C.transpose() - AK.transpose() * cert.P * sub.F;
    N.bottomLeftCorner(p, n) = N.topRightCorner(n, p).transpose();
    N.bottomRightCorner(p, p) = Mat(cert.D.asDiagonal()) - sub.F.transpose() * cert.P * sub.F;
    return symmetrize(N);
}

struct PassivityReport {
    bool matrix_ok = false;
    bool caps_ok = false;
    bool definiteness_ok = false;
    int sample_violations = 0;
    double matrix_min_eig = 0.0;
    double worst_sample_violation = 0.0;
    bool pass() const { return matrix_ok && caps_ok && definiteness_ok && sample_violations == 0; }
};

/// Checks the dissipation inequality both as a matrix inequality (by
/// eigendecomposition, authoritative) and on sampled shifted states and
/// coupling inputs (diagnostic).
inline PassivityReport verify_passivity(const SubsystemModel& sub, const PassivityCertificate& cert,
                                        int samples = 1000, unsigned seed = 20220901,
                                        double matrix_tol = 1e-7, double sample_tol = 1e-8)
{
    PassivityReport rep;
    const int n = sub.n(), p = sub.p();
    const Mat N = passivity_inequality_matrix(sub, cert);
    rep.matrix_min_eig = min_eigenvalue(N);
    rep.matrix_ok = rep.matrix_min_eig >= -matrix_tol;

    rep.definiteness_ok = min_eigenvalue(cert.P) > 0.0 && cert.Gamma.minCoeff() > 0.0 && cert.D.minCoeff() > 0.0;

    rep.caps_ok = true;
    for (int j = 0; j < n; ++j)
        if (1.0 / cert.Gamma(j) > 1.0 / (cert.state_abs_sums(j) + cert.epsilon) + 1e-12) rep.caps_ok = false;
    for (int k = 0; k < p; ++k)
        if (cert.output_abs_sums(k) > 0.0 && cert.D(k) > 1.0 / cert.output_abs_sums(k) + 1e-12) rep.caps_ok = false;

    std::mt19937 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> mag(-2.0, 2.0);
    const Mat AK = sub.A + sub.B * cert.K;
    for (int s = 0; s < samples; ++s) {
        Vec dir = Vec::NullaryExpr(n + p, [&] { return gauss(rng); });
        dir.normalize();
        const double scale = std::pow(10.0, mag(rng));
        Vec dx = scale * dir.head(n);
        Vec dv = scale * dir.tail(p);
        Vec dxp = AK * dx + sub.F * dv;
        Vec dz = sub.C * dx + cert.D.asDiagonal() * dv;
        const double lhs = dxp.dot(cert.P * dxp) - dx.dot(cert.P * dx);
        const double rhs = dv.dot(dz) - dx.dot(cert.Gamma.asDiagonal() * dx);
        const double violation = lhs - rhs;
        if (violation > sample_tol) {
            ++rep.sample_violations;
            rep.worst_sample_violation = std::max(rep.worst_sample_violation, violation);
        }
    }
    return rep;
}

/// The decrease certificate of one subsystem: weighted neighbour storage
/// minus own stage cost minus the propagated storage, as a matrix on the
/// neighbourhood stack. Weights are keyed by neighbour position.
inline Mat stage_cost_matrix(const NetworkModel& net, int i, const std::map<int, Mat>& neighbor_P,
                             const Mat& K, const Mat& Q, const Mat& R, const std::map<int, double>& weight_on_P)
{
    const Mat A_cl = closed_loop_nbhd(net, i, K);
    const Mat sel = own_selector(net, i);
    Mat S = -A_cl.transpose() * neighbor_P.at(i) * A_cl;
    S -= sel.transpose() * (Q + K.transpose() * R * K) * sel;
    for (int j : net.neighbors[i])
        S += weight_on_P.at(j) * embed_nbhd(net, i, j, neighbor_P.at(j));
    return symmetrize(S);
}

/// Nearest-to-nominal stage cost weights satisfying the decrease
/// certificate. `weight_on_P[j]` multiplies neighbour j's storage matrix; it
/// is the (j -> i) entry of the budget table, so that summing the local
/// certificates over the network reproduces the global inequality.
inline std::variant<StageCostWeights, Rejection>
synthesize_stage_cost(const NetworkModel& net, int i, const std::map<int, Mat>& neighbor_P, const Mat& K,
                      const std::map<int, double>& weight_on_P, const Mat& Q_nominal, const Mat& R_nominal,
                      SynthesisOptions opts = {})
{
    const auto& sub = net.subsystems[i];
    const int n = sub.n(), m = sub.m();

    VarPool pool;
    MatrixVar Q = pool.symmetric(n);
    MatrixVar R = pool.symmetric(m);

    const Mat A_cl = closed_loop_nbhd(net, i, K);
    const Mat sel = own_selector(net, i);
    const int nN = net.nbhd_dim(i);

    AffineLMIProblem prob;
    SymBlockBuilder main({nN});
    Mat S0 = -A_cl.transpose() * neighbor_P.at(i) * A_cl;
    for (int j : net.neighbors[i]) S0 += weight_on_P.at(j) * embed_nbhd(net, i, j, neighbor_P.at(j));
    main.add_const(0, 0, S0 - opts.block_margin * Mat::Identity(nN, nN));
    main.add_term(0, 0, Q, -sel.transpose(), sel);
    main.add_term(0, 0, R, -(K * sel).transpose(), K * sel);
    prob.blocks.push_back(main.build());
    prob.blocks.push_back(definite_block(Q, opts.eps_def));
    prob.blocks.push_back(definite_block(R, opts.eps_def));
    prob.dim = pool.dim();

    LMIOptions lopts;
    lopts.tol = opts.lmi_tol;
    lopts.max_iter = opts.lmi_max_iter;
    lopts.z0 = Vec::Zero(prob.dim);
    for (const auto& [t, basis] : Q.entries) lopts.z0(t) = 0.5 * (basis.array() * Q_nominal.array()).sum();
    for (const auto& [t, basis] : R.entries) lopts.z0(t) = 0.5 * (basis.array() * R_nominal.array()).sum();

    auto res = solve_lmi_feasibility(prob, lopts);
    if (res.status != LMIStatus::Feasible)
        return Rejection{res.status, sub.id, "stage_cost"};

    StageCostWeights w;
    w.Q = Q.value(res.z);
    w.R = R.value(res.z);
    w.S = 10.0 * Mat::Identity(n, n);
    return w;
}

/// Certificate bundle for a network, keyed by subsystem id so that entries
/// survive plug-in/plug-out renumbering.
struct CertificateSet {
    struct Entry {
        PassivityCertificate cert;
        StageCostWeights weights;
    };
    std::map<int, Entry> by_id;

    const Entry& at(int id) const { return by_id.at(id); }
    bool has(int id) const { return by_id.count(id) > 0; }
};

/// Uniform budget rows: subsystem i spreads its storage budget evenly over
/// its neighbours, n_row[j] = 1/|N_i|, which sums to one exactly.
inline std::map<int, std::map<int, double>> uniform_budget_rows(const NetworkModel& net)
{
    std::map<int, std::map<int, double>> rows;
    for (int i = 0; i < net.size(); ++i) {
        const double share = 1.0 / static_cast<double>(net.neighbors[i].size());
        for (int j : net.neighbors[i]) rows[net.subsystems[i].id][net.subsystems[j].id] = share;
    }
    return rows;
}

/// Joint stage-cost synthesis over a region of subsystem positions, with the
/// budget shares as decision variables. Shares between a region consumer and
/// an outside receiver stay frozen at their previous values; every receiver
/// whose row is re-allocated lies inside the region, so untouched subsystems
/// keep their rows (and certificates) unchanged. Each region spot keeps at
/// least budget_floor on every support pair, and receiver rows sum to at most
/// one, which is what makes the local certificates add up globally.
struct JointStageCostResult {
    std::map<int, StageCostWeights> weights;       // by id, region members only
    std::map<int, std::map<int, double>> rows;     // updated receiver rows, by id
};

inline std::variant<JointStageCostResult, Rejection>
synthesize_stage_costs_joint(const NetworkModel& net, const std::vector<int>& region,
                             const std::map<int, Mat>& P_by_pos, const std::map<int, Mat>& K_by_pos,
                             const std::map<int, std::map<int, double>>& existing_rows,
                             SynthesisOptions opts = {})
{
    std::set<int> in_region(region.begin(), region.end());
    auto id_of = [&](int pos) { return net.subsystems[pos].id; };

    VarPool pool;
    std::map<int, MatrixVar> Q, R;
    std::map<std::pair<int, int>, int> share;  // (consumer pos, receiver pos) -> decision index
    for (int i : region) {
        Q[i] = pool.symmetric(net.subsystems[i].n());
        R[i] = pool.symmetric(net.subsystems[i].m());
        for (int j : net.neighbors[i])
            if (in_region.count(j)) share[{i, j}] = pool.scalar();
    }

    auto frozen_share = [&](int i, int j) -> double {
        auto it = existing_rows.find(id_of(j));
        if (it == existing_rows.end()) throw std::invalid_argument("stage cost: missing frozen budget row");
        auto jt = it->second.find(id_of(i));
        if (jt == it->second.end()) throw std::invalid_argument("stage cost: missing frozen budget share");
        return jt->second;
    };

    auto build_problem = [&](double weight_floor) {
        AffineLMIProblem prob;
        for (int i : region) {
            const int nN = net.nbhd_dim(i);
            const Mat A_cl = closed_loop_nbhd(net, i, K_by_pos.at(i));
            const Mat sel = own_selector(net, i);
            const Mat Ksel = K_by_pos.at(i) * sel;

            SymBlockBuilder main({nN});
            Mat S0 = -A_cl.transpose() * P_by_pos.at(i) * A_cl - opts.block_margin * Mat::Identity(nN, nN);
            for (int j : net.neighbors[i])
                if (!in_region.count(j)) S0 += frozen_share(i, j) * embed_nbhd(net, i, j, P_by_pos.at(j));
            main.add_const(0, 0, S0);
            main.add_term(0, 0, Q.at(i), -sel.transpose(), sel);
            main.add_term(0, 0, R.at(i), -Ksel.transpose(), Ksel);
            LMIBlock blk = main.build();
            for (int j : net.neighbors[i])
                if (in_region.count(j))
                    blk.terms.emplace_back(share.at({i, j}), embed_nbhd(net, i, j, P_by_pos.at(j)));
            prob.blocks.push_back(std::move(blk));
            prob.blocks.push_back(definite_block(Q.at(i), weight_floor));
            prob.blocks.push_back(definite_block(R.at(i), weight_floor));
        }
        // Receiver rows inside the region: variable shares plus frozen grants
        // to outside consumers must not exceed one.
        for (int j : region) {
            LinearRow row;
            double frozen = 0.0;
            for (int i : net.neighbors[j]) {
                if (in_region.count(i))
                    row.coeffs.emplace_back(share.at({i, j}), 1.0);
                else
                    frozen += frozen_share(i, j);
            }
            row.rhs = 1.0 - frozen;
            prob.linear_ineq.push_back(std::move(row));
        }
        for (const auto& [ij, t] : share)
            prob.linear_ineq.push_back({{{t, -1.0}}, -opts.budget_floor});
        prob.dim = pool.dim();
        return prob;
    };

    LMIOptions lopts;
    lopts.tol = opts.lmi_tol;
    lopts.max_iter = opts.lmi_max_iter;
    lopts.z0 = Vec::Zero(pool.dim());
    for (int i : region) {
        for (const auto& [t, basis] : Q.at(i).entries)
            if (basis.trace() == 2.0) lopts.z0(t) = 1.0;
        for (const auto& [t, basis] : R.at(i).entries)
            if (basis.trace() == 2.0) lopts.z0(t) = 1.0;
        const int deg = static_cast<int>(net.neighbors[i].size()) - 1;
        for (int j : net.neighbors[i])
            if (in_region.count(j))
                lopts.z0(share.at({i, j})) = (i == j) ? 0.85 : 0.15 / std::max(deg, 1);
    }

    std::vector<double> floors = opts.weight_floor_grid;
    floors.push_back(opts.eps_def);
    LMIResult res;
    bool feasible = false;
    for (double floor : floors) {
        AffineLMIProblem prob = build_problem(floor);
        res = solve_lmi_feasibility(prob, lopts);
        if (res.status == LMIStatus::Feasible) {
            feasible = true;
            break;
        }
    }
    if (!feasible)
        return Rejection{res.status, -1, "stage_cost"};

    JointStageCostResult out;
    out.rows = existing_rows;
    for (int i : region) {
        StageCostWeights w;
        w.Q = Q.at(i).value(res.z);
        w.R = R.at(i).value(res.z);
        w.S = 10.0 * Mat::Identity(net.subsystems[i].n(), net.subsystems[i].n());
        out.weights[id_of(i)] = std::move(w);
    }
    for (int j : region) {
        auto& row = out.rows[id_of(j)];
        for (int i : net.neighbors[j])
            if (in_region.count(i)) row[id_of(i)] = res.z(share.at({i, j}));
    }
    // Each subsystem's own n_row travels with its weights.
    for (int i : region) out.weights[id_of(i)].n_row = out.rows.at(id_of(i));
    return out;
}

/// Weight looked up for neighbour j's storage inside subsystem i's decrease
/// certificate: entry (j -> i) of the budget table.
inline std::map<int, double> weights_for_subsystem(const NetworkModel& net, int i,
                                                   const std::map<int, std::map<int, double>>& budget_rows)
{
    std::map<int, double> w;
    for (int j : net.neighbors[i])
        w[j] = budget_rows.at(net.subsystems[j].id).at(net.subsystems[i].id);
    return w;
}

struct GlobalLyapunovReport {
    double min_eig = 0.0;
    bool pass(double tol = 1e-7) const { return min_eig >= -tol; }
};

/// End-to-end oracle for the local decompositions: assembles the true global
/// closed loop and checks P - (A+BK)^T P (A+BK) - Q - K^T R K >= 0 by
/// eigendecomposition.
inline GlobalLyapunovReport verify_global_lyapunov(const NetworkModel& net, const CertificateSet& certs)
{
    const int n = net.n_total, m = net.m_total;
    Mat P = Mat::Zero(n, n), Q = Mat::Zero(n, n), K = Mat::Zero(m, n), R = Mat::Zero(m, m);
    for (int i = 0; i < net.size(); ++i) {
        const auto& e = certs.at(net.subsystems[i].id);
        P.block(net.state_offset[i], net.state_offset[i], net.subsystems[i].n(), net.subsystems[i].n()) = e.cert.P;
        Q.block(net.state_offset[i], net.state_offset[i], net.subsystems[i].n(), net.subsystems[i].n()) = e.weights.Q;
        K.block(net.input_offset[i], net.state_offset[i], net.subsystems[i].m(), net.subsystems[i].n()) = e.cert.K;
        R.block(net.input_offset[i], net.input_offset[i], net.subsystems[i].m(), net.subsystems[i].m()) = e.weights.R;
    }
    const Mat Acl = global_state_matrix(net) + global_input_matrix(net) * K;
    GlobalLyapunovReport rep;
    rep.min_eig = min_eigenvalue(P - Acl.transpose() * P * Acl - Q - K.transpose() * R * K);
    return rep;
}

/// Full offline synthesis of a network: terminal controllers for every
/// subsystem (independent, run in parallel), then stage costs. By default the
/// stage costs are synthesized jointly with the budget shares as decision
/// variables; passing a fixed budget table switches to decoupled
/// per-subsystem solves against that table.
inline std::variant<CertificateSet, Rejection>
synthesize_network(const NetworkModel& net, SynthesisOptions opts = {},
                   std::optional<std::map<int, std::map<int, double>>> budget_rows = std::nullopt)
{
    CertificateSet out;

    std::vector<std::future<std::variant<PassivityCertificate, Rejection>>> futs;
    futs.reserve(net.size());
    for (int i = 0; i < net.size(); ++i)
        futs.push_back(std::async(std::launch::async, [&net, i, opts] {
            return synthesize_passivity(net, i, coupling_rows(net, i), opts);
        }));
    for (int i = 0; i < net.size(); ++i) {
        auto r = futs[i].get();
        if (std::holds_alternative<Rejection>(r)) return std::get<Rejection>(r);
        out.by_id[net.subsystems[i].id].cert = std::get<PassivityCertificate>(std::move(r));
    }

    std::map<int, Mat> P_by_pos, K_by_pos;
    for (int i = 0; i < net.size(); ++i) {
        P_by_pos[i] = out.by_id.at(net.subsystems[i].id).cert.P;
        K_by_pos[i] = out.by_id.at(net.subsystems[i].id).cert.K;
    }

    if (!budget_rows) {
        std::vector<int> region(net.size());
        for (int i = 0; i < net.size(); ++i) region[i] = i;
        auto r = synthesize_stage_costs_joint(net, region, P_by_pos, K_by_pos, {}, opts);
        if (std::holds_alternative<Rejection>(r)) return std::get<Rejection>(r);
        auto joint = std::get<JointStageCostResult>(std::move(r));
        for (auto& [id, w] : joint.weights) out.by_id.at(id).weights = std::move(w);
        return out;
    }

    const auto& rows = *budget_rows;
    std::vector<std::future<std::variant<StageCostWeights, Rejection>>> wfuts;
    for (int i = 0; i < net.size(); ++i) {
        std::map<int, Mat> nbr_P;
        for (int j : net.neighbors[i]) nbr_P[j] = P_by_pos.at(j);
        const Mat K = K_by_pos.at(i);
        auto w = weights_for_subsystem(net, i, rows);
        wfuts.push_back(std::async(std::launch::async, [&net, i, nbr_P = std::move(nbr_P), K,
                                                        w = std::move(w), opts] {
            const int n = net.subsystems[i].n(), m = net.subsystems[i].m();
            return synthesize_stage_cost(net, i, nbr_P, K, w, Mat::Identity(n, n), Mat::Identity(m, m), opts);
        }));
    }
    for (int i = 0; i < net.size(); ++i) {
        auto r = wfuts[i].get();
        if (std::holds_alternative<Rejection>(r)) return std::get<Rejection>(r);
        auto& entry = out.by_id.at(net.subsystems[i].id);
        entry.weights = std::get<StageCostWeights>(std::move(r));
        entry.weights.n_row = rows.at(net.subsystems[i].id);
    }
    return out;
}

}  // namespace pnpmpc
