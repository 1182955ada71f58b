#pragma once

#include "pnpmpc/layout.hpp"
#include "pnpmpc/synthesis.hpp"

namespace pnpmpc {

/// Ellipsoidal terminal set { x : (x-c)^T P (x-c) <= alpha^2 } with the
/// offline shape P and the cached quantities the affine online rows need.
/// alpha, c, d are decision results filled in per solve.
struct TerminalSet {
    Mat P;
    double alpha = 0.0;
    Vec c, d;

    // Cached from (P, K, network) offline.
    Mat P_inv;
    Vec pinv_diag, pinv_abs_rows;
    Mat P_inv_sqrt;
    Vec G_norms;    // ||G^k P^-1/2||_2 per state-constraint row
    Vec HK_norms;   // ||H^l K P^-1/2||_2 per input-constraint row
    Mat A_cl_abs;   // |A_N + B K U W^T| over the neighbourhood stack
    Vec col_abs;    // column sums of A_cl_abs

    static TerminalSet precompute(const NetworkModel& net, int i, const Mat& P, const Mat& K)
    {
        TerminalSet t;
        t.P = P;
        t.c = Vec::Zero(net.subsystems[i].n());
        t.d = Vec::Zero(net.subsystems[i].m());
        t.P_inv = symmetrize(P.inverse());
        t.pinv_diag = t.P_inv.diagonal();
        t.pinv_abs_rows = abs_row_sums(t.P_inv);
        t.P_inv_sqrt = inverse_sqrt(P);
        const auto& sub = net.subsystems[i];
        t.G_norms.resize(sub.state_poly.rows());
        for (int k = 0; k < sub.state_poly.rows(); ++k)
            t.G_norms(k) = (sub.state_poly.G.row(k) * t.P_inv_sqrt).norm();
        t.HK_norms.resize(sub.input_poly.rows());
        for (int l = 0; l < sub.input_poly.rows(); ++l)
            t.HK_norms(l) = (sub.input_poly.G.row(l) * K * t.P_inv_sqrt).norm();
        t.A_cl_abs = closed_loop_nbhd(net, i, K).cwiseAbs();
        t.col_abs = t.A_cl_abs.colwise().sum();
        return t;
    }

    double membership_residual(const Vec& x) const
    {
        return (x - c).dot(P * (x - c)) - alpha * alpha;
    }
    bool contains(const Vec& x, double tol = 1e-9) const { return membership_residual(x) <= tol; }
};

inline std::vector<TerminalSet> precompute_terminal_sets(const NetworkModel& net, const CertificateSet& certs)
{
    std::vector<TerminalSet> out;
    out.reserve(net.size());
    for (int i = 0; i < net.size(); ++i) {
        const auto& e = certs.at(net.subsystems[i].id);
        out.push_back(TerminalSet::precompute(net, i, e.cert.P, e.cert.K));
    }
    return out;
}

/// Context for the terminal-ingredient row builders, shared between the
/// tracking problem and the transition problem. owner_key maps a network
/// position to the layout owner it is stored under; terminal_time is the
/// step whose state enters the membership rows.
struct TerminalRowContext {
    const NetworkModel& net;
    const CertificateSet& certs;
    const std::vector<TerminalSet>& terminal;
    std::vector<int> owner_key;
    int terminal_time = 0;
    double lambda_scale = 0.95;
    double margin = 0.0;
};

/// Artificial equilibrium rows: equilibrium dynamics across neighbours, the
/// terminal control law tying d to (x_e, u_e), and the lambda-scaled
/// constraint sets.
inline void build_equilibrium_constraints(const TerminalRowContext& ctx, const VariableLayout& layout,
                                          ProblemAccumulator& acc)
{
    const auto& net = ctx.net;
    for (int i = 0; i < net.size(); ++i) {
        const auto& sub = net.subsystems[i];
        const int owner = ctx.owner_key[i];
        const int xe = layout.offset(owner, VarKind::EqState);
        const int ue = layout.offset(owner, VarKind::EqInput);
        const int d = layout.offset(owner, VarKind::Offset);
        const Mat& K = ctx.certs.at(sub.id).cert.K;

        // x_e = A_N x_e,N + B u_e
        for (int r = 0; r < sub.n(); ++r) {
            auto& row = acc.add_row(owner, true, "eq_dynamics");
            row.coef.emplace_back(xe + r, 1.0);
            for (int j : net.neighbors[i]) {
                const int off = net.nbhd_offset(i, j);
                const int xej = layout.offset(ctx.owner_key[j], VarKind::EqState);
                for (int cidx = 0; cidx < net.subsystems[j].n(); ++cidx) {
                    const double a = net.A_nbhd[i](r, off + cidx);
                    if (a != 0.0) row.coef.emplace_back(xej + cidx, -a);
                }
            }
            for (int cidx = 0; cidx < sub.m(); ++cidx) {
                const double a = sub.B(r, cidx);
                if (a != 0.0) row.coef.emplace_back(ue + cidx, -a);
            }
            row.rhs = 0.0;
        }
        // u_e = K x_e + d
        for (int r = 0; r < sub.m(); ++r) {
            auto& row = acc.add_row(owner, true, "eq_control");
            row.coef.emplace_back(ue + r, 1.0);
            for (int cidx = 0; cidx < sub.n(); ++cidx)
                if (K(r, cidx) != 0.0) row.coef.emplace_back(xe + cidx, -K(r, cidx));
            row.coef.emplace_back(d + r, -1.0);
            row.rhs = 0.0;
        }
        // G x_e <= lambda g, H u_e <= lambda h
        for (int r = 0; r < sub.state_poly.rows(); ++r) {
            auto& row = acc.add_row(owner, false, "eq_state_set");
            for (int cidx = 0; cidx < sub.n(); ++cidx)
                if (sub.state_poly.G(r, cidx) != 0.0) row.coef.emplace_back(xe + cidx, sub.state_poly.G(r, cidx));
            row.rhs = ctx.lambda_scale * sub.state_poly.g(r) - ctx.margin;
        }
        for (int r = 0; r < sub.input_poly.rows(); ++r) {
            auto& row = acc.add_row(owner, false, "eq_input_set");
            for (int cidx = 0; cidx < sub.m(); ++cidx)
                if (sub.input_poly.G(r, cidx) != 0.0) row.coef.emplace_back(ue + cidx, sub.input_poly.G(r, cidx));
            row.rhs = ctx.lambda_scale * sub.input_poly.g(r) - ctx.margin;
        }
    }
}

/// Linearized terminal membership: diagonal-dominance rows in alpha and the
/// componentwise bound b-bar on x(T) - c. Satisfaction implies membership in
/// the exact ellipsoid.
inline void build_terminal_membership(const TerminalRowContext& ctx, const VariableLayout& layout,
                                      ProblemAccumulator& acc)
{
    const auto& net = ctx.net;
    for (int i = 0; i < net.size(); ++i) {
        const auto& sub = net.subsystems[i];
        const int owner = ctx.owner_key[i];
        const auto& ts = ctx.terminal[i];
        const int xT = layout.offset(owner, VarKind::State, ctx.terminal_time);
        const int al = layout.offset(owner, VarKind::Alpha);
        const int ce = layout.offset(owner, VarKind::Center);
        const int bb = layout.offset(owner, VarKind::MemberBound);

        for (int j = 0; j < sub.n(); ++j) {
            auto& row = acc.add_row(owner, false, "member_dominance");
            row.coef.emplace_back(bb + j, 1.0);
            row.coef.emplace_back(al, ts.pinv_abs_rows(j) - 2.0 * ts.pinv_diag(j));
            row.rhs = 0.0;
        }
        {
            auto& row = acc.add_row(owner, false, "member_budget");
            for (int j = 0; j < sub.n(); ++j) row.coef.emplace_back(bb + j, 1.0);
            row.coef.emplace_back(al, -1.0);
            row.rhs = 0.0;
        }
        for (int j = 0; j < sub.n(); ++j) {
            auto& up = acc.add_row(owner, false, "member_upper");
            up.coef.emplace_back(xT + j, 1.0);
            up.coef.emplace_back(ce + j, -1.0);
            up.coef.emplace_back(bb + j, -1.0);
            up.rhs = 0.0;
            auto& lo = acc.add_row(owner, false, "member_lower");
            lo.coef.emplace_back(xT + j, -1.0);
            lo.coef.emplace_back(ce + j, 1.0);
            lo.coef.emplace_back(bb + j, -1.0);
            lo.rhs = 0.0;
        }
        {
            auto& row = acc.add_row(owner, false, "alpha_sign");
            row.coef.emplace_back(al, -1.0);
            row.rhs = 0.0;
        }
    }
}

/// Positive-invariance rows: a diagonal-dominance certificate coupling the
/// own set size with the neighbours' sizes and centers through the
/// closed-loop map, with multipliers lambda_ij and drift bound b.
inline void build_invariance_constraints(const TerminalRowContext& ctx, const VariableLayout& layout,
                                         ProblemAccumulator& acc)
{
    const auto& net = ctx.net;
    for (int i = 0; i < net.size(); ++i) {
        const auto& sub = net.subsystems[i];
        const int owner = ctx.owner_key[i];
        const auto& ts = ctx.terminal[i];
        const int al = layout.offset(owner, VarKind::Alpha);
        const int ce = layout.offset(owner, VarKind::Center);
        const int dd = layout.offset(owner, VarKind::Offset);
        const int b = layout.offset(owner, VarKind::DriftBound);
        const int lm = layout.offset(owner, VarKind::InvarMult);
        const Mat A_cl = closed_loop_nbhd(net, i, ctx.certs.at(sub.id).cert.K);
        const int nN = net.nbhd_dim(i);

        // Own-block dominance rows over k in 1..n_i.
        for (int k = 0; k < sub.n(); ++k) {
            auto& row = acc.add_row(owner, false, "invar_own");
            row.coef.emplace_back(al, ts.pinv_abs_rows(k) - 2.0 * ts.pinv_diag(k));
            for (int j : net.neighbors[i]) {
                const int off = net.nbhd_offset(i, j);
                const int alj = layout.offset(ctx.owner_key[j], VarKind::Alpha);
                double w = 0.0;
                for (int l = 0; l < net.subsystems[j].n(); ++l) w += ts.A_cl_abs(k, off + l);
                if (w != 0.0) row.coef.emplace_back(alj, w);
            }
            row.coef.emplace_back(b + k, 1.0);
            row.rhs = 0.0;
        }
        // Center drift |A_cl c_N + B d - c| <= b.
        for (int k = 0; k < sub.n(); ++k) {
            for (double sgn : {1.0, -1.0}) {
                auto& row = acc.add_row(owner, false, sgn > 0 ? "invar_drift_up" : "invar_drift_lo");
                for (int j : net.neighbors[i]) {
                    const int off = net.nbhd_offset(i, j);
                    const int cj = layout.offset(ctx.owner_key[j], VarKind::Center);
                    for (int l = 0; l < net.subsystems[j].n(); ++l) {
                        const double a = A_cl(k, off + l);
                        if (a != 0.0) row.coef.emplace_back(cj + l, sgn * a);
                    }
                }
                for (int l = 0; l < sub.m(); ++l) {
                    const double a = sub.B(k, l);
                    if (a != 0.0) row.coef.emplace_back(dd + l, sgn * a);
                }
                row.coef.emplace_back(ce + k, -sgn);
                row.coef.emplace_back(b + k, -1.0);
                row.rhs = 0.0;
            }
        }
        // Neighbour-block dominance rows over the neighbourhood stack.
        for (int k = 0; k < nN; ++k) {
            // locate the neighbour owning stack row k
            int jn = -1, koff = 0;
            for (int j : net.neighbors[i]) {
                const int off = net.nbhd_offset(i, j);
                if (k >= off && k < off + net.subsystems[j].n()) {
                    jn = j;
                    koff = k - off;
                    break;
                }
            }
            const Mat& Pj = ctx.certs.at(net.subsystems[jn].id).cert.P;
            const double diag = Pj(koff, koff);
            const double absrow = Pj.row(koff).cwiseAbs().sum();
            int lam_idx = 0;
            for (int j : net.neighbors[i]) {
                if (j == jn) break;
                ++lam_idx;
            }
            auto& row = acc.add_row(owner, false, "invar_neighbour");
            row.coef.emplace_back(lm + lam_idx, absrow - 2.0 * diag);
            const int alj = layout.offset(ctx.owner_key[jn], VarKind::Alpha);
            if (ts.col_abs(k) != 0.0) row.coef.emplace_back(alj, ts.col_abs(k));
            row.rhs = 0.0;
        }
        // Budget row alpha - sum lambda_ij >= sum b and multiplier signs.
        {
            auto& row = acc.add_row(owner, false, "invar_budget");
            for (int k = 0; k < sub.n(); ++k) row.coef.emplace_back(b + k, 1.0);
            for (std::size_t j = 0; j < net.neighbors[i].size(); ++j)
                row.coef.emplace_back(lm + static_cast<int>(j), 1.0);
            row.coef.emplace_back(al, -1.0);
            row.rhs = 0.0;
        }
        for (std::size_t j = 0; j < net.neighbors[i].size(); ++j) {
            auto& row = acc.add_row(owner, false, "invar_mult_sign");
            row.coef.emplace_back(lm + static_cast<int>(j), -1.0);
            row.rhs = 0.0;
        }
    }
}

/// Constraint tightening: the terminal ellipsoid (and its control image)
/// must fit inside the state and input polytopes; exact support-function
/// rows, affine in (alpha, c, d).
inline void build_terminal_tightening(const TerminalRowContext& ctx, const VariableLayout& layout,
                                      ProblemAccumulator& acc)
{
    const auto& net = ctx.net;
    for (int i = 0; i < net.size(); ++i) {
        const auto& sub = net.subsystems[i];
        const int owner = ctx.owner_key[i];
        const auto& ts = ctx.terminal[i];
        const Mat& K = ctx.certs.at(sub.id).cert.K;
        const int al = layout.offset(owner, VarKind::Alpha);
        const int ce = layout.offset(owner, VarKind::Center);
        const int dd = layout.offset(owner, VarKind::Offset);

        for (int k = 0; k < sub.state_poly.rows(); ++k) {
            auto& row = acc.add_row(owner, false, "tighten_state");
            for (int cidx = 0; cidx < sub.n(); ++cidx)
                if (sub.state_poly.G(k, cidx) != 0.0) row.coef.emplace_back(ce + cidx, sub.state_poly.G(k, cidx));
            row.coef.emplace_back(al, ts.G_norms(k));
            row.rhs = sub.state_poly.g(k) - ctx.margin;
        }
        const Mat HK = sub.input_poly.G * K;
        for (int l = 0; l < sub.input_poly.rows(); ++l) {
            auto& row = acc.add_row(owner, false, "tighten_input");
            for (int cidx = 0; cidx < sub.n(); ++cidx)
                if (HK(l, cidx) != 0.0) row.coef.emplace_back(ce + cidx, HK(l, cidx));
            for (int cidx = 0; cidx < sub.m(); ++cidx)
                if (sub.input_poly.G(l, cidx) != 0.0) row.coef.emplace_back(dd + cidx, sub.input_poly.G(l, cidx));
            row.coef.emplace_back(al, ts.HK_norms(l));
            row.rhs = sub.input_poly.g(l) - ctx.margin;
        }
    }
}

/// The online tracking problem over one network.
struct TrackingMPCProblem {
    const NetworkModel* net = nullptr;
    const CertificateSet* certs = nullptr;
    std::vector<TerminalSet> terminal;  // per position, precomputed
    int horizon = 8;
    double lambda_scale = 0.95;
    double margin = 0.0;
    Vec x_measured;                     // stacked over net
    std::map<int, Vec> x_target;        // by id, defaults to zero
    std::map<int, Vec> u_target;

    Vec target_state(int i) const
    {
        auto it = x_target.find(net->subsystems[i].id);
        return it != x_target.end() ? it->second : Vec::Zero(net->subsystems[i].n());
    }
    Vec target_input(int i) const
    {
        auto it = u_target.find(net->subsystems[i].id);
        return it != u_target.end() ? it->second : Vec::Zero(net->subsystems[i].m());
    }
};

inline TrackingMPCProblem make_tracking_problem(const NetworkModel& net, const CertificateSet& certs,
                                                const Vec& x_measured, int horizon = 8)
{
    TrackingMPCProblem p;
    p.net = &net;
    p.certs = &certs;
    p.terminal = precompute_terminal_sets(net, certs);
    p.horizon = horizon;
    p.x_measured = x_measured;
    return p;
}

inline VariableLayout make_mpc_layout(const TrackingMPCProblem& p)
{
    VariableLayout layout;
    const auto& net = *p.net;
    for (int i = 0; i < net.size(); ++i) {
        const int n = net.subsystems[i].n(), m = net.subsystems[i].m();
        for (int t = 0; t <= p.horizon; ++t) layout.add(i, VarKind::State, t, n);
        for (int t = 0; t < p.horizon; ++t) layout.add(i, VarKind::Input, t, m);
        layout.add(i, VarKind::EqState, -1, n);
        layout.add(i, VarKind::EqInput, -1, m);
        layout.add(i, VarKind::Alpha, -1, 1);
        layout.add(i, VarKind::Center, -1, n);
        layout.add(i, VarKind::Offset, -1, m);
        layout.add(i, VarKind::DriftBound, -1, n);
        layout.add(i, VarKind::MemberBound, -1, n);
        layout.add(i, VarKind::InvarMult, -1, static_cast<int>(net.neighbors[i].size()));
    }
    return layout;
}

/// Tracking cost: stage deviations from the artificial equilibrium, terminal
/// deviation weighted by the storage matrix, and the equilibrium-to-target
/// offset.
inline void build_cost(const TrackingMPCProblem& p, const VariableLayout& layout, ProblemAccumulator& acc)
{
    const auto& net = *p.net;
    for (int i = 0; i < net.size(); ++i) {
        const auto& e = p.certs->at(net.subsystems[i].id);
        const int xe = layout.offset(i, VarKind::EqState);
        const int ue = layout.offset(i, VarKind::EqInput);
        for (int t = 0; t < p.horizon; ++t) {
            acc.add_quadratic(e.weights.Q, layout.offset(i, VarKind::State, t), xe);
            acc.add_quadratic(e.weights.R, layout.offset(i, VarKind::Input, t), ue);
        }
        acc.add_quadratic(e.cert.P, layout.offset(i, VarKind::State, p.horizon), xe);
        // ||x_e - x_r||_S^2 with constant target
        acc.add_quadratic(e.weights.S, xe, -1);
        const Vec xr = p.target_state(i);
        acc.add_linear(xe, Vec(-2.0 * e.weights.S * xr));
        acc.add_constant(xr.dot(e.weights.S * xr));
    }
}

/// Initial state, dynamics and running constraint rows.
inline void build_dynamics_rows(const TrackingMPCProblem& p, const VariableLayout& layout, ProblemAccumulator& acc)
{
    const auto& net = *p.net;
    for (int i = 0; i < net.size(); ++i) {
        const auto& sub = net.subsystems[i];
        const int n = sub.n(), m = sub.m();
        for (int r = 0; r < n; ++r) {
            auto& row = acc.add_row(i, true, "initial_state");
            row.coef.emplace_back(layout.offset(i, VarKind::State, 0) + r, 1.0);
            row.rhs = p.x_measured(net.state_offset[i] + r);
        }
        for (int t = 0; t < p.horizon; ++t) {
            const int xn = layout.offset(i, VarKind::State, t + 1);
            const int ut = layout.offset(i, VarKind::Input, t);
            for (int r = 0; r < n; ++r) {
                auto& row = acc.add_row(i, true, "dynamics");
                row.coef.emplace_back(xn + r, 1.0);
                for (int j : net.neighbors[i]) {
                    const int off = net.nbhd_offset(i, j);
                    const int xj = layout.offset(j, VarKind::State, t);
                    for (int cidx = 0; cidx < net.subsystems[j].n(); ++cidx) {
                        const double a = net.A_nbhd[i](r, off + cidx);
                        if (a != 0.0) row.coef.emplace_back(xj + cidx, -a);
                    }
                }
                for (int cidx = 0; cidx < m; ++cidx)
                    if (sub.B(r, cidx) != 0.0) row.coef.emplace_back(ut + cidx, -sub.B(r, cidx));
                row.rhs = 0.0;
            }
        }
        for (int t = 0; t <= p.horizon; ++t) {
            const int xt = layout.offset(i, VarKind::State, t);
            for (int r = 0; r < sub.state_poly.rows(); ++r) {
                auto& row = acc.add_row(i, false, "state_set");
                for (int cidx = 0; cidx < n; ++cidx)
                    if (sub.state_poly.G(r, cidx) != 0.0) row.coef.emplace_back(xt + cidx, sub.state_poly.G(r, cidx));
                row.rhs = sub.state_poly.g(r) - p.margin;
            }
        }
        for (int t = 0; t < p.horizon; ++t) {
            const int ut = layout.offset(i, VarKind::Input, t);
            for (int r = 0; r < sub.input_poly.rows(); ++r) {
                auto& row = acc.add_row(i, false, "input_set");
                for (int cidx = 0; cidx < m; ++cidx)
                    if (sub.input_poly.G(r, cidx) != 0.0) row.coef.emplace_back(ut + cidx, sub.input_poly.G(r, cidx));
                row.rhs = sub.input_poly.g(r) - p.margin;
            }
        }
    }
}

inline TerminalRowContext terminal_context(const TrackingMPCProblem& p)
{
    TerminalRowContext ctx{*p.net, *p.certs, p.terminal, {}, p.horizon, p.lambda_scale, p.margin};
    ctx.owner_key.resize(p.net->size());
    for (int i = 0; i < p.net->size(); ++i) ctx.owner_key[i] = i;
    return ctx;
}

inline ProblemAccumulator assemble_mpc(const TrackingMPCProblem& p, const VariableLayout& layout)
{
    ProblemAccumulator acc(layout.size());
    build_cost(p, layout, acc);
    build_dynamics_rows(p, layout, acc);
    const auto ctx = terminal_context(p);
    build_equilibrium_constraints(ctx, layout, acc);
    build_terminal_membership(ctx, layout, acc);
    build_invariance_constraints(ctx, layout, acc);
    build_terminal_tightening(ctx, layout, acc);
    return acc;
}

struct MPCSolution {
    QPStatus status = QPStatus::MaxIter;
    bool feasible() const { return status == QPStatus::Solved; }
    double objective = 0.0;
    int iterations = 0;
    Vec z;  // full assignment, layout order
    // Per-subsystem views (position-indexed).
    std::vector<Mat> x;      // n x (T+1)
    std::vector<Mat> u;      // m x T
    std::vector<Vec> x_eq, u_eq, center, offset;
    std::vector<double> alpha;
    Vec first_input;         // stacked
    Vec y;                   // duals for warm starts
};

struct MPCSolveOptions {
    QPOptions qp;
    bool validate_membership = true;
};

inline MPCSolution extract_solution(const TrackingMPCProblem& p, const VariableLayout& layout,
                                    const ProblemAccumulator& acc, const QPResult& res)
{
    const auto& net = *p.net;
    MPCSolution sol;
    sol.status = res.status;
    sol.iterations = res.iterations;
    sol.z = res.z;
    sol.y = res.y;
    sol.objective = res.objective + acc.constant();
    if (res.status != QPStatus::Solved) return sol;

    const int M = net.size();
    sol.x.resize(M);
    sol.u.resize(M);
    sol.x_eq.resize(M);
    sol.u_eq.resize(M);
    sol.center.resize(M);
    sol.offset.resize(M);
    sol.alpha.resize(M);
    sol.first_input = Vec::Zero(net.m_total);
    for (int i = 0; i < M; ++i) {
        const int n = net.subsystems[i].n(), m = net.subsystems[i].m();
        sol.x[i].resize(n, p.horizon + 1);
        for (int t = 0; t <= p.horizon; ++t)
            sol.x[i].col(t) = res.z.segment(layout.offset(i, VarKind::State, t), n);
        sol.u[i].resize(m, p.horizon);
        for (int t = 0; t < p.horizon; ++t)
            sol.u[i].col(t) = res.z.segment(layout.offset(i, VarKind::Input, t), m);
        sol.x_eq[i] = res.z.segment(layout.offset(i, VarKind::EqState), n);
        sol.u_eq[i] = res.z.segment(layout.offset(i, VarKind::EqInput), m);
        sol.center[i] = res.z.segment(layout.offset(i, VarKind::Center), n);
        sol.offset[i] = res.z.segment(layout.offset(i, VarKind::Offset), m);
        sol.alpha[i] = std::max(0.0, res.z(layout.offset(i, VarKind::Alpha)));
        sol.first_input.segment(net.input_offset[i], m) = sol.u[i].col(0);
    }
    return sol;
}

/// Assembles the full tracking program and solves it centrally.
inline MPCSolution assemble_and_solve(const TrackingMPCProblem& p, MPCSolveOptions opts = {})
{
    const VariableLayout layout = make_mpc_layout(p);
    const ProblemAccumulator acc = assemble_mpc(p, layout);
    const QuadraticProgram qp = acc.lower();
    const QPResult res = solve_qp(qp, opts.qp);
    MPCSolution sol = extract_solution(p, layout, acc, res);
    if (sol.feasible() && opts.validate_membership) {
        for (int i = 0; i < p.net->size(); ++i) {
            TerminalSet ts = p.terminal[i];
            ts.alpha = sol.alpha[i];
            ts.c = sol.center[i];
            if (ts.membership_residual(sol.x[i].col(p.horizon)) > 1e-6)
                throw std::runtime_error("MPC: terminal state escaped its ellipsoid");
        }
    }
    return sol;
}

/// Shifted one-step candidate used by the recursive-feasibility checks: the
/// trajectory tail advances one step, the terminal controllers append the
/// final step, and the auxiliary bounds are re-derived for the new terminal
/// state. Equilibria and terminal sets carry over unchanged.
inline Vec shifted_candidate(const TrackingMPCProblem& p, const VariableLayout& layout, const MPCSolution& prev)
{
    const auto& net = *p.net;
    const int T = p.horizon;
    Vec z = Vec::Zero(layout.size());

    // Terminal-controller step at the old terminal states.
    Vec xT = Vec::Zero(net.n_total), uT = Vec::Zero(net.m_total);
    for (int i = 0; i < net.size(); ++i) {
        xT.segment(net.state_offset[i], net.subsystems[i].n()) = prev.x[i].col(T);
        uT.segment(net.input_offset[i], net.subsystems[i].m()) =
            p.certs->at(net.subsystems[i].id).cert.K * prev.x[i].col(T) + prev.offset[i];
    }
    const Vec x_new_terminal = net.step(xT, uT);

    for (int i = 0; i < net.size(); ++i) {
        const int n = net.subsystems[i].n(), m = net.subsystems[i].m();
        for (int t = 0; t < T; ++t)
            z.segment(layout.offset(i, VarKind::State, t), n) = prev.x[i].col(t + 1);
        z.segment(layout.offset(i, VarKind::State, T), n) =
            x_new_terminal.segment(net.state_offset[i], n);
        for (int t = 0; t + 1 < T; ++t)
            z.segment(layout.offset(i, VarKind::Input, t), m) = prev.u[i].col(t + 1);
        z.segment(layout.offset(i, VarKind::Input, T - 1), m) =
            uT.segment(net.input_offset[i], m);
        z.segment(layout.offset(i, VarKind::EqState), n) = prev.x_eq[i];
        z.segment(layout.offset(i, VarKind::EqInput), m) = prev.u_eq[i];
        z(layout.offset(i, VarKind::Alpha)) = prev.alpha[i];
        z.segment(layout.offset(i, VarKind::Center), n) = prev.center[i];
        z.segment(layout.offset(i, VarKind::Offset), m) = prev.offset[i];
        // Auxiliary bounds recomputed for the candidate.
        const Vec drift = [&] {
            Vec cN(net.nbhd_dim(i));
            for (int j : net.neighbors[i])
                cN.segment(net.nbhd_offset(i, j), net.subsystems[j].n()) = prev.center[j];
            const Mat A_cl = closed_loop_nbhd(net, i, p.certs->at(net.subsystems[i].id).cert.K);
            return Vec(A_cl * cN + net.subsystems[i].B * prev.offset[i] - prev.center[i]);
        }();
        z.segment(layout.offset(i, VarKind::DriftBound), n) = drift.cwiseAbs();
        z.segment(layout.offset(i, VarKind::MemberBound), n) =
            (x_new_terminal.segment(net.state_offset[i], n) - prev.center[i]).cwiseAbs();
        // Multipliers: smallest values satisfying the neighbour dominance rows.
        const auto& ts = p.terminal[i];
        const int lm = layout.offset(i, VarKind::InvarMult);
        int lam_idx = 0;
        for (int j : net.neighbors[i]) {
            double need = 0.0;
            const int off = net.nbhd_offset(i, j);
            const Mat& Pj = p.certs->at(net.subsystems[j].id).cert.P;
            for (int k = 0; k < net.subsystems[j].n(); ++k) {
                const double denom = 2.0 * Pj(k, k) - Pj.row(k).cwiseAbs().sum();
                if (denom > 0.0 && ts.col_abs(off + k) > 0.0)
                    need = std::max(need, prev.alpha[j] * ts.col_abs(off + k) / denom);
            }
            z(lm + lam_idx) = need;
            ++lam_idx;
        }
    }
    return z;
}

}  // namespace pnpmpc
