#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "pnpmpc/linalg.hpp"

namespace pnpmpc {

/// Frobenius-nearest positive semidefinite matrix: eigendecompose and clamp
/// negative eigenvalues to zero.
inline Mat project_psd(const Mat& S, double sym_tol = 1e-10)
{
    if (!is_symmetric(S, sym_tol))
        throw std::invalid_argument("project_psd: input is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(S));
    Vec ev = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Matrix-valued affine map z -> S0 + sum_t z_t basis_t, constrained PSD.
struct LMIBlock {
    Mat S0;
    std::vector<std::pair<int, Mat>> terms;  // (decision index, symmetric basis)

    int size() const { return static_cast<int>(S0.rows()); }

    Mat eval(const Vec& z) const
    {
        Mat S = S0;
        for (const auto& [t, basis] : terms) S += z(t) * basis;
        return S;
    }
};

struct LinearRow {
    std::vector<std::pair<int, double>> coeffs;
    double rhs = 0.0;

    double eval(const Vec& z) const
    {
        double v = 0.0;
        for (const auto& [t, a] : coeffs) v += a * z(t);
        return v;
    }
};

/// Feasibility problem: find z with every block PSD, a^T z <= b rows and
/// a^T z = b rows satisfied.
struct AffineLMIProblem {
    int dim = 0;
    std::vector<LMIBlock> blocks;
    std::vector<LinearRow> linear_ineq;
    std::vector<LinearRow> linear_eq;

    void validate() const
    {
        for (const auto& b : blocks) {
            if (!is_symmetric(b.S0, 1e-9)) throw std::invalid_argument("LMI block: constant term not symmetric");
            for (const auto& [t, basis] : b.terms) {
                if (t < 0 || t >= dim) throw std::invalid_argument("LMI block: variable index out of range");
                if (basis.rows() != b.S0.rows() || !is_symmetric(basis, 1e-9))
                    throw std::invalid_argument("LMI block: basis term malformed");
            }
        }
    }
};

enum class LMIStatus { Feasible, Infeasible, MaxIter };

enum class LMIMethod {
    DouglasRachford,  // fast feasibility; default
    Dykstra           // converges to the projection of z0 onto the feasible set
};

struct LMIResult {
    LMIStatus status = LMIStatus::MaxIter;
    Vec z;
    int iterations = 0;
    double block_residual = std::numeric_limits<double>::infinity();   // worst -min eigenvalue
    double linear_residual = std::numeric_limits<double>::infinity();  // worst row violation
};

struct LMIOptions {
    double tol = 1e-7;
    int max_iter = 20000;
    Vec z0;  // initial point
    LMIMethod method = LMIMethod::DouglasRachford;
    int stall_window = 500;
    double stall_improvement = 1e-8;
    // Iterate tap (iteration, block residual, linear residual), e.g. for CSV dumps.
    std::function<void(int, double, double)> on_iterate;
};

/// Projection-based LMI feasibility kernel. Both methods alternate between
/// the affine manifold {S_b = S_b(z), equality rows} and the product of PSD
/// cones; inequality rows enter as slack coordinates (Douglas-Rachford) or
/// as half-space sets in the Dykstra cycle. Infeasibility is declared when
/// the residual stalls above tolerance.
class LMISolver {
public:
    LMISolver(const AffineLMIProblem& prob, LMIOptions opts = {}) : prob_(prob), opts_(std::move(opts))
    {
        prob.validate();
        const int d = prob.dim;
        ni_ = static_cast<int>(prob.linear_ineq.size());
        ne_ = static_cast<int>(prob.linear_eq.size());
        const bool with_slacks = opts_.method == LMIMethod::DouglasRachford;

        Mat kkt = Mat::Zero(d + ne_, d + ne_);
        kkt.topLeftCorner(d, d) = Mat::Identity(d, d);
        for (const auto& b : prob.blocks)
            for (const auto& [t, Bt] : b.terms)
                for (const auto& [s, Bs] : b.terms)
                    kkt(t, s) += (Bt.array() * Bs.array()).sum();
        if (with_slacks)
            for (const auto& row : prob.linear_ineq)
                for (const auto& [t1, a1] : row.coeffs)
                    for (const auto& [t2, a2] : row.coeffs)
                        kkt(t1, t2) += a1 * a2;
        for (int r = 0; r < ne_; ++r)
            for (const auto& [t, a] : prob.linear_eq[r].coeffs) {
                kkt(d + r, t) = a;
                kkt(t, d + r) = a;
            }
        kkt_ = Eigen::PartialPivLU<Mat>(kkt);
    }

    LMIResult solve()
    {
        return opts_.method == LMIMethod::DouglasRachford ? solve_dr() : solve_dykstra();
    }

private:
    struct Point {
        Vec z;
        Vec slack;             // inequality slacks (Douglas-Rachford only)
        std::vector<Mat> S;
    };

    LMIResult solve_dr()
    {
        const int d = prob_.dim;
        const int nb = static_cast<int>(prob_.blocks.size());

        Point w;
        w.z = opts_.z0.size() == d ? opts_.z0 : Vec::Zero(d);
        w.S = evaluate_blocks(w.z);
        w.slack = slack_of(w.z);

        Point u;
        u.S.resize(nb);
        u.slack.resize(ni_);

        LMIResult res;
        double best_residual = std::numeric_limits<double>::infinity();
        int since_improvement = 0;
        for (int it = 0; it < opts_.max_iter; ++it) {
            project_affine_dr(w, u);

            double block_res = 0.0, lin_res = 0.0;
            for (const auto& Sb : u.S) block_res = std::max(block_res, -min_eigenvalue(Sb));
            for (int r = 0; r < ni_; ++r) lin_res = std::max(lin_res, -u.slack(r));
            if (opts_.on_iterate) opts_.on_iterate(it, block_res, lin_res);
            res.iterations = it + 1;
            res.block_residual = block_res;
            res.linear_residual = lin_res;
            const double residual = std::max(block_res, lin_res);
            if (residual <= opts_.tol) {
                res.status = LMIStatus::Feasible;
                res.z = u.z;
                return res;
            }

            // w += P_B(2u - w) - u; the z coordinates are unconstrained in B.
            for (int b = 0; b < nb; ++b) {
                Mat refl = 2.0 * u.S[b] - w.S[b];
                w.S[b] += clamp_psd(refl) - u.S[b];
            }
            Vec refl_s = 2.0 * u.slack - w.slack;
            w.slack += refl_s.cwiseMax(0.0) - u.slack;
            w.z = u.z;

            if (residual < best_residual * (1.0 - opts_.stall_improvement)) {
                best_residual = residual;
                since_improvement = 0;
            } else if (++since_improvement >= opts_.stall_window) {
                res.status = LMIStatus::Infeasible;
                res.z = u.z;
                return res;
            }
        }
        res.status = since_improvement >= opts_.stall_window / 2 ? LMIStatus::Infeasible : LMIStatus::MaxIter;
        res.z = u.z;
        return res;
    }

    LMIResult solve_dykstra()
    {
        const int d = prob_.dim;
        const int nb = static_cast<int>(prob_.blocks.size());

        Vec z = opts_.z0.size() == d ? opts_.z0 : Vec::Zero(d);
        z = project_affine_dykstra(z, evaluate_blocks(z));
        std::vector<Mat> S = evaluate_blocks(z);

        std::vector<Mat> corr_psd(nb);
        for (int b = 0; b < nb; ++b) corr_psd[b] = Mat::Zero(S[b].rows(), S[b].cols());
        std::vector<Vec> corr_half(ni_, Vec::Zero(d));
        Vec corr_aff_z = Vec::Zero(d);
        std::vector<Mat> corr_aff_S = corr_psd;

        LMIResult res;
        double best_residual = std::numeric_limits<double>::infinity();
        int since_improvement = 0;
        for (int it = 0; it < opts_.max_iter; ++it) {
            for (int b = 0; b < nb; ++b) {
                Mat y = S[b] + corr_psd[b];
                Mat proj = clamp_psd(y);
                corr_psd[b] = y - proj;
                S[b] = proj;
            }
            for (int r = 0; r < ni_; ++r) {
                Vec y = z + corr_half[r];
                Vec proj = project_halfspace(prob_.linear_ineq[r], y);
                corr_half[r] = y - proj;
                z = proj;
            }
            {
                Vec yz = z + corr_aff_z;
                std::vector<Mat> yS(nb);
                for (int b = 0; b < nb; ++b) yS[b] = S[b] + corr_aff_S[b];
                Vec zp = project_affine_dykstra(yz, yS);
                std::vector<Mat> Sp = evaluate_blocks(zp);
                corr_aff_z = yz - zp;
                for (int b = 0; b < nb; ++b) corr_aff_S[b] = yS[b] - Sp[b];
                z = zp;
                S = std::move(Sp);
            }

            double block_res = 0.0, lin_res = 0.0;
            for (const auto& Sb : S) block_res = std::max(block_res, -min_eigenvalue(Sb));
            for (const auto& row : prob_.linear_ineq) lin_res = std::max(lin_res, row.eval(z) - row.rhs);
            if (opts_.on_iterate) opts_.on_iterate(it, block_res, lin_res);
            res.iterations = it + 1;
            res.block_residual = block_res;
            res.linear_residual = lin_res;
            const double residual = std::max(block_res, lin_res);
            if (residual <= opts_.tol) {
                res.status = LMIStatus::Feasible;
                res.z = z;
                return res;
            }
            if (residual < best_residual * (1.0 - opts_.stall_improvement)) {
                best_residual = residual;
                since_improvement = 0;
            } else if (++since_improvement >= opts_.stall_window) {
                res.status = LMIStatus::Infeasible;
                res.z = z;
                return res;
            }
        }
        res.status = since_improvement >= opts_.stall_window / 2 ? LMIStatus::Infeasible : LMIStatus::MaxIter;
        res.z = z;
        return res;
    }

    std::vector<Mat> evaluate_blocks(const Vec& z) const
    {
        std::vector<Mat> S;
        S.reserve(prob_.blocks.size());
        for (const auto& b : prob_.blocks) S.push_back(b.eval(z));
        return S;
    }

    Vec slack_of(const Vec& z) const
    {
        Vec s(ni_);
        for (int r = 0; r < ni_; ++r) s(r) = prob_.linear_ineq[r].rhs - prob_.linear_ineq[r].eval(z);
        return s;
    }

    static Mat clamp_psd(const Mat& S)
    {
        Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(S));
        if (es.eigenvalues().minCoeff() >= 0.0) return S;
        return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
    }

    static Vec project_halfspace(const LinearRow& row, const Vec& z)
    {
        const double v = row.eval(z) - row.rhs;
        if (v <= 0.0) return z;
        double nrm2 = 0.0;
        for (const auto& [t, a] : row.coeffs) nrm2 += a * a;
        if (nrm2 == 0.0) return z;
        Vec out = z;
        for (const auto& [t, a] : row.coeffs) out(t) -= v * a / nrm2;
        return out;
    }

    /// Least-squares point of the affine manifold nearest to (z, slack, S);
    /// result has S_b = S_b(z) and exact slacks by construction.
    void project_affine_dr(const Point& in, Point& out) const
    {
        const int d = prob_.dim;
        Vec rhs = Vec::Zero(d + ne_);
        rhs.head(d) = in.z;
        for (std::size_t b = 0; b < prob_.blocks.size(); ++b) {
            const Mat resid = in.S[b] - prob_.blocks[b].S0;
            for (const auto& [t, Bt] : prob_.blocks[b].terms)
                rhs(t) += (Bt.array() * resid.array()).sum();
        }
        for (int r = 0; r < ni_; ++r) {
            const double c = prob_.linear_ineq[r].rhs - in.slack(r);
            for (const auto& [t, a] : prob_.linear_ineq[r].coeffs) rhs(t) += a * c;
        }
        for (int r = 0; r < ne_; ++r) rhs(prob_.dim + r) = prob_.linear_eq[r].rhs;
        Vec sol = kkt_.solve(rhs);
        out.z = sol.head(d);
        out.S = evaluate_blocks(out.z);
        out.slack = slack_of(out.z);
    }

    Vec project_affine_dykstra(const Vec& z_in, const std::vector<Mat>& S_in) const
    {
        const int d = prob_.dim;
        Vec rhs = Vec::Zero(d + ne_);
        rhs.head(d) = z_in;
        for (std::size_t b = 0; b < prob_.blocks.size(); ++b) {
            const Mat resid = S_in[b] - prob_.blocks[b].S0;
            for (const auto& [t, Bt] : prob_.blocks[b].terms)
                rhs(t) += (Bt.array() * resid.array()).sum();
        }
        for (int r = 0; r < ne_; ++r) rhs(d + r) = prob_.linear_eq[r].rhs;
        Vec sol = kkt_.solve(rhs);
        return sol.head(d);
    }

    const AffineLMIProblem& prob_;
    LMIOptions opts_;
    int ni_ = 0, ne_ = 0;
    Eigen::PartialPivLU<Mat> kkt_;
};

inline LMIResult solve_lmi_feasibility(const AffineLMIProblem& prob, LMIOptions opts = {})
{
    return LMISolver(prob, std::move(opts)).solve();
}

}  // namespace pnpmpc
