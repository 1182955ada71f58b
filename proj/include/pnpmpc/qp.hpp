#pragma once

#include <Eigen/SparseCholesky>

#include <limits>
#include <vector>

#include "pnpmpc/linalg.hpp"

namespace pnpmpc {

/// min 0.5 z^T P z + q^T z  s.t.  A_eq z = b_eq,  A_ineq z <= b_ineq.
struct QuadraticProgram {
    int dim = 0;
    SpMat P;
    Vec q;
    SpMat A_eq;
    Vec b_eq;
    SpMat A_ineq;
    Vec b_ineq;

    void validate() const
    {
        if (P.rows() != dim || P.cols() != dim || q.size() != dim)
            throw std::invalid_argument("QP: cost dimensions inconsistent");
        if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != dim))
            throw std::invalid_argument("QP: equality rows inconsistent");
        if (A_ineq.rows() != b_ineq.size() || (A_ineq.rows() > 0 && A_ineq.cols() != dim))
            throw std::invalid_argument("QP: inequality rows inconsistent");
        Mat Pd(P);
        if (!is_symmetric(Pd, 1e-9)) throw std::invalid_argument("QP: cost matrix not symmetric");
        if (dim <= 128 && min_eigenvalue(Pd) < -1e-9)
            throw std::invalid_argument("QP: cost matrix not positive semidefinite");
    }

    double objective(const Vec& z) const { return 0.5 * z.dot(P * z) + q.dot(z); }
};

enum class QPStatus { Solved, PrimalInfeasible, DualInfeasible, MaxIter };

inline const char* to_string(QPStatus s)
{
    switch (s) {
        case QPStatus::Solved: return "solved";
        case QPStatus::PrimalInfeasible: return "primal_infeasible";
        case QPStatus::DualInfeasible: return "dual_infeasible";
        default: return "max_iter";
    }
}

struct QPResult {
    QPStatus status = QPStatus::MaxIter;
    Vec z;
    Vec y;  // stacked multipliers [eq; ineq]
    double objective = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    double primal_residual = std::numeric_limits<double>::infinity();
    double dual_residual = std::numeric_limits<double>::infinity();
};

struct QPOptions {
    double eps_abs = 1e-6;
    double eps_rel = 1e-6;
    int max_iter = 20000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;       // over-relaxation
    double eq_rho_scale = 1e3;
    bool adaptive_rho = true;
    bool scaling = true;      // Ruiz equilibration
    int scaling_iters = 10;
    double eps_infeas = 1e-9;
    Vec z0;                   // warm start (primal)
    Vec y0;                   // warm start (dual, stacked [eq; ineq])
};

/// Operator-splitting QP solver: ADMM with over-relaxation on the box form
/// l <= A z <= u, Ruiz-equilibrated, with adaptive penalty and OSQP-style
/// infeasibility certificates. The KKT system is factorized once per rho,
/// so warm-started re-solves are cheap.
class QPSolver {
public:
    explicit QPSolver(const QuadraticProgram& prob, QPOptions opts = {}) : prob_(prob), opts_(opts)
    {
        prob.validate();
        ne_ = static_cast<int>(prob.A_eq.rows());
        ni_ = static_cast<int>(prob.A_ineq.rows());
        m_ = ne_ + ni_;
        const int d = prob.dim;

        P_ = prob.P;
        q_ = prob.q;
        A_.resize(m_, d);
        if (m_ > 0) {
            std::vector<Triplet> trip;
            trip.reserve(prob.A_eq.nonZeros() + prob.A_ineq.nonZeros());
            for (int k = 0; k < prob.A_eq.outerSize(); ++k)
                for (SpMat::InnerIterator it(prob.A_eq, k); it; ++it)
                    trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
            for (int k = 0; k < prob.A_ineq.outerSize(); ++k)
                for (SpMat::InnerIterator it(prob.A_ineq, k); it; ++it)
                    trip.emplace_back(ne_ + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
            A_.setFromTriplets(trip.begin(), trip.end());
        }
        lo_ = Vec::Constant(m_, -kInf);
        up_ = Vec(m_);
        up_.head(ne_) = prob.b_eq;
        lo_.head(ne_) = prob.b_eq;
        up_.tail(ni_) = prob.b_ineq;

        D_ = Vec::Ones(d);
        E_ = Vec::Ones(m_);
        cost_scale_ = 1.0;
        if (opts_.scaling) equilibrate();

        At_ = A_.transpose();
        set_rho(opts_.rho);
    }

    QPResult solve()
    {
        const int d = prob_.dim;
        Vec x = opts_.z0.size() == d ? Vec(opts_.z0.cwiseQuotient(D_)) : Vec::Zero(d);
        Vec y = opts_.y0.size() == m_ ? Vec(cost_scale_ * opts_.y0.cwiseQuotient(E_)) : Vec::Zero(m_);
        Vec zeta = m_ > 0 ? Vec(A_ * x) : Vec(0);
        clamp_box(zeta);

        QPResult res;
        Vec dx_acc = Vec::Zero(d), dy_acc = Vec::Zero(m_);
        for (int it = 0; it < opts_.max_iter; ++it) {
            Vec rhs(d + m_);
            rhs.head(d) = opts_.sigma * x - q_;
            rhs.tail(m_) = zeta - rho_vec_.cwiseInverse().cwiseProduct(y);
            Vec sol = ldlt_.solve(rhs);
            Vec x_tilde = sol.head(d);
            Vec z_tilde = zeta + rho_vec_.cwiseInverse().cwiseProduct(sol.tail(m_) - y);

            Vec x_next = opts_.alpha * x_tilde + (1.0 - opts_.alpha) * x;
            Vec z_relax = opts_.alpha * z_tilde + (1.0 - opts_.alpha) * zeta;
            Vec zeta_next = z_relax + rho_vec_.cwiseInverse().cwiseProduct(y);
            clamp_box(zeta_next);
            Vec y_next = y + rho_vec_.cwiseProduct(z_relax - zeta_next);

            dx_acc += x_next - x;
            dy_acc += y_next - y;
            x = x_next;
            zeta = zeta_next;
            y = y_next;

            if ((it + 1) % check_interval_ == 0 || it + 1 == opts_.max_iter) {
                // Residuals in unscaled units.
                const Vec Ax_s = m_ > 0 ? Vec(A_ * x) : Vec(0);
                const Vec rp_vec = m_ > 0 ? Vec((Ax_s - zeta).cwiseQuotient(E_)) : Vec(0);
                const Vec Px_s = P_ * x;
                const Vec Aty_s = m_ > 0 ? Vec(At_ * y) : Vec::Zero(d);
                const Vec rd_vec = (Px_s + q_ + Aty_s).cwiseQuotient(D_) / cost_scale_;
                const double rp = m_ > 0 ? rp_vec.cwiseAbs().maxCoeff() : 0.0;
                const double rd = rd_vec.cwiseAbs().maxCoeff();
                res.primal_residual = rp;
                res.dual_residual = rd;
                res.iterations = it + 1;

                const double nAx = m_ > 0 ? Ax_s.cwiseQuotient(E_).cwiseAbs().maxCoeff() : 0.0;
                const double nz = m_ > 0 ? zeta.cwiseQuotient(E_).cwiseAbs().maxCoeff() : 0.0;
                const double nPx = Px_s.cwiseQuotient(D_).cwiseAbs().maxCoeff() / cost_scale_;
                const double nAty = m_ > 0 ? Aty_s.cwiseQuotient(D_).cwiseAbs().maxCoeff() / cost_scale_ : 0.0;
                const double nq = q_.cwiseQuotient(D_).cwiseAbs().maxCoeff() / cost_scale_;
                const double eps_p = opts_.eps_abs + opts_.eps_rel * std::max(nAx, nz);
                const double eps_d = opts_.eps_abs + opts_.eps_rel * std::max({nPx, nAty, nq});
                if (rp <= eps_p && rd <= eps_d) {
                    res.status = QPStatus::Solved;
                    finish(res, x, y);
                    return res;
                }
                if (m_ > 0 && primal_infeasible(dy_acc)) {
                    res.status = QPStatus::PrimalInfeasible;
                    finish(res, x, y);
                    return res;
                }
                if (dual_infeasible(dx_acc)) {
                    res.status = QPStatus::DualInfeasible;
                    finish(res, x, y);
                    return res;
                }
                dx_acc.setZero();
                dy_acc.setZero();

                if (opts_.adaptive_rho && rd > 0.0 && rp > 0.0) {
                    const double scale = std::sqrt((rp / std::max(eps_p, 1e-30)) / (rd / std::max(eps_d, 1e-30)));
                    if (scale > 5.0 || scale < 0.2)
                        set_rho(std::clamp(rho_ * std::clamp(scale, 0.1, 10.0), 1e-6, 1e6));
                }
            }
        }
        res.status = QPStatus::MaxIter;
        finish(res, x, y);
        return res;
    }

private:
    static constexpr double kInf = 1e30;

    void finish(QPResult& res, const Vec& x, const Vec& y) const
    {
        res.z = x.cwiseProduct(D_);
        res.y = y.cwiseProduct(E_) / cost_scale_;
        res.objective = prob_.objective(res.z);
    }

    void clamp_box(Vec& v) const { v = v.cwiseMax(lo_).cwiseMin(up_); }

    /// Ruiz equilibration of [[P, A^T], [A, 0]] plus cost normalization; the
    /// scalings are folded into the stored P, q, A, bounds.
    void equilibrate()
    {
        const int d = prob_.dim;
        for (int iter = 0; iter < opts_.scaling_iters; ++iter) {
            Vec dcol = Vec::Zero(d), erow = Vec::Zero(m_);
            for (int k = 0; k < P_.outerSize(); ++k)
                for (SpMat::InnerIterator it(P_, k); it; ++it)
                    dcol(it.col()) = std::max(dcol(it.col()), std::abs(it.value()));
            for (int k = 0; k < A_.outerSize(); ++k)
                for (SpMat::InnerIterator it(A_, k); it; ++it) {
                    dcol(it.col()) = std::max(dcol(it.col()), std::abs(it.value()));
                    erow(it.row()) = std::max(erow(it.row()), std::abs(it.value()));
                }
            Vec ds = dcol.unaryExpr([](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 1.0; });
            Vec es = erow.unaryExpr([](double v) { return v > 0.0 ? 1.0 / std::sqrt(v) : 1.0; });
            P_ = SpMat(ds.asDiagonal() * P_ * ds.asDiagonal());
            A_ = SpMat(es.asDiagonal() * A_ * ds.asDiagonal());
            q_ = q_.cwiseProduct(ds);
            D_ = D_.cwiseProduct(ds);
            E_ = E_.cwiseProduct(es);
        }
        // Cost normalization.
        double pnorm = 0.0;
        for (int k = 0; k < P_.outerSize(); ++k)
            for (SpMat::InnerIterator it(P_, k); it; ++it)
                pnorm = std::max(pnorm, std::abs(it.value()));
        const double qn = q_.size() ? q_.cwiseAbs().maxCoeff() : 0.0;
        const double denom = std::max(1e-8, std::max(pnorm, qn));
        cost_scale_ = 1.0 / denom;
        P_ *= cost_scale_;
        q_ *= cost_scale_;
        // Bounds in scaled row units.
        for (int r = 0; r < m_; ++r) {
            if (lo_(r) > -kInf) lo_(r) *= E_(r);
            up_(r) *= E_(r);
        }
    }

    void set_rho(double rho)
    {
        rho_ = rho;
        rho_vec_ = Vec::Constant(m_, rho);
        rho_vec_.head(ne_).setConstant(rho * opts_.eq_rho_scale);
        const int d = prob_.dim;
        SpMat kkt(d + m_, d + m_);
        std::vector<Triplet> trip;
        trip.reserve(P_.nonZeros() + 2 * A_.nonZeros() + d + m_);
        for (int k = 0; k < P_.outerSize(); ++k)
            for (SpMat::InnerIterator it(P_, k); it; ++it)
                trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        for (int i = 0; i < d; ++i) trip.emplace_back(i, i, opts_.sigma);
        for (int k = 0; k < A_.outerSize(); ++k)
            for (SpMat::InnerIterator it(A_, k); it; ++it) {
                trip.emplace_back(d + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
                trip.emplace_back(static_cast<int>(it.col()), d + static_cast<int>(it.row()), it.value());
            }
        for (int r = 0; r < m_; ++r) trip.emplace_back(d + r, d + r, -1.0 / rho_vec_(r));
        kkt.setFromTriplets(trip.begin(), trip.end());
        ldlt_.compute(kkt);
        if (ldlt_.info() != Eigen::Success)
            throw std::runtime_error("QP: KKT factorization failed");
    }

    bool primal_infeasible(const Vec& dy) const
    {
        const double nrm = dy.cwiseProduct(E_).cwiseAbs().maxCoeff();
        if (nrm <= 0.0) return false;
        const Vec d = dy / dy.cwiseAbs().maxCoeff();
        for (int r = ne_; r < m_; ++r)
            if (d(r) < -opts_.eps_infeas) return false;
        const Vec Atd = (At_ * d).cwiseQuotient(D_);
        if (Atd.cwiseAbs().maxCoeff() > opts_.eps_infeas) return false;
        double support = 0.0;
        for (int r = 0; r < ne_; ++r) support += (up_(r) / E_(r)) * d(r);
        for (int r = ne_; r < m_; ++r) support += (up_(r) / E_(r)) * std::max(d(r), 0.0);
        return support < -opts_.eps_infeas;
    }

    bool dual_infeasible(const Vec& dx) const
    {
        const double nrm = dx.cwiseAbs().maxCoeff();
        if (nrm <= 0.0) return false;
        const Vec d = dx / nrm;
        if (q_.dot(d) >= -opts_.eps_infeas) return false;
        if ((P_ * d).cwiseQuotient(D_).cwiseAbs().maxCoeff() > opts_.eps_infeas) return false;
        if (m_ > 0) {
            const Vec Ad = (A_ * d).cwiseQuotient(E_);
            for (int r = 0; r < ne_; ++r)
                if (std::abs(Ad(r)) > opts_.eps_infeas) return false;
            for (int r = ne_; r < m_; ++r)
                if (Ad(r) > opts_.eps_infeas) return false;
        }
        return true;
    }

    const QuadraticProgram& prob_;
    QPOptions opts_;
    int ne_ = 0, ni_ = 0, m_ = 0;
    SpMat P_, A_, At_;
    Vec q_;
    Vec lo_, up_;
    Vec D_, E_;
    double cost_scale_ = 1.0;
    double rho_ = 0.1;
    Vec rho_vec_;
    Eigen::SimplicialLDLT<SpMat> ldlt_;
    int check_interval_ = 25;
};

inline QPResult solve_qp(const QuadraticProgram& prob, QPOptions opts = {})
{
    return QPSolver(prob, std::move(opts)).solve();
}

}  // namespace pnpmpc
