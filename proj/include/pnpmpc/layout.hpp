#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "pnpmpc/qp.hpp"

namespace pnpmpc {

/// Decision-variable roles of the online problems.
enum class VarKind {
    State,        // x_i(t)
    Input,        // u_i(t)
    EqState,      // artificial equilibrium state
    EqInput,      // artificial equilibrium input
    Alpha,        // terminal set size
    Center,       // terminal set center
    Offset,       // terminal controller offset d_i
    DriftBound,   // b_i, bound on the center drift
    MemberBound,  // b-bar_i, bound on |x(T) - c|
    InvarMult,    // lambda_ij multipliers, one per neighbour
    SteadyState,  // x_s_i (transition problems)
    SteadyInput   // u_s_i (transition problems)
};

/// Variables other agents may reference; everything else stays private to
/// its owner in the consensus split.
inline bool is_shared_kind(VarKind k)
{
    switch (k) {
        case VarKind::State:
        case VarKind::EqState:
        case VarKind::Alpha:
        case VarKind::Center:
        case VarKind::SteadyState:
            return true;
        default:
            return false;
    }
}

/// Flat index space for (owner, kind, time)-keyed vector variables.
class VariableLayout {
public:
    struct Entry {
        int owner;
        VarKind kind;
        int time;
        int offset;
        int dim;
    };

    int add(int owner, VarKind kind, int time, int dim)
    {
        const auto key = std::make_tuple(owner, kind, time);
        if (index_.count(key)) throw std::invalid_argument("layout: duplicate variable");
        index_[key] = static_cast<int>(entries_.size());
        entries_.push_back({owner, kind, time, size_, dim});
        size_ += dim;
        return entries_.back().offset;
    }

    bool has(int owner, VarKind kind, int time = -1) const
    {
        return index_.count(std::make_tuple(owner, kind, time)) > 0;
    }

    const Entry& entry(int owner, VarKind kind, int time = -1) const
    {
        auto it = index_.find(std::make_tuple(owner, kind, time));
        if (it == index_.end()) throw std::invalid_argument("layout: unknown variable");
        return entries_[it->second];
    }

    int offset(int owner, VarKind kind, int time = -1) const { return entry(owner, kind, time).offset; }
    int dim(int owner, VarKind kind, int time = -1) const { return entry(owner, kind, time).dim; }

    int size() const { return size_; }
    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::map<std::tuple<int, VarKind, int>, int> index_;
    std::vector<Entry> entries_;
    int size_ = 0;
};

/// One linear row with an owner tag; the owner is the subsystem whose agent
/// holds the row in the consensus split.
struct ConstraintRow {
    int owner = -1;
    bool is_eq = false;
    std::vector<std::pair<int, double>> coef;
    double rhs = 0.0;
    const char* tag = "";

    double eval(const Vec& z) const
    {
        double v = 0.0;
        for (const auto& [c, a] : coef) v += a * z(c);
        return v;
    }
};

/// Accumulates rows and quadratic cost terms, then lowers to a sparse
/// QuadraticProgram. Rows keep their owner tags for partitioning and for
/// order-independent fingerprints.
class ProblemAccumulator {
public:
    explicit ProblemAccumulator(int dim) : dim_(dim), linear_(Vec::Zero(dim)) {}

    int dim() const { return dim_; }

    ConstraintRow& add_row(int owner, bool is_eq, const char* tag)
    {
        rows_.push_back(ConstraintRow{owner, is_eq, {}, 0.0, tag});
        return rows_.back();
    }

    /// Adds w * (x_a - x_b)^T W (x_a - x_b) expanded over the offsets; pass
    /// offset_b = -1 for a plain w * x_a^T W x_a term.
    void add_quadratic(const Mat& W, int offset_a, int offset_b, double w = 1.0)
    {
        const int n = static_cast<int>(W.rows());
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                const double v = w * W(r, c);
                if (v == 0.0) continue;
                quad_.emplace_back(offset_a + r, offset_a + c, v);
                if (offset_b >= 0) {
                    quad_.emplace_back(offset_b + r, offset_b + c, v);
                    quad_.emplace_back(offset_a + r, offset_b + c, -v);
                    quad_.emplace_back(offset_b + r, offset_a + c, -v);
                }
            }
    }

    void add_linear(int offset, const Vec& v)
    {
        linear_.segment(offset, v.size()) += v;
    }

    void add_constant(double c) { constant_ += c; }

    const std::vector<ConstraintRow>& rows() const { return rows_; }
    const std::vector<Triplet>& quad_terms() const { return quad_; }
    const Vec& linear() const { return linear_; }
    double constant() const { return constant_; }

    QuadraticProgram lower() const
    {
        QuadraticProgram qp;
        qp.dim = dim_;
        qp.q = linear_;
        // Cost convention: terms were accumulated as full quadratic forms
        // z^T W z, while the solver minimizes 0.5 z^T P z + q^T z.
        std::vector<Triplet> scaled;
        scaled.reserve(quad_.size());
        for (const auto& t : quad_) scaled.emplace_back(t.row(), t.col(), 2.0 * t.value());
        qp.P.resize(dim_, dim_);
        qp.P.setFromTriplets(scaled.begin(), scaled.end());

        int ne = 0, ni = 0;
        for (const auto& r : rows_) (r.is_eq ? ne : ni)++;
        qp.A_eq.resize(ne, dim_);
        qp.A_ineq.resize(ni, dim_);
        qp.b_eq.resize(ne);
        qp.b_ineq.resize(ni);
        std::vector<Triplet> te, ti;
        int re = 0, ri = 0;
        for (const auto& r : rows_) {
            if (r.is_eq) {
                for (const auto& [c, a] : r.coef) te.emplace_back(re, c, a);
                qp.b_eq(re++) = r.rhs;
            } else {
                for (const auto& [c, a] : r.coef) ti.emplace_back(ri, c, a);
                qp.b_ineq(ri++) = r.rhs;
            }
        }
        qp.A_eq.setFromTriplets(te.begin(), te.end());
        qp.A_ineq.setFromTriplets(ti.begin(), ti.end());
        return qp;
    }

    /// Order-independent fingerprint of the row set (owner, type, sorted
    /// coefficients, rhs), plus the row count in the low bits.
    std::uint64_t row_fingerprint() const
    {
        std::uint64_t acc = 0;
        for (const auto& r : rows_) {
            auto coef = r.coef;
            std::sort(coef.begin(), coef.end());
            std::string s = std::to_string(r.owner) + (r.is_eq ? "=" : "<");
            char buf[64];
            for (const auto& [c, a] : coef) {
                std::snprintf(buf, sizeof(buf), "%d:%.17g,", c, a);
                s += buf;
            }
            std::snprintf(buf, sizeof(buf), "|%.17g", r.rhs);
            s += buf;
            acc ^= fnv1a(s);
        }
        return acc ^ (static_cast<std::uint64_t>(rows_.size()) << 1);
    }

    /// Worst violation of the accumulated rows at a full assignment.
    std::pair<double, double> row_residuals(const Vec& z) const
    {
        double eq_res = 0.0, ineq_res = 0.0;
        for (const auto& r : rows_) {
            const double v = r.eval(z) - r.rhs;
            if (r.is_eq)
                eq_res = std::max(eq_res, std::abs(v));
            else
                ineq_res = std::max(ineq_res, v);
        }
        return {eq_res, ineq_res};
    }

private:
    int dim_;
    std::vector<ConstraintRow> rows_;
    std::vector<Triplet> quad_;
    Vec linear_;
    double constant_ = 0.0;
};

}  // namespace pnpmpc
