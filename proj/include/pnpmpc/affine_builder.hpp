#pragma once

#include <map>

#include "pnpmpc/conic.hpp"

namespace pnpmpc {

/// Matrix-valued decision variable: a list of (decision index, elementwise
/// basis) pairs describing how the scalar decisions assemble the matrix.
struct MatrixVar {
    int rows = 0, cols = 0;
    std::vector<std::pair<int, Mat>> entries;

    Mat value(const Vec& z) const
    {
        Mat M = Mat::Zero(rows, cols);
        for (const auto& [t, basis] : entries) M += z(t) * basis;
        return M;
    }
};

/// Allocates scalar decision indices for matrix-shaped variables.
class VarPool {
public:
    int dim() const { return next_; }

    int scalar() { return next_++; }

    MatrixVar full(int rows, int cols)
    {
        MatrixVar v;
        v.rows = rows;
        v.cols = cols;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                Mat basis = Mat::Zero(rows, cols);
                basis(r, c) = 1.0;
                v.entries.emplace_back(next_++, std::move(basis));
            }
        return v;
    }

    MatrixVar symmetric(int n)
    {
        MatrixVar v;
        v.rows = v.cols = n;
        for (int r = 0; r < n; ++r)
            for (int c = r; c < n; ++c) {
                Mat basis = Mat::Zero(n, n);
                basis(r, c) = 1.0;
                basis(c, r) = 1.0;
                v.entries.emplace_back(next_++, std::move(basis));
            }
        return v;
    }

    MatrixVar diagonal(int n)
    {
        MatrixVar v;
        v.rows = v.cols = n;
        for (int r = 0; r < n; ++r) {
            Mat basis = Mat::Zero(n, n);
            basis(r, r) = 1.0;
            v.entries.emplace_back(next_++, std::move(basis));
        }
        return v;
    }

private:
    int next_ = 0;
};

/// Builds a symmetric affine block matrix S(z) = S0 + sum z_t basis_t from
/// placements of constants and L * Var * R products. Off-diagonal placements
/// are mirrored automatically.
class SymBlockBuilder {
public:
    SymBlockBuilder(std::vector<int> block_sizes) : sizes_(std::move(block_sizes))
    {
        offsets_.resize(sizes_.size());
        int off = 0;
        for (std::size_t b = 0; b < sizes_.size(); ++b) {
            offsets_[b] = off;
            off += sizes_[b];
        }
        total_ = off;
        S0_ = Mat::Zero(total_, total_);
    }

    void add_const(int br, int bc, const Mat& M) { place(S0_, br, bc, M); }

    /// Places L * V * R at block (br, bc); pass identity-free forms by empty
    /// matrices meaning identity.
    void add_term(int br, int bc, const MatrixVar& V, const Mat& L = Mat(), const Mat& R = Mat())
    {
        for (const auto& [t, basis] : V.entries) {
            Mat contrib = basis;
            if (L.size() > 0) contrib = L * contrib;
            if (R.size() > 0) contrib = contrib * R;
            place(bases_[t], br, bc, contrib);
        }
    }

    LMIBlock build() const
    {
        LMIBlock blk;
        blk.S0 = symmetrize(S0_);
        for (const auto& [t, B] : bases_) blk.terms.emplace_back(t, symmetrize(B));
        return blk;
    }

private:
    void place(Mat& target, int br, int bc, const Mat& M)
    {
        if (target.size() == 0) target = Mat::Zero(total_, total_);
        if (M.rows() != sizes_[br] || M.cols() != sizes_[bc])
            throw std::invalid_argument("SymBlockBuilder: placement size mismatch");
        target.block(offsets_[br], offsets_[bc], sizes_[br], sizes_[bc]) += M;
        if (br != bc)
            target.block(offsets_[bc], offsets_[br], sizes_[bc], sizes_[br]) += M.transpose();
    }

    std::vector<int> sizes_;
    std::vector<int> offsets_;
    int total_ = 0;
    Mat S0_;
    std::map<int, Mat> bases_;
};

/// PSD constraint "V - shift I >= 0" for a symmetric/diagonal variable.
inline LMIBlock definite_block(const MatrixVar& V, double shift)
{
    LMIBlock blk;
    blk.S0 = -shift * Mat::Identity(V.rows, V.cols);
    for (const auto& [t, basis] : V.entries) blk.terms.emplace_back(t, basis);
    return blk;
}

}  // namespace pnpmpc
