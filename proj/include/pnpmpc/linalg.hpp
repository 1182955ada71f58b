#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pnpmpc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

inline bool is_symmetric(const Mat& S, double tol = 1e-10)
{
    return S.rows() == S.cols() && (S - S.transpose()).cwiseAbs().maxCoeff() <= tol;
}

inline Mat symmetrize(const Mat& S)
{
    return 0.5 * (S + S.transpose());
}

/// Per-row sum of absolute values, the {.}_j quantity used by the
/// diagonal-dominance linearizations.
inline Vec abs_row_sums(const Mat& S)
{
    return S.cwiseAbs().rowwise().sum();
}

inline double min_eigenvalue(const Mat& S)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(S), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double max_eigenvalue(const Mat& S)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(S), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

/// Symmetric inverse square root of a positive definite matrix.
inline Mat inverse_sqrt(const Mat& S)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(S));
    const Vec ev = es.eigenvalues();
    if (ev.minCoeff() <= 0.0)
        throw std::invalid_argument("inverse_sqrt: matrix is not positive definite");
    return es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
           es.eigenvectors().transpose();
}

inline double spectral_radius(const Mat& A)
{
    return A.eigenvalues().cwiseAbs().maxCoeff();
}

/// FNV-1a, used for content hashes in manifests and row-set fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull)
{
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull)
{
    return fnv1a(s.data(), s.size(), seed);
}

inline std::string hex64(std::uint64_t h)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace pnpmpc
