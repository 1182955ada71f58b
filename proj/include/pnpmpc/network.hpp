#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pnpmpc/linalg.hpp"

namespace pnpmpc {

/// Polytope { v : G v <= g }.
struct Polytope {
    Mat G;
    Vec g;

    static Polytope box(int dim, double bound)
    {
        Polytope p;
        p.G = Mat::Zero(2 * dim, dim);
        p.G.topRows(dim) = Mat::Identity(dim, dim);
        p.G.bottomRows(dim) = -Mat::Identity(dim, dim);
        p.g = Vec::Constant(2 * dim, bound);
        return p;
    }

    int rows() const { return static_cast<int>(G.rows()); }
    int dim() const { return static_cast<int>(G.cols()); }

    bool contains(const Vec& v, double tol = 0.0) const
    {
        return ((G * v - g).array() <= tol).all();
    }

    /// Worst-case violation of G v <= g (negative when strictly inside).
    double violation(const Vec& v) const { return (G * v - g).maxCoeff(); }
};

/// One subsystem of the network: local dynamics, per-channel coupling input
/// columns F (n x p) and output rows C (p x n), and local constraint sets.
struct SubsystemModel {
    int id = -1;
    Mat A;             // n x n
    Mat B;             // n x m
    Mat F;             // n x p, column k drives the k-th coupling channel
    Mat C;             // p x n, row k is the k-th measured output
    Polytope state_poly;
    Polytope input_poly;

    int n() const { return static_cast<int>(A.rows()); }
    int m() const { return static_cast<int>(B.cols()); }
    int p() const { return static_cast<int>(C.rows()); }

    void validate() const
    {
        if (A.rows() != A.cols()) throw std::invalid_argument("subsystem " + std::to_string(id) + ": A not square");
        if (B.rows() != A.rows()) throw std::invalid_argument("subsystem " + std::to_string(id) + ": B row mismatch");
        if (F.rows() != A.rows()) throw std::invalid_argument("subsystem " + std::to_string(id) + ": F row mismatch");
        if (C.cols() != A.cols()) throw std::invalid_argument("subsystem " + std::to_string(id) + ": C column mismatch");
        if (F.cols() != C.rows()) throw std::invalid_argument("subsystem " + std::to_string(id) + ": channel count mismatch between F and C");
        if (state_poly.dim() != n()) throw std::invalid_argument("subsystem " + std::to_string(id) + ": state polytope dimension mismatch");
        if (input_poly.dim() != m()) throw std::invalid_argument("subsystem " + std::to_string(id) + ": input polytope dimension mismatch");
    }
};

/// Per-channel coupling gains l_{ij,k} over an undirected neighbour structure.
/// Indices are positions in the subsystem list, not file ids.
struct CouplingGraph {
    int M = 0;
    int channels = 0;
    // weights[k][{i,j}] = l_{ij,k}; both (i,j) and (j,i) are stored.
    std::vector<std::map<std::pair<int, int>, double>> weights;
    std::vector<std::set<int>> neighbor_sets;  // N_i, always containing i

    static CouplingGraph empty(int M, int channels)
    {
        CouplingGraph g;
        g.M = M;
        g.channels = channels;
        g.weights.resize(channels);
        g.neighbor_sets.resize(M);
        for (int i = 0; i < M; ++i) g.neighbor_sets[i].insert(i);
        return g;
    }

    /// Symmetric edge: l_{ij,k} = l_{ji,k} = gains[k].
    void add_edge(int i, int j, const std::vector<double>& gains)
    {
        if (i == j) throw std::invalid_argument("coupling graph: self edge");
        if (i < 0 || j < 0 || i >= M || j >= M) throw std::invalid_argument("coupling graph: index out of range");
        if (static_cast<int>(gains.size()) != channels)
            throw std::invalid_argument("coupling graph: gain count does not match channel count");
        neighbor_sets[i].insert(j);
        neighbor_sets[j].insert(i);
        for (int k = 0; k < channels; ++k) {
            if (gains[k] == 0.0) continue;
            weights[k][{i, j}] = gains[k];
            weights[k][{j, i}] = gains[k];
        }
    }

    double gain(int k, int i, int j) const
    {
        auto it = weights[k].find({i, j});
        return it == weights[k].end() ? 0.0 : it->second;
    }

    bool adjacent(int i, int j) const { return neighbor_sets[i].count(j) > 0; }

    void validate() const
    {
        for (int k = 0; k < channels; ++k)
            for (const auto& [ij, w] : weights[k]) {
                if (w == 0.0) continue;
                const auto [i, j] = ij;
                if (i == j || neighbor_sets[i].count(j) == 0)
                    throw std::invalid_argument("coupling graph: weight on non-neighbour pair (" +
                                                std::to_string(i) + "," + std::to_string(j) + ")");
            }
    }
};

/// Per-channel Laplacians plus the channel-interleaved global Laplacian
/// L = sum_k L_k (x) e_k e_k^T (rows/columns ordered subsystem-major,
/// channel-minor).
struct LaplacianSet {
    std::vector<Mat> per_channel;  // each M x M
    Mat global;                    // (M p) x (M p)
};

inline LaplacianSet build_laplacians(const CouplingGraph& graph)
{
    graph.validate();
    LaplacianSet out;
    const int M = graph.M;
    const int p = graph.channels;
    out.per_channel.assign(p, Mat::Zero(M, M));
    for (int k = 0; k < p; ++k) {
        Mat& L = out.per_channel[k];
        for (const auto& [ij, w] : graph.weights[k]) {
            const auto [i, j] = ij;
            L(i, j) -= w;
            L(i, i) += w;
        }
    }
    out.global = Mat::Zero(M * p, M * p);
    for (int k = 0; k < p; ++k)
        for (int i = 0; i < M; ++i)
            for (int j = 0; j < M; ++j)
                out.global(i * p + k, j * p + k) = out.per_channel[k](i, j);
    return out;
}

/// Assembled network: subsystems plus neighbourhood dynamics and the 0/1
/// projections x_i = U_i x, x_{N_i} = W_i x, u_i = V_i u.
struct NetworkModel {
    std::vector<SubsystemModel> subsystems;
    CouplingGraph graph;
    bool continuous_time = false;
    double sampling_time = 0.0;  // set by discretize()

    // Derived on assembly.
    std::vector<std::vector<int>> neighbors;  // N_i sorted ascending, includes i
    std::vector<Mat> A_nbhd;                  // n_i x n_{N_i}
    std::vector<Mat> U, W, V;                 // selector matrices
    std::vector<int> state_offset, input_offset;
    int n_total = 0, m_total = 0;

    int size() const { return static_cast<int>(subsystems.size()); }
    int channels() const { return graph.channels; }

    const SubsystemModel& sub(int i) const { return subsystems[i]; }

    int nbhd_dim(int i) const
    {
        int d = 0;
        for (int j : neighbors[i]) d += subsystems[j].n();
        return d;
    }

    /// Offset of subsystem j's states inside the x_{N_i} stack.
    int nbhd_offset(int i, int j) const
    {
        int off = 0;
        for (int q : neighbors[i]) {
            if (q == j) return off;
            off += subsystems[q].n();
        }
        throw std::invalid_argument("nbhd_offset: " + std::to_string(j) + " not a neighbour of " + std::to_string(i));
    }

    Vec extract_nbhd(int i, const Vec& x) const { return W[i] * x; }

    /// One step of the neighbourhood form x_i+ = A_{N_i} x_{N_i} + B_i u_i.
    Vec step(const Vec& x, const Vec& u) const
    {
        Vec xp(n_total);
        for (int i = 0; i < size(); ++i)
            xp.segment(state_offset[i], subsystems[i].n()) =
                A_nbhd[i] * (W[i] * x) + subsystems[i].B * (V[i] * u);
        return xp;
    }
};

inline NetworkModel assemble_network(std::vector<SubsystemModel> subsystems, CouplingGraph graph)
{
    if (static_cast<int>(subsystems.size()) != graph.M)
        throw std::invalid_argument("assemble_network: graph size does not match subsystem count");
    graph.validate();

    NetworkModel net;
    const int M = graph.M;
    for (auto& s : subsystems) s.validate();
    const int p = subsystems.empty() ? graph.channels : subsystems.front().p();
    for (const auto& s : subsystems)
        if (s.p() != p)
            throw std::invalid_argument("assemble_network: all subsystems must share the output dimension");
    if (p != graph.channels)
        throw std::invalid_argument("assemble_network: channel count mismatch between graph and subsystems");

    net.subsystems = std::move(subsystems);
    net.graph = std::move(graph);

    net.state_offset.resize(M);
    net.input_offset.resize(M);
    int n = 0, m = 0;
    for (int i = 0; i < M; ++i) {
        net.state_offset[i] = n;
        net.input_offset[i] = m;
        n += net.subsystems[i].n();
        m += net.subsystems[i].m();
    }
    net.n_total = n;
    net.m_total = m;

    net.neighbors.resize(M);
    for (int i = 0; i < M; ++i)
        net.neighbors[i] = std::vector<int>(net.graph.neighbor_sets[i].begin(), net.graph.neighbor_sets[i].end());

    net.U.resize(M);
    net.W.resize(M);
    net.V.resize(M);
    net.A_nbhd.resize(M);
    for (int i = 0; i < M; ++i) {
        const auto& si = net.subsystems[i];
        net.U[i] = Mat::Zero(si.n(), n);
        net.U[i].middleCols(net.state_offset[i], si.n()) = Mat::Identity(si.n(), si.n());
        net.V[i] = Mat::Zero(si.m(), m);
        net.V[i].middleCols(net.input_offset[i], si.m()) = Mat::Identity(si.m(), si.m());

        const int nN = [&] {
            int d = 0;
            for (int j : net.neighbors[i]) d += net.subsystems[j].n();
            return d;
        }();
        net.W[i] = Mat::Zero(nN, n);
        net.A_nbhd[i] = Mat::Zero(si.n(), nN);
        int off = 0;
        for (int j : net.neighbors[i]) {
            const auto& sj = net.subsystems[j];
            net.W[i].block(off, net.state_offset[j], sj.n(), sj.n()) = Mat::Identity(sj.n(), sj.n());
            if (j == i) {
                Mat Aii = si.A;
                for (int k = 0; k < p; ++k) {
                    double lii = 0.0;
                    for (int q : net.neighbors[i])
                        if (q != i) lii += net.graph.gain(k, i, q);
                    Aii -= si.F.col(k) * lii * si.C.row(k);
                }
                net.A_nbhd[i].middleCols(off, si.n()) = Aii;
            } else {
                Mat Aij = Mat::Zero(si.n(), sj.n());
                for (int k = 0; k < p; ++k)
                    Aij += si.F.col(k) * net.graph.gain(k, i, j) * sj.C.row(k);
                net.A_nbhd[i].middleCols(off, sj.n()) = Aij;
            }
            off += sj.n();
        }
    }
    return net;
}

/// Structure-preserving discretization: forward Euler on the local matrices.
/// A_i <- I + tau A_i, B_i <- tau B_i, F_i <- tau F_i; outputs and coupling
/// gains are unchanged, so the Laplacian interconnection pattern is kept
/// exactly.
inline NetworkModel discretize(const NetworkModel& cont, double tau)
{
    if (tau <= 0.0) throw std::invalid_argument("discretize: sampling time must be positive");
    if (!cont.continuous_time) throw std::invalid_argument("discretize: network is already discrete");
    std::vector<SubsystemModel> subs = cont.subsystems;
    for (auto& s : subs) {
        s.A = Mat::Identity(s.n(), s.n()) + tau * s.A;
        s.B = tau * s.B;
        s.F = tau * s.F;
    }
    NetworkModel net = assemble_network(std::move(subs), cont.graph);
    net.continuous_time = false;
    net.sampling_time = tau;
    return net;
}

/// Block-diagonal stack of the per-subsystem output matrices,
/// diag(C_1,...,C_M) of size (M p) x n.
inline Mat stacked_output_matrix(const NetworkModel& net)
{
    const int p = net.channels();
    Mat C = Mat::Zero(net.size() * p, net.n_total);
    for (int i = 0; i < net.size(); ++i)
        C.block(i * p, net.state_offset[i], p, net.subsystems[i].n()) = net.subsystems[i].C;
    return C;
}

/// Global state map A with x+ = A x + B u (rows stacked from A_{N_i} W_i).
inline Mat global_state_matrix(const NetworkModel& net)
{
    Mat A = Mat::Zero(net.n_total, net.n_total);
    for (int i = 0; i < net.size(); ++i)
        A.middleRows(net.state_offset[i], net.subsystems[i].n()) = net.A_nbhd[i] * net.W[i];
    return A;
}

inline Mat global_input_matrix(const NetworkModel& net)
{
    Mat B = Mat::Zero(net.n_total, net.m_total);
    for (int i = 0; i < net.size(); ++i)
        B.block(net.state_offset[i], net.input_offset[i], net.subsystems[i].n(), net.subsystems[i].m()) =
            net.subsystems[i].B;
    return B;
}

/// Restriction of the network to a subset of subsystem positions. Edges with
/// both endpoints in the subset are kept; everything else is dropped.
inline NetworkModel subnetwork(const NetworkModel& net, const std::vector<int>& keep)
{
    std::vector<SubsystemModel> subs;
    std::map<int, int> pos;
    for (int q : keep) {
        pos[q] = static_cast<int>(subs.size());
        subs.push_back(net.subsystems[q]);
    }
    CouplingGraph g = CouplingGraph::empty(static_cast<int>(subs.size()), net.channels());
    for (int k = 0; k < net.channels(); ++k)
        for (const auto& [ij, w] : net.graph.weights[k]) {
            const auto [i, j] = ij;
            if (i < j && pos.count(i) && pos.count(j)) {
                std::vector<double> gains(net.channels(), 0.0);
                gains[k] = w;
                // accumulate channel by channel via direct insertion
                g.neighbor_sets[pos.at(i)].insert(pos.at(j));
                g.neighbor_sets[pos.at(j)].insert(pos.at(i));
                g.weights[k][{pos.at(i), pos.at(j)}] = w;
                g.weights[k][{pos.at(j), pos.at(i)}] = w;
            }
        }
    NetworkModel out = assemble_network(std::move(subs), std::move(g));
    out.continuous_time = net.continuous_time;
    out.sampling_time = net.sampling_time;
    return out;
}

/// Single-subsystem network (used for plugged-out members running standalone).
inline NetworkModel singleton_network(const SubsystemModel& sub, bool continuous, double sampling_time)
{
    NetworkModel out = assemble_network({sub}, CouplingGraph::empty(1, sub.p()));
    out.continuous_time = continuous;
    out.sampling_time = sampling_time;
    return out;
}

}  // namespace pnpmpc
