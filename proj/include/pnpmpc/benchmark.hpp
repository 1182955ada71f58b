#pragma once

#include <tuple>
#include <vector>

#include "pnpmpc/network.hpp"

namespace pnpmpc {

/// Mass-spring-damper benchmark: each mass carries position/velocity states,
/// a force input, and two coupling channels (spring and damper). Couplings
/// follow the eight-mass topology below.
namespace msd {

constexpr double kMass = 1.0;
constexpr double kStiffness = 1.0;
constexpr double kDamping = 2.0;
constexpr double kCouplingStiffness = 0.4;
constexpr double kCouplingDamping = 0.8;
constexpr double kSamplingTime = 0.1;
constexpr int kHorizon = 8;

/// Continuous-time single mass. The stable sign convention puts -k/m and
/// -c/m in the second row; `literal_sign` flips them to the positive values
/// (which make the open loop unstable) for reproduction purposes.
inline SubsystemModel subsystem(int id, bool literal_sign = false)
{
    SubsystemModel s;
    s.id = id;
    const double sgn = literal_sign ? 1.0 : -1.0;
    s.A = Mat{{0.0, 1.0}, {sgn * kStiffness / kMass, sgn * kDamping / kMass}};
    s.B = Mat{{0.0}, {1.0}};
    s.F = Mat{{0.0, 0.0}, {1.0, 1.0}};
    s.C = Mat{{1.0, 0.0}, {0.0, 1.0}};
    s.state_poly = Polytope::box(2, 1.0);
    s.input_poly = Polytope::box(1, 1.0);
    return s;
}

/// Edges of the benchmark topology (1-based mass ids).
inline std::vector<std::pair<int, int>> topology_edges()
{
    return {{1, 2}, {1, 8}, {2, 3}, {2, 5}, {3, 4}, {4, 5}, {5, 6}, {5, 7}};
}

struct BuildOptions {
    std::vector<int> masses;            // 1-based ids to include
    double k18 = kCouplingStiffness;    // spring gain on edge 1-8
    double c18 = kCouplingDamping;      // damper gain on edge 1-8
    bool literal_sign = false;
};

/// Continuous-time benchmark network over the requested masses; edges with
/// both endpoints present are kept.
inline NetworkModel continuous_network(const BuildOptions& opt)
{
    std::vector<SubsystemModel> subs;
    std::map<int, int> pos;
    for (int id : opt.masses) {
        pos[id] = static_cast<int>(subs.size());
        subs.push_back(subsystem(id, opt.literal_sign));
    }
    CouplingGraph g = CouplingGraph::empty(static_cast<int>(subs.size()), 2);
    for (const auto& [a, b] : topology_edges()) {
        if (!pos.count(a) || !pos.count(b)) continue;
        const bool is18 = (a == 1 && b == 8) || (a == 8 && b == 1);
        g.add_edge(pos.at(a), pos.at(b),
                   {is18 ? opt.k18 : kCouplingStiffness, is18 ? opt.c18 : kCouplingDamping});
    }
    NetworkModel net = assemble_network(std::move(subs), std::move(g));
    net.continuous_time = true;
    return net;
}

inline NetworkModel discrete_network(const BuildOptions& opt, double tau = kSamplingTime)
{
    return discretize(continuous_network(opt), tau);
}

inline std::vector<int> all_masses()
{
    return {1, 2, 3, 4, 5, 6, 7, 8};
}

inline std::vector<int> initial_masses()  // the simulation starts without mass 8
{
    return {1, 2, 3, 4, 5, 6, 7};
}

/// Discrete seven-mass network (masses 1..7), the plant the scenario starts
/// from.
inline NetworkModel seven_mass_network()
{
    BuildOptions opt;
    opt.masses = initial_masses();
    return discrete_network(opt);
}

/// Discrete eight-mass network with configurable coupling on edge 1-8.
inline NetworkModel eight_mass_network(double k18 = kCouplingStiffness, double c18 = kCouplingDamping)
{
    BuildOptions opt;
    opt.masses = all_masses();
    opt.k18 = k18;
    opt.c18 = c18;
    return discrete_network(opt);
}

}  // namespace msd
}  // namespace pnpmpc
