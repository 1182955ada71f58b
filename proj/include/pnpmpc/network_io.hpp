#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "pnpmpc/network.hpp"

namespace pnpmpc {

using json = nlohmann::json;

inline json matrix_to_json(const Mat& A)
{
    json rows = json::array();
    for (int r = 0; r < A.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < A.cols(); ++c) row.push_back(A(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline Mat matrix_from_json(const json& j)
{
    if (!j.is_array() || j.empty()) throw std::invalid_argument("expected a non-empty nested array for a matrix");
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j.at(0).size());
    Mat A(rows, cols);
    for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(j.at(r).size()) != cols)
            throw std::invalid_argument("ragged matrix rows in JSON");
        for (int c = 0; c < cols; ++c) A(r, c) = j.at(r).at(c).get<double>();
    }
    return A;
}

inline json vector_to_json(const Vec& v)
{
    json out = json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline Vec vector_from_json(const json& j)
{
    Vec v(static_cast<int>(j.size()));
    for (int i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
    return v;
}

inline json polytope_to_json(const Polytope& p)
{
    return json{{"G", matrix_to_json(p.G)}, {"g", vector_to_json(p.g)}};
}

inline Polytope polytope_from_json(const json& j, int dim, const char* what)
{
    Polytope p;
    if (j.is_number()) {
        p = Polytope::box(dim, j.get<double>());
    } else if (j.is_object() && j.contains("box")) {
        p = Polytope::box(dim, j.at("box").get<double>());
    } else if (j.is_object() && j.contains("G") && j.contains("g")) {
        p.G = matrix_from_json(j.at("G"));
        p.g = vector_from_json(j.at("g"));
    } else {
        throw std::invalid_argument(std::string(what) + ": expected a box bound or {G,g}");
    }
    if (p.G.rows() != p.g.size() || p.dim() != dim)
        throw std::invalid_argument(std::string(what) + ": polytope dimensions inconsistent");
    return p;
}

inline json subsystem_to_json(const SubsystemModel& s)
{
    return json{{"id", s.id},
                {"A", matrix_to_json(s.A)},
                {"B", matrix_to_json(s.B)},
                {"F", matrix_to_json(s.F)},
                {"C", matrix_to_json(s.C)},
                {"state_constraints", polytope_to_json(s.state_poly)},
                {"input_constraints", polytope_to_json(s.input_poly)}};
}

inline SubsystemModel subsystem_from_json(const json& j)
{
    SubsystemModel s;
    s.id = j.at("id").get<int>();
    s.A = matrix_from_json(j.at("A"));
    s.B = matrix_from_json(j.at("B"));
    s.F = matrix_from_json(j.at("F"));
    s.C = matrix_from_json(j.at("C"));
    s.state_poly = polytope_from_json(j.at("state_constraints"), static_cast<int>(s.A.rows()), "state_constraints");
    s.input_poly = polytope_from_json(j.at("input_constraints"), static_cast<int>(s.B.cols()), "input_constraints");
    s.validate();
    return s;
}

inline json network_to_json(const NetworkModel& net)
{
    json subs = json::array();
    for (const auto& s : net.subsystems) subs.push_back(subsystem_to_json(s));
    json edges = json::array();
    for (int i = 0; i < net.size(); ++i)
        for (int j : net.neighbors[i]) {
            if (j <= i) continue;
            std::vector<double> gains(net.channels());
            for (int k = 0; k < net.channels(); ++k) gains[k] = net.graph.gain(k, i, j);
            edges.push_back(json{{"i", net.subsystems[i].id}, {"j", net.subsystems[j].id}, {"gains", gains}});
        }
    return json{{"continuous", net.continuous_time},
                {"sampling_time", net.sampling_time},
                {"channels", net.channels()},
                {"subsystems", subs},
                {"edges", edges}};
}

inline NetworkModel network_from_json(const json& j)
{
    std::vector<SubsystemModel> subs;
    std::map<int, int> pos;
    for (const auto& js : j.at("subsystems")) {
        SubsystemModel s = subsystem_from_json(js);
        if (pos.count(s.id)) throw std::invalid_argument("duplicate subsystem id " + std::to_string(s.id));
        pos[s.id] = static_cast<int>(subs.size());
        subs.push_back(std::move(s));
    }
    const int channels = j.at("channels").get<int>();
    CouplingGraph g = CouplingGraph::empty(static_cast<int>(subs.size()), channels);
    if (j.contains("edges"))
        for (const auto& je : j.at("edges")) {
            const int a = je.at("i").get<int>();
            const int b = je.at("j").get<int>();
            if (!pos.count(a) || !pos.count(b))
                throw std::invalid_argument("edge references unknown subsystem id");
            g.add_edge(pos.at(a), pos.at(b), je.at("gains").get<std::vector<double>>());
        }
    NetworkModel net = assemble_network(std::move(subs), std::move(g));
    net.continuous_time = j.value("continuous", false);
    net.sampling_time = j.value("sampling_time", 0.0);
    return net;
}

inline NetworkModel load_network(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open network file: " + path);
    json j;
    in >> j;
    return network_from_json(j);
}

inline void save_network(const std::string& path, const NetworkModel& net)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write network file: " + path);
    out << network_to_json(net).dump(2) << "\n";
}

/// Stable content hash of the network description (canonical JSON dump).
inline std::string network_hash(const NetworkModel& net)
{
    return hex64(fnv1a(network_to_json(net).dump()));
}

}  // namespace pnpmpc
