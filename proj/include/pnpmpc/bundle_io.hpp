#pragma once

#include "pnpmpc/network_io.hpp"
#include "pnpmpc/synthesis.hpp"

namespace pnpmpc {

inline json certificate_to_json(int id, const CertificateSet::Entry& e)
{
    json n_row = json::object();
    for (const auto& [j, v] : e.weights.n_row) n_row[std::to_string(j)] = v;
    return json{{"id", id},
                {"P", matrix_to_json(e.cert.P)},
                {"K", matrix_to_json(e.cert.K)},
                {"D", vector_to_json(e.cert.D)},
                {"Gamma", vector_to_json(e.cert.Gamma)},
                {"E", matrix_to_json(e.cert.E)},
                {"Y", matrix_to_json(e.cert.Y)},
                {"X", vector_to_json(e.cert.X)},
                {"epsilon", e.cert.epsilon},
                {"contraction", e.cert.contraction},
                {"state_abs_sums", vector_to_json(e.cert.state_abs_sums)},
                {"output_abs_sums", vector_to_json(e.cert.output_abs_sums)},
                {"Q", matrix_to_json(e.weights.Q)},
                {"R", matrix_to_json(e.weights.R)},
                {"S", matrix_to_json(e.weights.S)},
                {"n_row", n_row}};
}

inline json certificates_to_json(const CertificateSet& certs, const std::string& net_hash)
{
    json subs = json::array();
    for (const auto& [id, e] : certs.by_id) subs.push_back(certificate_to_json(id, e));
    return json{{"network_hash", net_hash}, {"subsystems", subs}};
}

inline CertificateSet certificates_from_json(const json& j)
{
    CertificateSet out;
    for (const auto& js : j.at("subsystems")) {
        CertificateSet::Entry e;
        e.cert.P = matrix_from_json(js.at("P"));
        e.cert.K = matrix_from_json(js.at("K"));
        e.cert.D = vector_from_json(js.at("D"));
        e.cert.Gamma = vector_from_json(js.at("Gamma"));
        e.cert.E = matrix_from_json(js.at("E"));
        e.cert.Y = matrix_from_json(js.at("Y"));
        e.cert.X = vector_from_json(js.at("X"));
        e.cert.epsilon = js.at("epsilon").get<double>();
        e.cert.contraction = js.value("contraction", 0.0);
        e.cert.state_abs_sums = vector_from_json(js.at("state_abs_sums"));
        e.cert.output_abs_sums = vector_from_json(js.at("output_abs_sums"));
        e.weights.Q = matrix_from_json(js.at("Q"));
        e.weights.R = matrix_from_json(js.at("R"));
        e.weights.S = matrix_from_json(js.at("S"));
        for (const auto& [k, v] : js.at("n_row").items())
            e.weights.n_row[std::stoi(k)] = v.get<double>();
        out.by_id[js.at("id").get<int>()] = std::move(e);
    }
    return out;
}

inline void save_certificates(const std::string& path, const CertificateSet& certs, const std::string& net_hash)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write certificate bundle: " + path);
    out << certificates_to_json(certs, net_hash).dump(2) << "\n";
}

inline CertificateSet load_certificates(const std::string& path, std::string* net_hash = nullptr)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open certificate bundle: " + path);
    json j;
    in >> j;
    if (net_hash) *net_hash = j.value("network_hash", "");
    return certificates_from_json(j);
}

}  // namespace pnpmpc
