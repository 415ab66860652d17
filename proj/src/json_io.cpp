#include "safe_nmpc/json_io.hpp"

#include <fstream>
#include <sstream>

namespace safe_nmpc {

json mat_to_json(const Mat& m) {
    json data = json::array();
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
            data.push_back(m(i, j));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat mat_from_json(const json& j, const std::string& what) {
    require(j.is_object() && j.contains("rows") && j.contains("cols") && j.contains("data"),
            what + ": matrix needs rows, cols and data");
    const int r = j.at("rows").get<int>(), c = j.at("cols").get<int>();
    const json& d = j.at("data");
    require(r >= 0 && c >= 0 && d.is_array() && static_cast<int>(d.size()) == r * c,
            what + ": matrix data length does not match dims");
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int k = 0; k < c; ++k) {
            require(d[i * c + k].is_number(), what + ": non-numeric matrix entry");
            m(i, k) = d[i * c + k].get<double>();
        }
    return m;
}

json vec_to_json(const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i)
        a.push_back(v(i));
    return a;
}

Vec vec_from_json(const json& j, const std::string& what) {
    if (j.is_number())
        return Vec::Constant(1, j.get<double>());
    require(j.is_array(), what + ": expected a numeric array");
    Vec v(j.size());
    for (size_t i = 0; i < j.size(); ++i) {
        require(j[i].is_number(), what + ": non-numeric entry");
        v(static_cast<int>(i)) = j[i].get<double>();
    }
    return v;
}

json box_to_json(const BoxSet& b) {
    return {{"lower", vec_to_json(b.lower)}, {"upper", vec_to_json(b.upper)}};
}

BoxSet box_from_json(const json& j, const std::string& what) {
    require(j.is_object() && j.contains("lower") && j.contains("upper"),
            what + ": box needs lower and upper");
    return BoxSet(vec_from_json(j.at("lower"), what + ".lower"), vec_from_json(j.at("upper"), what + ".upper"));
}

Mat weight_from_json(const json& j, int n, const std::string& what) {
    if (j.is_object())
        return mat_from_json(j, what);
    if (j.is_number())
        return j.get<double>() * Mat::Identity(n, n);
    require(j.is_array() && !j.empty(), what + ": expected a weight matrix");
    std::vector<std::vector<double>> rows;
    if (j[0].is_number()) {
        rows.push_back(j.get<std::vector<double>>());
    } else {
        for (const auto& r : j)
            rows.push_back(r.get<std::vector<double>>());
    }
    return diag_or_matrix(rows, n);
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse '" + path + "': " + e.what());
    }
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot write '" + path + "'");
    out << text;
}

} // namespace safe_nmpc
