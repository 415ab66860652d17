#pragma once

#include <string>

#include <json.hpp>

#include "safe_nmpc/model.hpp"

namespace safe_nmpc {

using json = nlohmann::json;

// Matrices are stored as {"rows": r, "cols": c, "data": [row-major]}.
json mat_to_json(const Mat& m);
Mat mat_from_json(const json& j, const std::string& what);
json vec_to_json(const Vec& v);
Vec vec_from_json(const json& j, const std::string& what);
json box_to_json(const BoxSet& b);
BoxSet box_from_json(const json& j, const std::string& what);

// Square matrix given as a diagonal list, a nested row list, or the {"rows","cols","data"} form.
Mat weight_from_json(const json& j, int n, const std::string& what);

json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

} // namespace safe_nmpc
