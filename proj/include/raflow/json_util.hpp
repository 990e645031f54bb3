#pragma once

// Strict JSON <-> Eigen helpers shared by the checkpoint and config readers.

#include "raflow/types.hpp"

#include <nlohmann/json.hpp>

#include <initializer_list>
#include <string>

namespace raflow::json_util {

/// Nested rows: [[a, b], [c, d]].
nlohmann::json matrix_to_json(const Mat& m);
nlohmann::json vector_to_json(const Vec& v);

Mat matrix_from_json(const nlohmann::json& parent, const std::string& key, const std::string& where);
Vec vector_from_json(const nlohmann::json& parent, const std::string& key, const std::string& where);
Mat matrix_from_json(const nlohmann::json& value, const std::string& where);
Vec vector_from_json(const nlohmann::json& value, const std::string& where);

Index get_index(const nlohmann::json& parent, const std::string& key, const std::string& where);
double get_double(const nlohmann::json& parent, const std::string& key, const std::string& where);
std::string get_string(const nlohmann::json& parent, const std::string& key, const std::string& where);

void require_version(const nlohmann::json& doc, int expected, const std::string& what);
/// Rejects keys outside `allowed`, naming the offending path.
void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where);

nlohmann::json read_file(const std::string& path);
void write_file(const std::string& path, const nlohmann::json& doc);

}  // namespace raflow::json_util
