#include "raflow/json_util.hpp"

#include <algorithm>
#include <fstream>

namespace raflow::json_util {

using nlohmann::json;

json matrix_to_json(const Mat& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Vec& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Mat matrix_from_json(const json& value, const std::string& where) {
  if (!value.is_array()) throw SchemaError(where + ": expected an array of rows");
  const Index rows = static_cast<Index>(value.size());
  Index cols = -1;
  Mat m;
  for (Index i = 0; i < rows; ++i) {
    const json& row = value[static_cast<std::size_t>(i)];
    if (!row.is_array()) throw SchemaError(where + "[" + std::to_string(i) + "]: expected an array");
    if (cols < 0) {
      cols = static_cast<Index>(row.size());
      m.resize(rows, cols);
    } else if (static_cast<Index>(row.size()) != cols) {
      throw SchemaError(where + "[" + std::to_string(i) + "]: ragged row");
    }
    for (Index j = 0; j < cols; ++j) {
      const json& e = row[static_cast<std::size_t>(j)];
      if (!e.is_number()) throw SchemaError(where + ": non-numeric entry");
      m(i, j) = e.get<double>();
    }
  }
  if (rows == 0) m.resize(0, 0);
  return m;
}

Vec vector_from_json(const json& value, const std::string& where) {
  if (!value.is_array()) throw SchemaError(where + ": expected an array");
  Vec v(static_cast<Index>(value.size()));
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!value[i].is_number()) throw SchemaError(where + ": non-numeric entry");
    v(static_cast<Index>(i)) = value[i].get<double>();
  }
  return v;
}

Mat matrix_from_json(const json& parent, const std::string& key, const std::string& where) {
  if (!parent.contains(key)) throw SchemaError(where + ": missing '" + key + "'");
  return matrix_from_json(parent.at(key), where + "." + key);
}

Vec vector_from_json(const json& parent, const std::string& key, const std::string& where) {
  if (!parent.contains(key)) throw SchemaError(where + ": missing '" + key + "'");
  return vector_from_json(parent.at(key), where + "." + key);
}

Index get_index(const json& parent, const std::string& key, const std::string& where) {
  if (!parent.contains(key) || !parent.at(key).is_number_integer()) {
    throw SchemaError(where + "." + key + ": expected an integer");
  }
  return parent.at(key).get<Index>();
}

double get_double(const json& parent, const std::string& key, const std::string& where) {
  if (!parent.contains(key) || !parent.at(key).is_number()) throw SchemaError(where + "." + key + ": expected a number");
  return parent.at(key).get<double>();
}

std::string get_string(const json& parent, const std::string& key, const std::string& where) {
  if (!parent.contains(key) || !parent.at(key).is_string()) throw SchemaError(where + "." + key + ": expected a string");
  return parent.at(key).get<std::string>();
}

void require_version(const json& doc, int expected, const std::string& what) {
  if (!doc.is_object()) throw SchemaError(what + ": expected a JSON object");
  if (!doc.contains("version") || !doc["version"].is_number_integer()) {
    throw SchemaError(what + ": missing integer 'version' (expected " + std::to_string(expected) + ")");
  }
  const int found = doc["version"].get<int>();
  if (found != expected) {
    throw SchemaError(what + ": version " + std::to_string(found) + " found, version " + std::to_string(expected) +
                      " expected");
  }
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw SchemaError(where + ": expected an object");
  for (const auto& item : obj.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
    if (!ok) throw SchemaError(where + "." + item.key() + ": unknown key");
  }
}

json read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("'" + path + "': " + e.what());
  }
}

void write_file(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << doc.dump(1) << "\n";
}

}  // namespace raflow::json_util
