#pragma once

// nlohmann::json conversions shared by the serializers and the config parser.

#include "covsteer/matlib.hpp"
#include "covsteer/serialize.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace covsteer::jsonio {

using json = nlohmann::json;

inline json from_mat(const Mat& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json from_vec(const Vec& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline json from_vecs(const std::vector<Vec>& vs) {
  json out = json::array();
  for (const auto& v : vs) out.push_back(from_vec(v));
  return out;
}

inline double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw FormatError(what + ": expected a number");
  return j.get<double>();
}

inline Vec to_vec(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array of numbers");
  Vec v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = number(j[i], what);
  return v;
}

inline Mat to_mat(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected a nested array");
  if (j.empty()) return Mat(0, 0);
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Mat m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) throw FormatError(what + ": ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Index>(i), static_cast<Index>(c)) = number(j[i][c], what);
  }
  return m;
}

inline SymMat to_sym(const json& j, const std::string& what) {
  const Mat m = to_mat(j, what);
  if (m.rows() != m.cols()) throw FormatError(what + ": expected a square matrix");
  if (m != m.transpose()) throw FormatError(what + ": matrix is not symmetric");
  try {
    return SymMat(m);
  } catch (const Error& e) {
    throw FormatError(what + ": " + e.what());
  }
}

inline std::vector<Vec> to_vecs(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array");
  std::vector<Vec> out;
  out.reserve(j.size());
  for (const auto& e : j) out.push_back(to_vec(e, what));
  return out;
}

inline const json& field(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
  return obj.at(key);
}

inline json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace covsteer::jsonio
