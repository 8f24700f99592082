#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "bevkit/error.hpp"
#include "bevkit/tensor.hpp"

namespace bevkit {

using Json = nlohmann::json;

inline Json load_json_file(const std::string& path) {
  const std::vector<std::byte> bytes = read_file(path);
  try {
    return Json::parse(reinterpret_cast<const char*>(bytes.data()),
                       reinterpret_cast<const char*>(bytes.data()) + bytes.size());
  } catch (const Json::parse_error& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  const std::string text = j.dump(2) + "\n";
  std::vector<std::byte> bytes(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) bytes[i] = static_cast<std::byte>(text[i]);
  write_file_atomic(path, bytes);
}

/// every key of obj must appear in allowed; configs reject typos loudly
inline void require_known_keys(const Json& obj, std::initializer_list<const char*> allowed,
                               const std::string& context) {
  if (!obj.is_object()) throw ValueError(context + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ValueError(context + ": unknown key \"" + it.key() + "\"");
  }
}

inline float json_float(const Json& obj, const char* key, float fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ValueError(std::string("expected number for ") + key);
  return obj[key].get<float>();
}

inline double json_double(const Json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ValueError(std::string("expected number for ") + key);
  return obj[key].get<double>();
}

inline std::size_t json_size(const Json& obj, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_unsigned()) {
    throw ValueError(std::string("expected nonnegative integer for ") + key);
  }
  return obj[key].get<std::size_t>();
}

}  // namespace bevkit
