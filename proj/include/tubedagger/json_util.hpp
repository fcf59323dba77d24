#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tubedagger/errors.hpp"

namespace tubedagger {

using Json = nlohmann::json;

// All floats are emitted with 17 significant digits, enough to round-trip
// an IEEE double exactly, so serialized artifacts are byte-deterministic.
inline std::string fmt17(double v) {
  if (!std::isfinite(v)) throw ValidationError("refusing to serialize non-finite number");
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string json_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size() + 2);
  for (const char c : text) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

// Minimal JSON emitter with automatic comma placement.  Keys are emitted in
// call order, so output is deterministic by construction.
class JsonWriter {
 public:
  JsonWriter& begin_object() { return open('{'); }
  JsonWriter& end_object() { return close('}'); }
  JsonWriter& begin_array() { return open('['); }
  JsonWriter& end_array() { return close(']'); }

  JsonWriter& key(std::string_view name) {
    comma_for_value();
    out_ += '"';
    out_ += json_escape(name);
    out_ += "\":";
    value_pending_ = true;
    return *this;
  }

  JsonWriter& number(double v) { return raw(fmt17(v)); }
  JsonWriter& integer(std::int64_t v) { return raw(std::to_string(v)); }
  JsonWriter& unsigned_integer(std::uint64_t v) { return raw(std::to_string(v)); }
  JsonWriter& boolean(bool v) { return raw(v ? "true" : "false"); }
  JsonWriter& null_value() { return raw("null"); }
  JsonWriter& string(std::string_view v) {
    return raw('"' + json_escape(v) + '"');
  }

  const std::string& str() const { return out_; }

 private:
  JsonWriter& open(char c) {
    comma_for_value();
    out_ += c;
    first_.push_back(true);
    return *this;
  }

  JsonWriter& close(char c) {
    out_ += c;
    first_.pop_back();
    return *this;
  }

  JsonWriter& raw(const std::string& text) {
    comma_for_value();
    out_ += text;
    return *this;
  }

  void comma_for_value() {
    if (value_pending_) {
      value_pending_ = false;
      return;
    }
    if (!first_.empty()) {
      if (!first_.back()) out_ += ',';
      first_.back() = false;
    }
  }

  std::string out_;
  std::vector<bool> first_;
  bool value_pending_ = false;
};

// ---------------------------------------------------------------------------
// Parsing helpers (syntax errors carry a byte offset; semantic errors are
// ValidationError)
// ---------------------------------------------------------------------------

inline Json parse_json(std::string_view text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(e.what(), e.byte);
  }
}

inline const Json& require_field(const Json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw ValidationError(std::string("missing field: ") + name);
  return *it;
}

inline double require_double(const Json& j, const char* name) {
  const Json& f = require_field(j, name);
  if (!f.is_number()) throw ValidationError(std::string("field is not a number: ") + name);
  const double v = f.get<double>();
  if (!std::isfinite(v)) throw ValidationError(std::string("field is not finite: ") + name);
  return v;
}

inline std::int64_t require_int(const Json& j, const char* name) {
  const Json& f = require_field(j, name);
  if (!f.is_number_integer()) {
    throw ValidationError(std::string("field is not an integer: ") + name);
  }
  return f.get<std::int64_t>();
}

inline std::uint64_t require_uint64(const Json& j, const char* name) {
  const Json& f = require_field(j, name);
  if (!f.is_number_integer() && !f.is_number_unsigned()) {
    throw ValidationError(std::string("field is not an integer: ") + name);
  }
  if (f.is_number_integer() && !f.is_number_unsigned() && f.get<std::int64_t>() < 0) {
    throw ValidationError(std::string("field must be non-negative: ") + name);
  }
  return f.get<std::uint64_t>();
}

inline bool require_bool(const Json& j, const char* name) {
  const Json& f = require_field(j, name);
  if (!f.is_boolean()) throw ValidationError(std::string("field is not a boolean: ") + name);
  return f.get<bool>();
}

inline std::string require_string(const Json& j, const char* name) {
  const Json& f = require_field(j, name);
  if (!f.is_string()) throw ValidationError(std::string("field is not a string: ") + name);
  return f.get<std::string>();
}

inline std::vector<double> require_number_array(const Json& a, const char* what) {
  if (!a.is_array()) throw ValidationError(std::string(what) + ": expected an array");
  std::vector<double> out;
  out.reserve(a.size());
  for (const Json& v : a) {
    if (!v.is_number()) throw ValidationError(std::string(what) + ": array entry is not a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ValidationError(std::string(what) + ": non-finite entry");
    out.push_back(d);
  }
  return out;
}

}  // namespace tubedagger
