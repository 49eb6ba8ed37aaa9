#pragma once

// JSON config access with field paths, JSON/CSV writers and atomic file output.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmpkit/lin_sys.hpp"
#include "pmpkit/types.hpp"

namespace pmpkit::io {

using json = nlohmann::json;

/// Validation failure tied to a config location, e.g. "/system/A".
class ConfigError : public ValidationError {
 public:
  ConfigError(const std::string& path, const std::string& msg)
      : ValidationError("config error at " + (path.empty() ? std::string("/") : path) + ": " + msg), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Read-only view of one config object. Defaults that get used are written
/// into the resolved copy so outputs can record the full effective config.
class Config {
 public:
  Config(const json& node, json& resolved, std::string path) : node_(node), resolved_(resolved), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_, "expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key) && !node_.at(key).is_null(); }
  std::string at(const std::string& key) const { return path_ + "/" + key; }
  const std::string& where() const { return path_; }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const { throw ConfigError(at(key), msg); }

  const json& raw(const std::string& key) const {
    if (!has(key)) fail(key, "required field missing");
    return node_.at(key);
  }

  double number(const std::string& key) const {
    const auto& v = raw(key);
    if (!v.is_number()) fail(key, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  }

  double number(const std::string& key, double fallback) const {
    if (!has(key)) {
      resolved_[key] = fallback;
      return fallback;
    }
    return number(key);
  }

  long long integer(const std::string& key) const {
    const auto& v = raw(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    return v.get<long long>();
  }

  long long integer(const std::string& key, long long fallback) const {
    if (!has(key)) {
      resolved_[key] = fallback;
      return fallback;
    }
    return integer(key);
  }

  std::string string(const std::string& key) const {
    const auto& v = raw(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) {
      resolved_[key] = fallback;
      return fallback;
    }
    return string(key);
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) {
      resolved_[key] = fallback;
      return fallback;
    }
    const auto& v = raw(key);
    if (!v.is_boolean()) fail(key, "expected true or false");
    return v.get<bool>();
  }

  Vec vector(const std::string& key, Eigen::Index size = -1) const { return to_vector(raw(key), at(key), size); }

  Mat matrix(const std::string& key) const { return to_matrix(raw(key), at(key)); }

  Config child(const std::string& key) const {
    if (!has(key)) fail(key, "required object missing");
    if (!node_.at(key).is_object()) fail(key, "expected an object");
    return Config(node_.at(key), resolved_[key], at(key));
  }

  static Vec to_vector(const json& v, const std::string& path, Eigen::Index size = -1) {
    if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
    if (size >= 0 && static_cast<Eigen::Index>(v.size()) != size)
      throw ConfigError(path, "expected " + std::to_string(size) + " entries, got " + std::to_string(v.size()));
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(path + "/" + std::to_string(i), "expected a number");
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
      if (!std::isfinite(out(static_cast<Eigen::Index>(i)))) throw ConfigError(path + "/" + std::to_string(i), "must be finite");
    }
    return out;
  }

  static Mat to_matrix(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(v.size());
    Eigen::Index cols = -1;
    Mat out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const Vec r = to_vector(v[i], path + "/" + std::to_string(i), cols);
      if (cols < 0) {
        cols = r.size();
        if (cols == 0) throw ConfigError(path + "/0", "rows must not be empty");
        out.resize(rows, cols);
      }
      out.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
    return out;
  }

 private:
  const json& node_;
  json& resolved_;
  std::string path_;
};

/// {"constant": [..], "T": t} or {"breakpoints": [...], "values": [[...], ...]}.
inline ControlSignal read_control(const Config& c, Eigen::Index m, double default_T) {
  ControlSignal u;
  if (c.has("constant")) {
    const Vec v = c.vector("constant", m);
    const double T = c.number("T", default_T);
    if (!(T > 0.0)) c.fail("T", "must be positive");
    return ControlSignal::constant(v, 0.0, T);
  }
  const Vec b = c.vector("breakpoints");
  u.breakpoints.assign(b.data(), b.data() + b.size());
  const auto& vals = c.raw("values");
  if (!vals.is_array()) c.fail("values", "expected an array of control vectors");
  for (std::size_t i = 0; i < vals.size(); ++i)
    u.values.push_back(Config::to_vector(vals[i], c.at("values") + "/" + std::to_string(i), m));
  try {
    u.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(c.at("breakpoints"), e.what());
  }
  return u;
}

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Mat& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vec(m.row(i).transpose())));
  return a;
}

inline json to_json(const std::vector<double>& v) { return json(v); }

inline json to_json(const ControlSignal& u) {
  json vals = json::array();
  for (const auto& v : u.values) vals.push_back(to_json(v));
  return {{"breakpoints", u.breakpoints}, {"values", vals}};
}

/// Shortest text that round-trips the double; fixed across runs.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes through a temporary file in the same directory, then renames.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string json_document(const json& meta, const json& result) {
  json doc = {{"meta", meta}, {"result", result}};
  return doc.dump(2) + "\n";
}

/// CSV with a comment header carrying the version and the resolved config.
class CsvWriter {
 public:
  CsvWriter(const json& meta, const std::vector<std::string>& columns) {
    text_ << "# pmpkit " << meta.value("version", std::string(kVersion)) << "\n";
    text_ << "# config: " << meta.at("config").dump() << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) text_ << (i ? "," : "") << columns[i];
    text_ << "\n";
    width_ = columns.size();
  }

  void row(const std::vector<double>& values) {
    if (values.size() != width_) throw std::logic_error("csv row width mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) text_ << (i ? "," : "") << fmt(values[i]);
    text_ << "\n";
  }

  std::string str() const { return text_.str(); }

 private:
  std::ostringstream text_;
  std::size_t width_ = 0;
};

inline std::vector<std::string> indexed(const std::string& prefix, Eigen::Index n) {
  std::vector<std::string> out;
  for (Eigen::Index i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

}  // namespace pmpkit::io
