#pragma once

// Deterministic report output: JSON with every double printed to 17
// significant digits and keys in sorted order, RFC-4180 CSV (CRLF), and a
// 64-bit FNV-1a hash for provenance.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rigidity/errors.hpp"

namespace rigidity {

inline std::string format_double(double x) {
  if (!std::isfinite(x)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  std::string s = buf;
  // keep it a JSON float
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

namespace detail {

inline void write_json(const nlohmann::json& j, std::string& out, int indent, int depth) {
  const bool pretty = indent > 0;
  auto newline = [&](int d) {
    if (!pretty) return;
    out += '\n';
    out.append(static_cast<std::size_t>(d * indent), ' ');
  };
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // std::map: sorted keys
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += nlohmann::json(it.key()).dump();
        out += pretty ? ": " : ":";
        write_json(it.value(), out, indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case nlohmann::json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // flat numeric arrays stay on one line
      bool flat = true;
      for (const auto& e : j) flat = flat && e.is_primitive();
      out += '[';
      bool first = true;
      for (const auto& e : j) {
        if (!first) out += flat && pretty ? ", " : ",";
        first = false;
        if (!flat) newline(depth + 1);
        write_json(e, out, indent, depth + 1);
      }
      if (!flat) newline(depth);
      out += ']';
      return;
    }
    case nlohmann::json::value_t::number_float:
      out += format_double(j.get<double>());
      return;
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// indent = 0 gives the compact form used for hashing.
inline std::string to_report_string(const nlohmann::json& j, int indent = 2) {
  std::string out;
  detail::write_json(j, out, indent, 0);
  if (indent > 0) out += '\n';
  return out;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// --- CSV ---

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

class CsvTable {
 public:
  CsvTable() = default;
  CsvTable(std::string name, std::vector<std::string> header) : name_(std::move(name)), header_(std::move(header)) {}

  const std::string& name() const { return name_; }
  std::size_t rows() const { return rows_.size(); }

  CsvTable& row() {
    rows_.emplace_back();
    return *this;
  }
  CsvTable& operator<<(double v) { return add(format_double(v)); }
  CsvTable& operator<<(int v) { return add(std::to_string(v)); }
  CsvTable& operator<<(std::int64_t v) { return add(std::to_string(v)); }
  CsvTable& operator<<(std::size_t v) { return add(std::to_string(v)); }
  CsvTable& operator<<(const std::string& v) { return add(v); }
  CsvTable& operator<<(const char* v) { return add(v); }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& f) {
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (i) out += ',';
        out += csv_field(f[i]);
      }
      out += "\r\n";
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

 private:
  CsvTable& add(std::string s) {
    require(!rows_.empty(), ErrorKind::InvalidArgument, "call row() before adding fields");
    rows_.back().push_back(std::move(s));
    return *this;
  }

  std::string name_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Config, "cannot open '" + path + "' for writing");
  f << content;
  require(static_cast<bool>(f), ErrorKind::Config, "failed writing '" + path + "'");
}

}  // namespace rigidity
