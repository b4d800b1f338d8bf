#pragma once

// Metrics records and the CSV / JSON-lines sinks. Numbers are formatted with
// shortest round-trip notation, so identical runs write identical bytes and
// our readers recover exact values.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "actlab/ioutil.hpp"

namespace actlab {

struct MetricsField {
  std::string key;
  std::string text;
  bool quoted = false;  // true for strings, false for numerics
};

struct MetricsRecord {
  std::vector<MetricsField> fields;

  void add(const std::string& key, const std::string& value) {
    fields.push_back({key, value, true});
  }
  void add(const std::string& key, double value) {
    fields.push_back({key, format_double(value), false});
  }
  void add(const std::string& key, std::size_t value) {
    fields.push_back({key, std::to_string(value), false});
  }
  void add_u64(const std::string& key, std::uint64_t value) {
    fields.push_back({key, std::to_string(value), false});
  }

  const MetricsField& at(const std::string& key) const {
    for (const MetricsField& f : fields)
      if (f.key == key) return f;
    throw IoError("metrics record has no field '" + key + "'");
  }
  double number(const std::string& key) const { return parse_double(at(key).text); }
  const std::string& text(const std::string& key) const { return at(key).text; }
};

namespace detail {

inline void check_uniform_schema(const std::vector<MetricsRecord>& records) {
  for (std::size_t i = 1; i < records.size(); ++i) {
    bool ok = records[i].fields.size() == records[0].fields.size();
    for (std::size_t j = 0; ok && j < records[i].fields.size(); ++j)
      ok = records[i].fields[j].key == records[0].fields[j].key;
    if (!ok) throw IoError("metrics records disagree on schema at row " + std::to_string(i));
  }
}

inline void check_csv_safe(const std::string& s) {
  for (char c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"')
      throw IoError("value not representable in CSV: '" + s + "'");
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

}  // namespace detail

inline std::string to_csv(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw IoError("refusing to write an empty metrics file");
  detail::check_uniform_schema(records);
  std::string out;
  for (std::size_t j = 0; j < records[0].fields.size(); ++j) {
    detail::check_csv_safe(records[0].fields[j].key);
    if (j) out += ',';
    out += records[0].fields[j].key;
  }
  out += '\n';
  for (const MetricsRecord& r : records) {
    for (std::size_t j = 0; j < r.fields.size(); ++j) {
      detail::check_csv_safe(r.fields[j].text);
      if (j) out += ',';
      out += r.fields[j].text;
    }
    out += '\n';
  }
  return out;
}

inline std::vector<MetricsRecord> from_csv(const std::string& bytes) {
  std::vector<std::string> lines = split(bytes, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw IoError("empty CSV");
  std::vector<std::string> header = split(trim(lines[0]), ',');
  std::vector<MetricsRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> cells = split(trim(lines[i]), ',');
    if (cells.size() != header.size())
      throw IoError("CSV row " + std::to_string(i) + " has " + std::to_string(cells.size()) +
                    " cells, header has " + std::to_string(header.size()));
    MetricsRecord r;
    for (std::size_t j = 0; j < cells.size(); ++j) r.fields.push_back({header[j], cells[j], false});
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string to_jsonl(const std::vector<MetricsRecord>& records) {
  std::string out;
  for (const MetricsRecord& r : records) {
    out += '{';
    for (std::size_t j = 0; j < r.fields.size(); ++j) {
      if (j) out += ',';
      out += '"';
      out += detail::json_escape(r.fields[j].key);
      out += "\":";
      if (r.fields[j].quoted) {
        out += '"';
        out += detail::json_escape(r.fields[j].text);
        out += '"';
      } else if (r.fields[j].text == "-0") {
        // A bare "-0" token parses as integer zero, which has no sign bit; the
        // decimal point forces the reader onto the double path.
        out += "-0.0";
      } else {
        out += r.fields[j].text;
      }
    }
    out += "}\n";
  }
  return out;
}

inline std::vector<MetricsRecord> from_jsonl(const std::string& bytes) {
  std::vector<MetricsRecord> out;
  for (const std::string& raw : split(bytes, '\n')) {
    std::string line = trim(raw);
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    if (!j.is_object()) throw IoError("JSONL line is not an object");
    MetricsRecord r;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.value().is_string())
        r.fields.push_back({it.key(), it.value().get<std::string>(), true});
      else
        r.fields.push_back({it.key(), it.value().dump(), false});
    }
    out.push_back(std::move(r));
  }
  if (out.empty()) throw IoError("empty JSONL");
  return out;
}

/// format is "csv" or "jsonl"; the extension is appended to the stem.
inline std::string write_metrics(const std::filesystem::path& dir, const std::string& stem,
                                 const std::string& format,
                                 const std::vector<MetricsRecord>& records) {
  std::filesystem::path path = dir / (stem + "." + format);
  if (format == "csv") write_file_atomic(path, to_csv(records));
  else if (format == "jsonl") write_file_atomic(path, to_jsonl(records));
  else throw IoError("unknown metrics format '" + format + "' (use csv or jsonl)");
  return path.string();
}

}  // namespace actlab
