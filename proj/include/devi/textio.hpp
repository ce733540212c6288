#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "devi/errors.hpp"

namespace devi {

/// Sectioned key-value text document. Every file starts with a
/// `format-version N` line followed by `[section]` blocks of
/// `key value...` rows. Repeated keys are kept in order.
class TextDoc {
 public:
  struct Entry {
    std::string key;
    std::string value;  // remainder of the line, untokenized
  };
  struct Section {
    std::string name;
    std::vector<Entry> entries;
  };

  int version = 1;

  Section& section(const std::string& name) {
    for (auto& s : sections_)
      if (s.name == name) return s;
    sections_.push_back({name, {}});
    return sections_.back();
  }

  const Section* find(const std::string& name) const {
    for (const auto& s : sections_)
      if (s.name == name) return &s;
    return nullptr;
  }

  bool has(const std::string& sec, const std::string& key) const {
    const Section* s = find(sec);
    if (!s) return false;
    for (const auto& e : s->entries)
      if (e.key == key) return true;
    return false;
  }

  void add(const std::string& sec, const std::string& key, const std::string& value) {
    section(sec).entries.push_back({key, value});
  }
  void add(const std::string& sec, const std::string& key, double v) {
    add(sec, key, fmt(v));
  }
  void add(const std::string& sec, const std::string& key, int v) {
    add(sec, key, std::to_string(v));
  }
  template <typename It>
  void add_seq(const std::string& sec, const std::string& key, It begin, It end) {
    std::string v;
    for (It it = begin; it != end; ++it) {
      if (!v.empty()) v += ' ';
      v += fmt(static_cast<double>(*it));
    }
    add(sec, key, v);
  }

  const std::string& get(const std::string& sec, const std::string& key) const {
    const Section* s = find(sec);
    if (s)
      for (const auto& e : s->entries)
        if (e.key == key) return e.value;
    throw ParseError("missing " + sec + "/" + key);
  }

  double get_double(const std::string& sec, const std::string& key) const {
    return std::stod(get(sec, key));
  }
  int get_int(const std::string& sec, const std::string& key) const {
    return std::stoi(get(sec, key));
  }
  double get_or(const std::string& sec, const std::string& key, double fallback) const {
    return has(sec, key) ? get_double(sec, key) : fallback;
  }
  std::string get_or(const std::string& sec, const std::string& key,
                     const std::string& fallback) const {
    return has(sec, key) ? get(sec, key) : fallback;
  }

  std::vector<double> get_vec(const std::string& sec, const std::string& key) const {
    return parse_numbers(get(sec, key));
  }

  /// All values for a repeated key, in file order.
  std::vector<std::string> get_all(const std::string& sec, const std::string& key) const {
    std::vector<std::string> out;
    const Section* s = find(sec);
    if (s)
      for (const auto& e : s->entries)
        if (e.key == key) out.push_back(e.value);
    return out;
  }

  static std::vector<double> parse_numbers(const std::string& line) {
    std::vector<double> out;
    std::istringstream ss(line);
    double v;
    while (ss >> v) out.push_back(v);
    return out;
  }

  static std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "format-version " << version << "\n";
    for (const auto& s : sections_) {
      out << "[" << s.name << "]\n";
      for (const auto& e : s.entries) {
        out << e.key;
        if (!e.value.empty()) out << " " << e.value;
        out << "\n";
      }
    }
    if (!out) throw IoError("write failed: " + path);
  }

  static TextDoc load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    TextDoc doc;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file " + path);
    {
      std::istringstream ss(line);
      std::string tag;
      ss >> tag >> doc.version;
      if (tag != "format-version" || !ss)
        throw ParseError(path + ": expected leading format-version line");
    }
    Section* cur = nullptr;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (line.front() == '[') {
        const auto close = line.find(']');
        if (close == std::string::npos) throw ParseError(path + ": unterminated section");
        cur = &doc.section(line.substr(1, close - 1));
        continue;
      }
      if (!cur) throw ParseError(path + ": data before any [section]");
      const auto sp = line.find_first_of(" \t");
      if (sp == std::string::npos) {
        cur->entries.push_back({line, ""});
      } else {
        cur->entries.push_back({line.substr(0, sp), line.substr(line.find_first_not_of(" \t", sp))});
      }
    }
    return doc;
  }

 private:
  std::vector<Section> sections_;
};

/// CSV with a header row, '.' decimal point, ',' separator.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw IoError("cannot write " + path);
    for (size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << "\n";
  }
  void row(const std::vector<double>& values) {
    for (size_t i = 0; i < values.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.10g", values[i]);
      out_ << (i ? "," : "") << buf;
    }
    out_ << "\n";
  }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

}  // namespace devi
