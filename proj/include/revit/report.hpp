#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "revit/errors.hpp"

namespace revit {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct AsrRow {
  std::string mode;    // "fixed" | "random"
  std::string attack;  // "none" | "apgd_ce" | "square"
  int leaked = 0;
  int s = 0;
  double asr = 0.0;        // percent; 0 for clean rows
  double clean_acc = 0.0;  // percent, measured under the same mode/S
  int n_eval = 0;
  std::uint64_t seed = 0;

  bool operator==(const AsrRow&) const = default;
};

struct AsrReport {
  std::vector<AsrRow> rows;
  nlohmann::ordered_json provenance;

  void sort_rows() {
    std::sort(rows.begin(), rows.end(), [](const AsrRow& a, const AsrRow& b) {
      return std::tie(a.mode, a.attack, a.leaked, a.s) <
             std::tie(b.mode, b.attack, b.leaked, b.s);
    });
  }

  const AsrRow* find(const std::string& mode, const std::string& attack,
                     int leaked, int s) const {
    for (const AsrRow& r : rows)
      if (r.mode == mode && r.attack == attack && r.leaked == leaked &&
          r.s == s)
        return &r;
    return nullptr;
  }
};

inline nlohmann::ordered_json report_to_json(const AsrReport& report) {
  nlohmann::ordered_json j;
  j["rows"] = nlohmann::ordered_json::array();
  for (const AsrRow& r : report.rows) {
    nlohmann::ordered_json row;
    row["mode"] = r.mode;
    row["attack"] = r.attack;
    row["leaked"] = r.leaked;
    row["s"] = r.s;
    row["asr"] = r.asr;
    row["clean_acc"] = r.clean_acc;
    row["n_eval"] = r.n_eval;
    row["seed"] = r.seed;
    j["rows"].push_back(std::move(row));
  }
  j["provenance"] = report.provenance.is_null()
                        ? nlohmann::ordered_json::object()
                        : report.provenance;
  return j;
}

inline AsrReport report_from_json(const nlohmann::json& j) {
  AsrReport report;
  try {
    for (const auto& row : j.at("rows")) {
      AsrRow r;
      r.mode = row.at("mode").get<std::string>();
      r.attack = row.at("attack").get<std::string>();
      r.leaked = row.at("leaked").get<int>();
      r.s = row.at("s").get<int>();
      r.asr = row.at("asr").get<double>();
      r.clean_acc = row.at("clean_acc").get<double>();
      r.n_eval = row.at("n_eval").get<int>();
      r.seed = row.at("seed").get<std::uint64_t>();
      report.rows.push_back(std::move(r));
    }
    if (j.contains("provenance")) report.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report parse error: " + std::string(e.what()));
  }
  return report;
}

inline std::string report_to_csv(const AsrReport& report) {
  std::string out = "mode,attack,leaked,S,asr,clean_acc,n_eval,seed\n";
  char buf[256];
  for (const AsrRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%d,%d,%.2f,%.2f,%d,%llu\n",
                  r.mode.c_str(), r.attack.c_str(), r.leaked, r.s, r.asr,
                  r.clean_acc, r.n_eval,
                  static_cast<unsigned long long>(r.seed));
    out += buf;
  }
  return out;
}

inline void emit_report(const AsrReport& report, const std::string& format,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  if (format == "json") {
    out << report_to_json(report).dump(2) << "\n";
  } else if (format == "csv") {
    out << report_to_csv(report);
  } else {
    throw ConfigError("unknown report format: " + format);
  }
  if (!out) throw IoError("write failed: " + path);
}

inline AsrReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report parse error: " + std::string(e.what()));
  }
  return report_from_json(j);
}

}  // namespace revit
