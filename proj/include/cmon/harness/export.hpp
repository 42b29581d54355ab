/*
 Copyright 2026 The cmon-rti Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

// CSV logs and the run manifest. Numbers are written with 17 significant
// digits so that a log read back compares equal to the one in memory.

#ifndef CMON_HARNESS_EXPORT_HPP
#define CMON_HARNESS_EXPORT_HPP

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cmon/harness/simulation.hpp"
#include "json.hpp"

#ifndef CMON_VERSION
#define CMON_VERSION "0.1.0"
#endif
#ifndef CMON_GIT_REVISION
#define CMON_GIT_REVISION "unknown"
#endif

namespace cmon {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw IoError("malformed number '" + s + "' in log");
  return v;
}

inline std::vector<std::string> log_columns(int nx, int nu) {
  std::vector<std::string> cols{"time"};
  for (int j = 0; j < nx; ++j) cols.push_back("x" + std::to_string(j));
  for (int j = 0; j < nu; ++j) cols.push_back("u" + std::to_string(j));
  for (const char* c : {"kkt", "dto", "e_bar", "n_refreshed", "refresh_fraction", "eta_pri", "eta_dual",
                        "kappa_max", "kappa_dual_max", "active_set_changed", "integrations", "forward_sensitivities", "adjoint_sweeps",
                        "qp_iterations"}) {
    cols.emplace_back(c);
  }
  return cols;
}

namespace detail {

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += v[i];
  }
  return out;
}

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

/**
 * One row per logged instant. A failed run ends with a comment line
 * "# failed: <message>".
 */
inline void write_log_csv(const SimulationLog& log, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << detail::join(log_columns(log.nx, log.nu)) << '\n';
  for (const auto& r : log.rows) {
    std::vector<std::string> cells{format_double(r.time)};
    for (int j = 0; j < log.nx; ++j) cells.push_back(format_double(r.state(j)));
    for (int j = 0; j < log.nu; ++j) cells.push_back(format_double(r.control(j)));
    cells.push_back(format_double(r.kkt));
    cells.push_back(format_double(r.dto));
    cells.push_back(format_double(r.e_bar));
    cells.push_back(std::to_string(r.n_refreshed));
    cells.push_back(format_double(r.refresh_fraction));
    cells.push_back(format_double(r.eta_pri));
    cells.push_back(format_double(r.eta_dual));
    cells.push_back(format_double(r.kappa_max));
    cells.push_back(format_double(r.kappa_dual_max));
    cells.push_back(r.active_set_changed ? "1" : "0");
    cells.push_back(std::to_string(r.counters.integrations));
    cells.push_back(std::to_string(r.counters.forward_sensitivities));
    cells.push_back(std::to_string(r.counters.adjoint_sweeps));
    cells.push_back(std::to_string(r.counters.qp_iterations));
    out << detail::join(cells) << '\n';
  }
  if (log.failed) {
    std::string msg = log.failure;
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    out << "# failed: " << msg << '\n';
  }
  detail::finish(out, path);
}

/// Parses a file written by write_log_csv. Run metadata other than nx/nu is not stored in the CSV.
inline SimulationLog read_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
  const auto header = detail::split(line);
  SimulationLog log;
  for (const auto& h : header) {
    if (h.size() > 1 && h[0] == 'x' && std::isdigit(static_cast<unsigned char>(h[1]))) ++log.nx;
    if (h.size() > 1 && h[0] == 'u' && std::isdigit(static_cast<unsigned char>(h[1]))) ++log.nu;
  }
  if (header != log_columns(log.nx, log.nu)) throw IoError("unexpected header in '" + path.string() + "'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# failed: ", 0) == 0) {
      log.failed = true;
      log.failure = line.substr(10);
      continue;
    }
    const auto cells = detail::split(line);
    if (cells.size() != header.size()) throw IoError("row with wrong column count in '" + path.string() + "'");
    LogRow r;
    std::size_t c = 0;
    r.time = parse_double(cells[c++]);
    r.state.resize(log.nx);
    r.control.resize(log.nu);
    for (int j = 0; j < log.nx; ++j) r.state(j) = parse_double(cells[c++]);
    for (int j = 0; j < log.nu; ++j) r.control(j) = parse_double(cells[c++]);
    r.kkt = parse_double(cells[c++]);
    r.dto = parse_double(cells[c++]);
    r.e_bar = parse_double(cells[c++]);
    r.n_refreshed = std::stoi(cells[c++]);
    r.refresh_fraction = parse_double(cells[c++]);
    r.eta_pri = parse_double(cells[c++]);
    r.eta_dual = parse_double(cells[c++]);
    r.kappa_max = parse_double(cells[c++]);
    r.kappa_dual_max = parse_double(cells[c++]);
    r.active_set_changed = cells[c++] == "1";
    r.counters.integrations = std::stol(cells[c++]);
    r.counters.forward_sensitivities = std::stol(cells[c++]);
    r.counters.adjoint_sweeps = std::stol(cells[c++]);
    r.counters.qp_iterations = std::stol(cells[c++]);
    log.rows.push_back(std::move(r));
  }
  if (log.rows.size() > 1) log.sampling_time = log.rows[1].time - log.rows[0].time;
  return log;
}

inline void write_summary_csv(const TrialSummary& s, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "trial,seed,t_st,failed,instants\n";
  for (const auto& r : s.trials) {
    out << r.trial << ',' << r.seed << ',' << format_double(r.t_st) << ',' << (r.failed ? 1 : 0) << ','
        << r.log.rows.size() << '\n';
  }
  detail::finish(out, path);
}

struct ManifestInfo {
  const ScenarioConfig* config = nullptr;
  std::vector<std::string> files;
  const TrialSummary* summary = nullptr;
  const OfflineData* offline = nullptr;
  std::vector<std::string> failures;
};

/**
 * manifest.json: code version, seed, scheme, output files, aggregate
 * statistics and the configuration text exactly as it was read. The same
 * text is also copied verbatim to scenario.json next to the manifest.
 */
inline void write_manifest(const ManifestInfo& info, const std::filesystem::path& dir) {
  if (!info.config) throw InvalidStateError("manifest needs the scenario");
  const ScenarioConfig& c = *info.config;
  nlohmann::ordered_json m;
  m["version"] = CMON_VERSION;
  m["revision"] = CMON_GIT_REVISION;
  m["model"] = c.model;
  m["scheme"] = to_string(c.scheme.kind);
  m["seed"] = c.seed;
  m["trials"] = c.trials;
  m["files"] = info.files;
  if (info.summary) {
    m["summary"] = {{"failures", info.summary->failures}, {"mean_t_st", info.summary->mean_t_st},
                    {"q1", info.summary->q1},             {"median", info.summary->median},
                    {"q3", info.summary->q3},             {"iqr", info.summary->iqr()}};
  }
  if (info.offline) {
    m["rho0"] = info.offline->rho0;
    m["gamma0"] = info.offline->gamma0;
  }
  m["failures"] = info.failures;
  m["config"] = c.raw;

  const auto path = dir / "manifest.json";
  auto out = detail::open_out(path);
  out << m.dump(2) << '\n';
  detail::finish(out, path);

  const auto echo = dir / "scenario.json";
  auto cfg = detail::open_out(echo);
  cfg << c.raw;
  detail::finish(cfg, echo);
}

}  // namespace cmon

#endif  // CMON_HARNESS_EXPORT_HPP
