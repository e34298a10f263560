#pragma once

#include "uavsec/core.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace uavsec {

// Flags column bitmask.
enum RunFlag : uint32_t {
  flag_slack_restoration = 1u << 0,
  flag_hold_last_plan = 1u << 1,
  flag_dc_incomplete = 1u << 2,
  flag_kinematic_violation = 1u << 3,
  flag_rate_shortfall = 1u << 4,
  flag_round_reverted = 1u << 5,
};

// Objective values per (slot, inner iteration); iteration 0 is the
// warm-start evaluation before the first round.
struct ObjectiveTrace {
  struct Entry {
    int slot = 0;
    int iteration = 0;
    double value = 0.0;
  };
  std::vector<Entry> entries;
};

// Within-slot non-increase with bounded relative slack per step.
inline bool objective_trace_check(const ObjectiveTrace& trace, double rel_slack = 1e-6,
                                  ObjectiveTrace::Entry* first_bad = nullptr) {
  for (size_t i = 1; i < trace.entries.size(); ++i) {
    const auto& prev = trace.entries[i - 1];
    const auto& cur = trace.entries[i];
    if (cur.slot != prev.slot) continue;
    if (cur.value > prev.value + rel_slack * std::max(1.0, std::abs(prev.value))) {
      if (first_bad) *first_bad = cur;
      return false;
    }
  }
  return true;
}

struct SlotRecord {
  int slot = 0;
  Vec3 position = Vec3::Zero();   // realized position during the slot
  Vec3 velocity = Vec3::Zero();   // commanded velocity
  double p_fly = 0.0;             // raw model value (negative in steep descent)
  double p_fly_physical = 0.0;    // clamped at zero
  double p_beam = 0.0;
  double p_an = 0.0;
  VecX user_rates;
  VecX eaves_rates;
  double secrecy_sum = 0.0;
  uint32_t flags = 0;
  Vec3 believed_position = Vec3::Zero();  // planning state (offline scheme)
};

struct RunLog {
  int k_users = 0;
  std::string scheme;
  uint64_t seed = 0;
  bool arrived = false;
  double terminal_distance = 0.0;
  std::vector<SlotRecord> rows;
  ObjectiveTrace trace;
};

namespace log_io {

inline void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline std::string csv_header(int k_users) {
  std::string h = "slot,x,y,z,vx,vy,vz,p_fly,p_beam,p_an";
  for (int k = 1; k <= k_users; ++k) h += ",rate_user_" + std::to_string(k);
  for (int k = 1; k <= k_users; ++k) h += ",eaves_" + std::to_string(k);
  h += ",secrecy_sum,flags";
  return h;
}

}  // namespace log_io

inline std::string runlog_to_csv(const RunLog& log) {
  std::string out = log_io::csv_header(log.k_users) + "\n";
  for (const auto& r : log.rows) {
    out += std::to_string(r.slot);
    const double scalars[9] = {r.position.x(), r.position.y(), r.position.z(),
                               r.velocity.x(), r.velocity.y(), r.velocity.z(),
                               r.p_fly,        r.p_beam,       r.p_an};
    for (double v : scalars) {
      out += ',';
      log_io::append_double(out, v);
    }
    for (int k = 0; k < log.k_users; ++k) {
      out += ',';
      log_io::append_double(out, r.user_rates[k]);
    }
    for (int k = 0; k < log.k_users; ++k) {
      out += ',';
      log_io::append_double(out, r.eaves_rates[k]);
    }
    out += ',';
    log_io::append_double(out, r.secrecy_sum);
    out += ',' + std::to_string(r.flags) + '\n';
  }
  return out;
}

inline void write_csv(const RunLog& log, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write log: " + path);
  f << runlog_to_csv(log);
}

inline RunLog read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read log: " + path);
  std::string header;
  if (!std::getline(f, header)) throw ValidationError("empty log file: " + path);
  // infer user count from the header
  int k_users = 0;
  {
    std::stringstream ss(header);
    std::string col;
    while (std::getline(ss, col, ','))
      if (col.rfind("rate_user_", 0) == 0) ++k_users;
  }
  if (log_io::csv_header(k_users) != header)
    throw ValidationError("unrecognized log header in " + path);
  RunLog log;
  log.k_users = k_users;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const size_t expect = 12 + 2 * static_cast<size_t>(k_users);
    if (cells.size() != expect)
      throw ValidationError("bad column count in " + path);
    SlotRecord r;
    size_t i = 0;
    r.slot = std::stoi(cells[i++]);
    for (int c = 0; c < 3; ++c) r.position[c] = std::stod(cells[i++]);
    for (int c = 0; c < 3; ++c) r.velocity[c] = std::stod(cells[i++]);
    r.p_fly = std::stod(cells[i++]);
    r.p_beam = std::stod(cells[i++]);
    r.p_an = std::stod(cells[i++]);
    r.user_rates.resize(k_users);
    r.eaves_rates.resize(k_users);
    for (int k = 0; k < k_users; ++k) r.user_rates[k] = std::stod(cells[i++]);
    for (int k = 0; k < k_users; ++k) r.eaves_rates[k] = std::stod(cells[i++]);
    r.secrecy_sum = std::stod(cells[i++]);
    r.flags = static_cast<uint32_t>(std::stoul(cells[i++]));
    r.p_fly_physical = std::max(0.0, r.p_fly);
    log.rows.push_back(std::move(r));
  }
  return log;
}

// ---------------------------------------------------------------------------
// JSON-lines format: one meta object, then one object per slot. Carries the
// fields the fixed CSV schema does not (physical power, believed position,
// per-round objective trace).
// ---------------------------------------------------------------------------

inline void write_jsonl(const RunLog& log, const std::string& path) {
  using Json = nlohmann::ordered_json;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write log: " + path);
  Json meta;
  meta["kind"] = "uavsec-runlog";
  meta["k_users"] = log.k_users;
  meta["scheme"] = log.scheme;
  meta["seed"] = log.seed;
  meta["arrived"] = log.arrived;
  meta["terminal_distance"] = log.terminal_distance;
  f << meta.dump() << "\n";
  for (const auto& r : log.rows) {
    Json j;
    j["slot"] = r.slot;
    j["position"] = {r.position.x(), r.position.y(), r.position.z()};
    j["velocity"] = {r.velocity.x(), r.velocity.y(), r.velocity.z()};
    j["p_fly"] = r.p_fly;
    j["p_fly_physical"] = r.p_fly_physical;
    j["p_beam"] = r.p_beam;
    j["p_an"] = r.p_an;
    j["user_rates"] = std::vector<double>(r.user_rates.data(),
                                          r.user_rates.data() + r.user_rates.size());
    j["eaves_rates"] = std::vector<double>(r.eaves_rates.data(),
                                           r.eaves_rates.data() + r.eaves_rates.size());
    j["secrecy_sum"] = r.secrecy_sum;
    j["flags"] = r.flags;
    j["believed_position"] = {r.believed_position.x(), r.believed_position.y(),
                              r.believed_position.z()};
    std::vector<double> tr;
    for (const auto& e : log.trace.entries)
      if (e.slot == r.slot) tr.push_back(e.value);
    j["objective_trace"] = tr;
    f << j.dump() << "\n";
  }
}

inline RunLog read_jsonl(const std::string& path) {
  using Json = nlohmann::json;
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read log: " + path);
  std::string line;
  if (!std::getline(f, line)) throw ValidationError("empty log file: " + path);
  Json meta = Json::parse(line);
  if (meta.value("kind", "") != "uavsec-runlog")
    throw ValidationError("not a run log: " + path);
  RunLog log;
  log.k_users = meta.at("k_users").get<int>();
  log.scheme = meta.at("scheme").get<std::string>();
  log.seed = meta.at("seed").get<uint64_t>();
  log.arrived = meta.at("arrived").get<bool>();
  log.terminal_distance = meta.at("terminal_distance").get<double>();
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line);
    SlotRecord r;
    r.slot = j.at("slot").get<int>();
    for (int c = 0; c < 3; ++c) {
      r.position[c] = j.at("position")[static_cast<size_t>(c)].get<double>();
      r.velocity[c] = j.at("velocity")[static_cast<size_t>(c)].get<double>();
      r.believed_position[c] = j.at("believed_position")[static_cast<size_t>(c)].get<double>();
    }
    r.p_fly = j.at("p_fly").get<double>();
    r.p_fly_physical = j.at("p_fly_physical").get<double>();
    r.p_beam = j.at("p_beam").get<double>();
    r.p_an = j.at("p_an").get<double>();
    const auto ur = j.at("user_rates").get<std::vector<double>>();
    const auto er = j.at("eaves_rates").get<std::vector<double>>();
    r.user_rates = Eigen::Map<const VecX>(ur.data(), static_cast<int>(ur.size()));
    r.eaves_rates = Eigen::Map<const VecX>(er.data(), static_cast<int>(er.size()));
    r.secrecy_sum = j.at("secrecy_sum").get<double>();
    r.flags = j.at("flags").get<uint32_t>();
    int it = 0;
    for (double v : j.at("objective_trace").get<std::vector<double>>())
      log.trace.entries.push_back({r.slot, it++, v});
    log.rows.push_back(std::move(r));
  }
  return log;
}

}  // namespace uavsec
