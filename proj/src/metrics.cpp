#include "fedunlearn/metrics.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// Splits the whole file into records; quoted fields may span lines.
std::vector<std::vector<std::string>> parse_records(std::istream& in, const std::string& path) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  char c;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  while (in.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      // tolerated before \n
    } else if (c == '\n') {
      end_field();
      records.push_back(std::move(row));
      row.clear();
      ++line;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw ParseError(path + ":" + std::to_string(line) + ": unterminated quoted field");
  if (field_started || !row.empty()) {
    end_field();
    records.push_back(std::move(row));
  }
  return records;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw ParseError(where + ": '" + s + "' is not a number");
  return v;
}

std::uint64_t parse_uint(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) throw ParseError(where + ": '" + s + "' is not an unsigned integer");
  return v;
}

const std::vector<std::string> kFixed = {"run_id",   "strategy", "regime",     "beta",      "seed",
                                         "round",    "phase",    "global_acc", "target_acc", "retain_acc"};

nlohmann::json comm_json(const CommCounter& c) {
  return {{"uploads", c.uploads},
          {"downloads", c.downloads},
          {"client_train_steps", c.client_train_steps},
          {"calibration_rounds", c.calibration_rounds}};
}

}  // namespace

void emit_csv(std::span<const MetricsLog> logs, const std::string& path) {
  std::set<ClientId> ids;
  for (const auto& log : logs) {
    ids.insert(log.meta.client_ids.begin(), log.meta.client_ids.end());
    for (const auto& r : log.rounds) {
      for (const auto& [id, acc] : r.per_client_accuracy) ids.insert(id);
    }
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < kFixed.size(); ++i) out << (i ? "," : "") << kFixed[i];
  for (ClientId id : ids) out << ",client_" << id;
  out << '\n';
  for (const auto& log : logs) {
    const RunMetadata& m = log.meta;
    for (const auto& r : log.rounds) {
      out << quote(m.run_id) << ',' << to_string(m.strategy) << ',' << to_string(m.regime) << ','
          << num(m.beta) << ',' << m.seed << ',' << r.round_index << ',' << to_string(r.phase) << ','
          << num(r.global_test_accuracy) << ',' << num(r.target_test_accuracy) << ','
          << num(r.retain_test_accuracy);
      for (ClientId id : ids) {
        out << ',';
        if (auto it = r.per_client_accuracy.find(id); it != r.per_client_accuracy.end()) out << num(it->second);
      }
      out << '\n';
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << out.str();
  if (!f) throw IoError("write failed for '" + path + "'");
}

void emit_csv(const MetricsLog& log, const std::string& path) { emit_csv(std::span<const MetricsLog>(&log, 1), path); }

std::vector<MetricsLog> parse_metrics_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  const auto records = parse_records(f, path);
  if (records.empty()) throw ParseError(path + ": missing header row");
  const auto& header = records.front();
  if (header.size() < kFixed.size() || !std::equal(kFixed.begin(), kFixed.end(), header.begin())) {
    throw ParseError(path + ": unexpected header");
  }
  std::vector<ClientId> ids;
  for (std::size_t c = kFixed.size(); c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h.rfind("client_", 0) != 0) throw ParseError(path + ": column " + std::to_string(c + 1) + ": bad name '" + h + "'");
    ids.push_back(static_cast<ClientId>(parse_double(h.substr(7), path + ": header")));
  }
  std::vector<MetricsLog> logs;
  std::map<std::string, std::size_t> by_id;
  for (std::size_t row = 1; row < records.size(); ++row) {
    const auto& rec = records[row];
    const std::string where = path + ": row " + std::to_string(row + 1);
    if (rec.size() != header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                       std::to_string(rec.size()));
    }
    auto [it, fresh] = by_id.emplace(rec[0], logs.size());
    if (fresh) {
      MetricsLog log;
      log.meta.run_id = rec[0];
      log.meta.strategy = strategy_from_string(rec[1]);
      log.meta.regime = regime_from_string(rec[2]);
      log.meta.beta = parse_double(rec[3], where);
      log.meta.seed = parse_uint(rec[4], where);
      logs.push_back(std::move(log));
    }
    MetricsLog& log = logs[it->second];
    RoundReport r;
    r.round_index = parse_uint(rec[5], where);
    r.phase = phase_from_string(rec[6]);
    r.global_test_accuracy = parse_double(rec[7], where);
    r.target_test_accuracy = parse_double(rec[8], where);
    r.retain_test_accuracy = parse_double(rec[9], where);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::string& cell = rec[kFixed.size() + i];
      if (!cell.empty()) r.per_client_accuracy[ids[i]] = parse_double(cell, where);
    }
    if (fresh) {
      for (const auto& [id, acc] : r.per_client_accuracy) log.meta.client_ids.push_back(id);
    }
    log.rounds.push_back(std::move(r));
  }
  return logs;
}

void emit_metadata(std::span<const MetricsLog> logs, const ExperimentConfig& config, const std::string& path,
                   const std::string& selection) {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(config_to_json_text(config));
  j["config_hash"] = config_hash(config);
  if (!selection.empty()) j["grid_selection"] = selection;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& log : logs) {
    const RunMetadata& m = log.meta;
    nlohmann::json r = {{"run_id", m.run_id},
                        {"config_hash", m.config_hash},
                        {"dataset", m.dataset},
                        {"seed", m.seed},
                        {"strategy", to_string(m.strategy)},
                        {"regime", to_string(m.regime)},
                        {"beta", m.beta},
                        {"lambda_tgt", m.lambda_tgt},
                        {"lr_main", m.lr_main},
                        {"lr_standalone", m.lr_standalone},
                        {"target_id", m.target_id},
                        {"clients", m.client_ids},
                        {"phase_rounds", {{"fl", m.phases.fl}, {"fu", m.phases.fu}, {"pu", m.phases.pu}}},
                        {"pretrained_global_accuracy", m.pretrained_global_accuracy},
                        {"unlearning_comm", comm_json(m.unlearn_comm)},
                        {"total_comm", comm_json(m.total_comm)},
                        {"warnings", m.warnings}};
    if (!m.federaser_trace.empty()) {
      nlohmann::json trace = nlohmann::json::array();
      for (const auto& t : m.federaser_trace) {
        trace.push_back({{"round", t.round},
                         {"client", t.client},
                         {"stored_norm", t.stored_norm},
                         {"recalibrated_norm", t.recalibrated_norm},
                         {"skipped", t.skipped}});
      }
      r["federaser_trace"] = std::move(trace);
    }
    runs.push_back(std::move(r));
  }
  j["runs"] = std::move(runs);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace fedunlearn
