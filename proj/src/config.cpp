#include "fedunlearn/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

using nlohmann::json;

namespace {

// Reads fields from one JSON section, collecting problems instead of throwing.
class SectionReader {
 public:
  SectionReader(const json& j, std::string section, std::vector<std::string>& problems)
      : j_(j), section_(std::move(section)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back(section_ + ": expected an object");
  }

  ~SectionReader() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) problems_.push_back(path(key) + ": unknown key");
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      problems_.push_back(path(key) + ": wrong type");
    }
  }

  // Accepts a scalar or a list of scalars.
  template <typename T>
  void read_list(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if (v.is_array()) {
        out = v.get<std::vector<T>>();
      } else {
        out = {v.get<T>()};
      }
    } catch (const json::exception&) {
      problems_.push_back(path(key) + ": wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return section_.empty() ? key : section_ + "." + key; }

 private:
  const json& j_;
  std::string section_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

template <typename Fn>
void parse_enum(const std::string& field, const std::string& text, std::vector<std::string>& problems, Fn fn) {
  try {
    fn(text);
  } catch (const Error& e) {
    problems.push_back(field + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("not valid JSON: ") + e.what()});
  }
  std::vector<std::string> problems;
  ExperimentConfig cfg;
  {
    SectionReader top(root, "", problems);
    if (const json* m = top.child("model")) {
      SectionReader r(*m, "model", problems);
      r.read("input_dim", cfg.model.input_dim);
      r.read("hidden_dims", cfg.model.hidden_dims);
      r.read("num_classes", cfg.model.num_classes);
      std::string act = to_string(cfg.model.activation);
      r.read("activation", act);
      parse_enum("model.activation", act, problems, [&](const std::string& s) { cfg.model.activation = activation_from_string(s); });
      r.read("head_frozen", cfg.model.head_frozen);
    }
    if (const json* d = top.child("data")) {
      SectionReader r(*d, "data", problems);
      r.read("source", cfg.data.source);
      r.read("name", cfg.data.name);
      r.read("samples_per_class", cfg.data.samples_per_class);
      r.read("pretrain_samples_per_class", cfg.data.pretrain_samples_per_class);
      r.read("test_samples_per_class", cfg.data.test_samples_per_class);
      r.read("class_separation", cfg.data.class_separation);
      r.read("csv_path", cfg.data.csv_path);
      r.read("pretrain_csv_path", cfg.data.pretrain_csv_path);
      r.read("test_csv_path", cfg.data.test_csv_path);
      r.read("pretrain_fraction", cfg.data.pretrain_fraction);
      r.read("global_test_fraction", cfg.data.global_test_fraction);
      r.read("test_fraction", cfg.data.test_fraction);
      r.read("exclusive_classes", cfg.data.exclusive_classes);
    }
    if (const json* p = top.child("pretrain")) {
      SectionReader r(*p, "pretrain", problems);
      r.read("epochs", cfg.pretrain.epochs);
      r.read("batch_size", cfg.pretrain.batch_size);
      r.read("lr", cfg.pretrain.lr);
      r.read("theta0_path", cfg.pretrain.theta0_path);
    }
    if (const json* f = top.child("federation")) {
      SectionReader r(*f, "federation", problems);
      r.read("clients", cfg.clients);
      r.read("beta", cfg.beta);
      r.read_list("seeds", cfg.seeds);
      if (const json* pr = r.child("phase_rounds")) {
        SectionReader rr(*pr, "federation.phase_rounds", problems);
        rr.read("fl", cfg.phase_rounds.fl);
        rr.read("fu", cfg.phase_rounds.fu);
        rr.read("pu", cfg.phase_rounds.pu);
      }
      r.read("parity", cfg.parity);
      r.read("epochs_per_round", cfg.epochs_per_round);
      r.read("batch_size", cfg.batch_size);
      r.read_list("lr_main", cfg.lr_main);
      r.read_list("lr_standalone", cfg.lr_standalone);
      r.read("weight_decay", cfg.weight_decay);
      r.read("adam_beta1", cfg.adam_beta1);
      r.read("adam_beta2", cfg.adam_beta2);
      r.read("adam_eps", cfg.adam_eps);
    }
    if (const json* u = top.child("unlearning")) {
      SectionReader r(*u, "unlearning", problems);
      std::string strategy = to_string(cfg.strategy);
      std::string regime = to_string(cfg.regime);
      std::string anchor = to_string(cfg.anchor);
      r.read("strategy", strategy);
      r.read("regime", regime);
      r.read("anchor", anchor);
      parse_enum("unlearning.strategy", strategy, problems, [&](const std::string& s) { cfg.strategy = strategy_from_string(s); });
      parse_enum("unlearning.regime", regime, problems, [&](const std::string& s) { cfg.regime = regime_from_string(s); });
      parse_enum("unlearning.anchor", anchor, problems, [&](const std::string& s) { cfg.anchor = anchor_mode_from_string(s); });
      r.read_list("lambda_tgt", cfg.lambda_tgt);
      r.read("target_id", cfg.target_id);
      r.read("calibration_epochs", cfg.calibration_epochs);
    }
    if (const json* g = top.child("grid")) {
      SectionReader r(*g, "grid", problems);
      r.read("global_slack", cfg.grid_global_slack);
    }
  }
  if (!problems.empty()) throw ConfigError(problems);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return config_from_json_text(ss.str());
  } catch (const ConfigError& e) {
    std::vector<std::string> problems;
    for (const auto& p : e.problems()) problems.push_back(path + ": " + p);
    throw ConfigError(problems);
  }
}

std::string config_to_json_text(const ExperimentConfig& c) {
  json j;
  j["model"] = {{"input_dim", c.model.input_dim},
                {"hidden_dims", c.model.hidden_dims},
                {"num_classes", c.model.num_classes},
                {"activation", to_string(c.model.activation)},
                {"head_frozen", c.model.head_frozen}};
  j["data"] = {{"source", c.data.source},
               {"name", c.data.name},
               {"samples_per_class", c.data.samples_per_class},
               {"pretrain_samples_per_class", c.data.pretrain_samples_per_class},
               {"test_samples_per_class", c.data.test_samples_per_class},
               {"class_separation", c.data.class_separation},
               {"csv_path", c.data.csv_path},
               {"pretrain_csv_path", c.data.pretrain_csv_path},
               {"test_csv_path", c.data.test_csv_path},
               {"pretrain_fraction", c.data.pretrain_fraction},
               {"global_test_fraction", c.data.global_test_fraction},
               {"test_fraction", c.data.test_fraction},
               {"exclusive_classes", c.data.exclusive_classes}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"lr", c.pretrain.lr},
                   {"theta0_path", c.pretrain.theta0_path}};
  j["federation"] = {{"clients", c.clients},
                     {"beta", c.beta},
                     {"seeds", c.seeds},
                     {"phase_rounds", {{"fl", c.phase_rounds.fl}, {"fu", c.phase_rounds.fu}, {"pu", c.phase_rounds.pu}}},
                     {"parity", c.parity},
                     {"epochs_per_round", c.epochs_per_round},
                     {"batch_size", c.batch_size},
                     {"lr_main", c.lr_main},
                     {"lr_standalone", c.lr_standalone},
                     {"weight_decay", c.weight_decay},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps}};
  j["unlearning"] = {{"strategy", to_string(c.strategy)},
                     {"regime", to_string(c.regime)},
                     {"anchor", to_string(c.anchor)},
                     {"lambda_tgt", c.lambda_tgt},
                     {"target_id", c.target_id},
                     {"calibration_epochs", c.calibration_epochs}};
  j["grid"] = {{"global_slack", c.grid_global_slack}};
  return j.dump(2);
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = config_to_json_text(config);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool ExperimentConfig::has_grid() const noexcept {
  return lr_main.size() > 1 || lr_standalone.size() > 1 || lambda_tgt.size() > 1;
}

void ExperimentConfig::validate() const {
  std::vector<std::string> problems;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };
  try {
    model.validate();
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  need(data.source == "synthetic" || data.source == "csv", "data.source: must be 'synthetic' or 'csv'");
  if (data.source == "synthetic") {
    need(data.samples_per_class > 0, "data.samples_per_class: must be positive");
    need(data.pretrain_samples_per_class > 0, "data.pretrain_samples_per_class: must be positive");
    need(data.test_samples_per_class > 0, "data.test_samples_per_class: must be positive");
    need(data.class_separation > 0.0 && std::isfinite(data.class_separation), "data.class_separation: must be positive");
  } else {
    need(!data.csv_path.empty(), "data.csv_path: required when data.source is 'csv'");
    need(data.pretrain_fraction > 0.0 && data.pretrain_fraction < 1.0, "data.pretrain_fraction: must be in (0, 1)");
    need(data.global_test_fraction > 0.0 && data.global_test_fraction < 1.0, "data.global_test_fraction: must be in (0, 1)");
  }
  need(data.test_fraction > 0.0 && data.test_fraction < 1.0, "data.test_fraction: must be in (0, 1)");
  for (int c : data.exclusive_classes) {
    need(c >= 0 && static_cast<std::size_t>(c) < model.num_classes, "data.exclusive_classes: class out of range");
  }
  need(pretrain.batch_size > 0, "pretrain.batch_size: must be positive");
  need(pretrain.lr >= 0.0 && std::isfinite(pretrain.lr), "pretrain.lr: must be finite and >= 0");
  need(clients >= 1, "federation.clients: must be >= 1");
  need(beta > 0.0 && std::isfinite(beta), "federation.beta: must be > 0");
  need(!seeds.empty(), "federation.seeds: at least one seed required");
  need(phase_rounds.fl >= 1, "federation.phase_rounds.fl: must be >= 1");
  need(epochs_per_round >= 1, "federation.epochs_per_round: must be >= 1");
  need(batch_size >= 1, "federation.batch_size: must be >= 1");
  need(!lr_main.empty(), "federation.lr_main: must not be empty");
  need(!lr_standalone.empty(), "federation.lr_standalone: must not be empty");
  for (double lr : lr_main) need(lr >= 0.0 && std::isfinite(lr), "federation.lr_main: values must be finite and >= 0");
  for (double lr : lr_standalone) need(lr >= 0.0 && std::isfinite(lr), "federation.lr_standalone: values must be finite and >= 0");
  need(weight_decay >= 0.0 && std::isfinite(weight_decay), "federation.weight_decay: must be finite and >= 0");
  need(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "federation.adam_beta1: must be in [0, 1)");
  need(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "federation.adam_beta2: must be in [0, 1)");
  need(adam_eps > 0.0, "federation.adam_eps: must be positive");
  need(!lambda_tgt.empty(), "unlearning.lambda_tgt: must not be empty");
  for (double l : lambda_tgt) need(std::isfinite(l), "unlearning.lambda_tgt: values must be finite");
  need(target_id >= 0 && static_cast<std::size_t>(target_id) < clients, "unlearning.target_id: must name one of the clients");
  need(calibration_epochs >= 1, "unlearning.calibration_epochs: must be >= 1");
  need(grid_global_slack >= 0.0 && std::isfinite(grid_global_slack), "grid.global_slack: must be finite and >= 0");
  if (phase_rounds.fu > 0) need(clients >= 2, "federation.clients: unlearning a client needs at least 2 clients");
  if (parity && strategy == Strategy::federaser && phase_rounds.fu > 0) {
    need(phase_rounds.fl <= phase_rounds.fu + phase_rounds.pu,
         "federation.phase_rounds: FedEraser needs fu + pu >= fl to keep total rounds equal");
  }
  if (!problems.empty()) throw ConfigError(problems);
}

PhaseRounds plan_phases(const ExperimentConfig& config) {
  const PhaseRounds& p = config.phase_rounds;
  PhaseRounds out{p.fl, p.fu, p.pu};
  if (p.fu == 0) return out;  // no unlearning requested
  switch (config.strategy) {
    case Strategy::sata:
    case Strategy::safa: out.fu = 1; break;
    case Strategy::federaser: out.fu = p.fl; break;
    case Strategy::ctt:
    case Strategy::tfs: break;
  }
  if (config.parity) {
    const std::size_t total = p.total();
    out.pu = total >= out.fl + out.fu ? total - out.fl - out.fu : 0;
  }
  return out;
}

}  // namespace fedunlearn
