#include "kdpos/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kdpos/error.hpp"
#include "kdpos/rng.hpp"

namespace kdpos::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_double(const std::string& key, const std::string& raw) {
  char* end = nullptr;
  double v = std::strtod(raw.c_str(), &end);
  if (end == raw.c_str() || *end != '\0')
    throw config_error("value of '" + key + "' is not a number: " + raw);
  return v;
}

}  // namespace

std::string ParsedConfig::get_string(const std::string& key,
                                     const std::string& dflt) const {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : it->second;
}

double ParsedConfig::get_double(const std::string& key, double dflt) const {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : parse_double(key, it->second);
}

long long ParsedConfig::get_int(const std::string& key, long long dflt) const {
  auto it = kv.find(key);
  if (it == kv.end()) return dflt;
  double v = parse_double(key, it->second);
  long long n = (long long)(v);
  if (double(n) != v)
    throw config_error("value of '" + key + "' is not an integer: " + it->second);
  return n;
}

std::uint64_t ParsedConfig::get_u64(const std::string& key,
                                    std::uint64_t dflt) const {
  auto it = kv.find(key);
  if (it == kv.end()) return dflt;
  char* end = nullptr;
  std::uint64_t v = std::strtoull(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw config_error("value of '" + key + "' is not an unsigned integer: " +
                       it->second);
  return v;
}

std::vector<double> ParsedConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  auto it = kv.find(key);
  if (it == kv.end()) return out;
  std::string item;
  std::istringstream is(it->second);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  return out;
}

std::vector<int> ParsedConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (double v : get_doubles(key)) {
    if (double(int(v)) != v)
      throw config_error("value of '" + key + "' must be a list of integers");
    out.push_back(int(v));
  }
  return out;
}

std::string ParsedConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::string ParsedConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                (unsigned long long)fnv1a64(canonical()));
  return buf;
}

ParsedConfig parse_config_text(const std::string& text,
                               const std::string& origin) {
  ParsedConfig pc;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw config_error(origin + ":" + std::to_string(lineno) +
                           ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw config_error(origin + ":" + std::to_string(lineno) +
                           ": empty section name");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(origin + ":" + std::to_string(lineno) +
                         ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
    std::string full = section.empty() ? key : section + "." + key;
    if (pc.kv.count(full))
      throw config_error(origin + ":" + std::to_string(lineno) +
                         ": duplicate key '" + full + "'");
    pc.kv[full] = val;
  }
  return pc;
}

ParsedConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw config_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), path);
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig ec;
  ec.teacher_train.optimizer = distill::OptKind::adam;
  ec.teacher_train.learning_rate = 0.001;
  ec.student_train.optimizer = distill::OptKind::adadelta;
  ec.student_train.learning_rate = 0.9;
  ec.config_hash = ParsedConfig{}.hash_hex();
  return ec;
}

namespace {

Rect parse_rect(const ParsedConfig& pc, const std::string& key, Rect dflt) {
  auto v = pc.get_doubles(key);
  if (v.empty()) return dflt;
  if (v.size() != 4)
    throw config_error("'" + key + "' must be x0,y0,x1,y1");
  return {v[0], v[1], v[2], v[3]};
}

std::vector<Point2> parse_points(const ParsedConfig& pc, const std::string& key) {
  std::vector<Point2> out;
  auto it = pc.kv.find(key);
  if (it == pc.kv.end()) return out;
  std::istringstream is(it->second);
  std::string item;
  while (std::getline(is, item, ';')) {
    std::istringstream ps(item);
    std::string num;
    std::vector<double> xy;
    while (std::getline(ps, num, ',')) {
      num.erase(0, num.find_first_not_of(" \t"));
      if (num.empty()) continue;
      char* end = nullptr;
      xy.push_back(std::strtod(num.c_str(), &end));
      if (end == num.c_str())
        throw config_error("'" + key + "': bad point list");
    }
    if (xy.size() != 2) throw config_error("'" + key + "': points are x,y pairs");
    out.push_back({xy[0], xy[1]});
  }
  return out;
}

distill::TrainConfig parse_train(const ParsedConfig& pc, const std::string& sec,
                                 distill::TrainConfig base) {
  base.epochs = int(pc.get_int(sec + ".epochs", base.epochs));
  base.batch_size = int(pc.get_int(sec + ".batch_size", base.batch_size));
  long long pat = pc.get_int(
      sec + ".patience",
      base.early_stop_patience ? *base.early_stop_patience : -1);
  base.early_stop_patience =
      pat < 0 ? std::nullopt : std::optional<int>(int(pat));
  std::string opt = pc.get_string(
      sec + ".optimizer",
      base.optimizer == distill::OptKind::adam ? "adam" : "adadelta");
  if (opt == "adam")
    base.optimizer = distill::OptKind::adam;
  else if (opt == "adadelta")
    base.optimizer = distill::OptKind::adadelta;
  else
    throw config_error("'" + sec + ".optimizer' must be adam or adadelta");
  base.learning_rate = pc.get_double(sec + ".learning_rate", base.learning_rate);
  base.validation_fraction =
      pc.get_double(sec + ".validation_fraction", base.validation_fraction);
  if (base.epochs < 1) throw config_error("'" + sec + ".epochs' must be >= 1");
  if (base.batch_size < 1)
    throw config_error("'" + sec + ".batch_size' must be >= 1");
  if (base.validation_fraction <= 0 || base.validation_fraction >= 1)
    throw config_error("'" + sec + ".validation_fraction' must be in (0,1)");
  return base;
}

}  // namespace

ExperimentConfig experiment_config_from(const ParsedConfig& pc) {
  ExperimentConfig ec = default_experiment_config();
  ec.config_hash = pc.hash_hex();

  // scenario.map
  if (pc.has("scenario.map.walkable") || pc.has("scenario.map.module1")) {
    ec.map.use_defaults = false;
    ec.map.walkable = parse_rect(pc, "scenario.map.walkable", {0, 0, 12, 8});
    for (int id = 1; id <= 4; ++id) {
      Rect r = parse_rect(pc, "scenario.map.module" + std::to_string(id),
                          {0, 0, 0, 0});
      ec.map.modules.push_back({id, r});
    }
    ec.map.receivers = parse_points(pc, "scenario.map.receivers");
    ec.map.beacons = parse_points(pc, "scenario.map.beacons");
    ec.map.work_zones = parse_points(pc, "scenario.map.work_zones");
    ec.map.occluded = parse_rect(pc, "scenario.map.occluded", {0, 0, 0, 0});
  }

  // scenario.radio
  auto& r = ec.radio;
  r.tx_power_dbm = pc.get_double("scenario.radio.tx_power_dbm", r.tx_power_dbm);
  r.ref_loss_db = pc.get_double("scenario.radio.ref_loss_db", r.ref_loss_db);
  r.path_loss_exponent =
      pc.get_double("scenario.radio.path_loss_exponent", r.path_loss_exponent);
  r.shadow_sigma_db =
      pc.get_double("scenario.radio.shadow_sigma_db", r.shadow_sigma_db);
  r.shadow_tau_s = pc.get_double("scenario.radio.shadow_tau_s", r.shadow_tau_s);
  r.rssi_rate_hz = pc.get_double("scenario.radio.rssi_rate_hz", r.rssi_rate_hz);
  r.rssi_resolution_db =
      pc.get_double("scenario.radio.rssi_resolution_db", r.rssi_resolution_db);

  // scenario.ultrasound
  auto& u = ec.ultrasound;
  u.noise_sigma_m =
      pc.get_double("scenario.ultrasound.noise_sigma_m", u.noise_sigma_m);
  u.rate_hz = pc.get_double("scenario.ultrasound.rate_hz", u.rate_hz);
  u.occlusion_dropout_prob = pc.get_double(
      "scenario.ultrasound.occlusion_dropout_prob", u.occlusion_dropout_prob);

  // scenario / cohort
  auto& c = ec.cohort;
  c.duration_s = pc.get_double("scenario.duration_s", c.duration_s);
  if (pc.has("scenario.plan")) c.plan = pc.get_ints("scenario.plan");
  c.participants = int(pc.get_int("cohort.participants", c.participants));
  c.sessions_per_participant = int(
      pc.get_int("cohort.sessions_per_participant", c.sessions_per_participant));
  c.short_participants =
      int(pc.get_int("cohort.short_participants", c.short_participants));
  c.short_sessions = int(pc.get_int("cohort.short_sessions", c.short_sessions));
  ec.master_seed = pc.get_u64("cohort.master_seed", ec.master_seed);

  if (c.participants < 1) throw config_error("cohort.participants must be >= 1");
  if (c.sessions_per_participant != 5)
    throw config_error(
        "cohort.sessions_per_participant must be 5 (leave-one-session-out "
        "protocol)");
  if (c.short_participants < 0)
    throw config_error("cohort.short_participants must be >= 0");
  if (c.short_sessions < 1 || c.short_sessions >= 5)
    throw config_error("cohort.short_sessions must be in [1,4]");
  if (c.duration_s <= 0) throw config_error("scenario.duration_s must be > 0");

  // training
  ec.teacher_train = parse_train(pc, "train.teacher", ec.teacher_train);
  ec.student_train = parse_train(pc, "train.student", ec.student_train);

  auto& kd = ec.kd;
  kd.alpha = pc.get_double("kd.alpha", kd.alpha);
  kd.temperature = pc.get_double("kd.temperature", kd.temperature);
  kd.epochs = int(pc.get_int("kd.epochs", kd.epochs));
  kd.batch_size = int(pc.get_int("kd.batch_size", kd.batch_size));
  kd.learning_rate = pc.get_double("kd.learning_rate", kd.learning_rate);
  if (kd.alpha < 0 || kd.alpha > 1)
    throw config_error("kd.alpha must be in [0,1]");
  if (kd.temperature <= 0) throw config_error("kd.temperature must be > 0");
  if (kd.epochs < 1) throw config_error("kd.epochs must be >= 1");

  ec.out_dir = pc.get_string("output.dir", ec.out_dir);
  ec.jobs = int(pc.get_int("output.jobs", ec.jobs));

  // Fail fast on invalid physics parameters.
  try {
    ec.radio.validate();
    ec.ultrasound.validate();
  } catch (const Error& e) {
    throw config_error(e.what());
  }
  return ec;
}

}  // namespace kdpos::config
