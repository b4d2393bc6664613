#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kdpos/distill.hpp"
#include "kdpos/sim.hpp"

namespace kdpos::config {

// Flat view of an INI-style file: "[section.subsection]" headers and
// "key = value" lines; '#' or ';' start comments.
struct ParsedConfig {
  std::map<std::string, std::string> kv;  // "section.key" -> raw value

  bool has(const std::string& key) const { return kv.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key, double dflt) const;
  long long get_int(const std::string& key, long long dflt) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  // Canonical serialization (sorted keys) and its FNV-1a hash.
  std::string canonical() const;
  std::string hash_hex() const;
};

ParsedConfig parse_config_text(const std::string& text,
                               const std::string& origin = "<string>");
ParsedConfig parse_config_file(const std::string& path);

struct CohortConfig {
  int participants = 10;           // full participants, 5 sessions each
  int sessions_per_participant = 5;
  int short_participants = 0;      // train-only participants
  int short_sessions = 3;
  double duration_s = 300.0;
  std::vector<int> plan = {1, 2, 3, 4};
};

struct ExperimentConfig {
  sim::MapConfig map;
  sim::RadioParams radio;
  sim::UltrasoundParams ultrasound;
  CohortConfig cohort;
  std::uint64_t master_seed = 1;

  distill::TrainConfig teacher_train;   // adam(0.001), 100 epochs, patience 20
  distill::TrainConfig student_train;   // adadelta(0.9), 100 epochs, patience 20
  distill::KdConfig kd;

  std::string out_dir = "out";
  int jobs = 0;  // 0 = hardware concurrency
  std::string config_hash;  // hash of the parsed file
};

ExperimentConfig default_experiment_config();
ExperimentConfig experiment_config_from(const ParsedConfig& pc);

}  // namespace kdpos::config
