#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kdpos/geom.hpp"
#include "kdpos/rng.hpp"

namespace kdpos::sim {

struct RadioParams {
  double tx_power_dbm = 4.0;
  double ref_loss_db = 40.0;       // path loss at d0 = 1 m
  double path_loss_exponent = 2.0;
  double shadow_sigma_db = 3.5;
  double shadow_tau_s = 8.0;       // AR(1) correlation time; 0 = white noise
  double rssi_rate_hz = 50.0;
  double rssi_resolution_db = 1.0;

  void validate() const;
};

struct UltrasoundParams {
  double noise_sigma_m = 0.02;
  double rate_hz = 10.0;
  double occlusion_dropout_prob = 0.0;

  void validate() const;
};

struct ModuleRect {
  int id = 0;  // 1..4
  Rect rect;
};

// Optional detour between two module work zones, taken with probability
// `prob` per transit (models workers cutting behind the modules).
struct Detour {
  int from = 0, to = 0;
  std::vector<Point2> via;
  double prob = 0.0;
};

struct FactoryMap {
  Rect walkable;
  std::vector<ModuleRect> modules;   // exactly 4
  std::vector<Point2> receivers;     // exactly 3
  std::vector<Point2> beacons;       // >= 3
  std::vector<Point2> work_zones;    // one per module, same order
  Rect occluded;                     // ultrasound shadow region
  std::vector<Detour> detours;

  // Module id whose rectangle is closest to (x, y); ties -> lower id.
  int nearest_module(double x, double y) const;
  const ModuleRect& module_by_id(int id) const;
  const Point2& work_zone(int id) const;
};

struct MapConfig {
  bool use_defaults = true;
  Rect walkable;
  std::vector<ModuleRect> modules;
  std::vector<Point2> receivers;
  std::vector<Point2> beacons;
  std::vector<Point2> work_zones;   // derived from module rects when empty
  Rect occluded;                    // zero-size = none
};

FactoryMap default_factory_map();
FactoryMap build_factory_map(const MapConfig& cfg);

struct TraceSample {
  double t = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;
  int label = 0;  // 1..4
};

struct TrajectoryTrace {
  std::vector<TraceSample> samples;
};

// Piecewise walk alternating dwell segments at module work zones
// (30-120 s) and constant-speed transits (0.8-1.4 m/s), cycling through the
// plan until duration_s is reached. Deterministic for a fixed seed.
TrajectoryTrace generate_walk(std::uint64_t seed, const FactoryMap& map,
                              const std::vector<int>& plan, double duration_s);

// One raw timestamped channel.
struct TimedSeries {
  std::vector<double> t;
  std::vector<double> v;
};

// Log-distance path loss without shadowing or quantization; distance is
// clamped at 0.1 m.
double path_loss_dbm(double distance_m, const RadioParams& rp);

// Three receiver channels on independently jittered ~rate grids, with
// correlated log-normal shadowing, quantized to the RSSI resolution.
std::array<TimedSeries, 3> synthesize_rssi(const TrajectoryTrace& trace,
                                           const FactoryMap& map,
                                           const RadioParams& rp,
                                           std::uint64_t seed);

struct UltrasoundTrack {
  std::vector<double> t;
  std::vector<double> x, y, z;
};

// True coordinates at rate_hz plus per-axis Gaussian noise; inside the
// occluded region each sample is held at the last emitted value with
// probability occlusion_dropout_prob.
UltrasoundTrack synthesize_ultrasound(const TrajectoryTrace& trace,
                                      const FactoryMap& map,
                                      const UltrasoundParams& up,
                                      std::uint64_t seed);

struct LabelEvent {
  double t = 0.0;
  int c = 0;  // 1..4
};

struct SessionRecording {
  std::uint32_t participant_id = 0;
  std::uint32_t session_id = 0;
  std::array<TimedSeries, 3> rssi;
  UltrasoundTrack us;
  std::vector<LabelEvent> labels;
};

SessionRecording generate_session(std::uint64_t seed, const FactoryMap& map,
                                  const std::vector<int>& plan,
                                  double duration_s, const RadioParams& rp,
                                  const UltrasoundParams& up,
                                  std::uint32_t participant_id,
                                  std::uint32_t session_id);

// --- session directory persistence -----------------------------------------
// One directory per session: rssi.csv (t,rx1,rx2,rx3 forward-filled to the
// union of receiver timestamps), us.csv (t,x,y,z), labels.csv (t,class) and
// meta.json.

void write_session_dir(const SessionRecording& rec, const std::string& dir,
                       std::uint64_t seed, const std::string& config_hash);

SessionRecording read_session_dir(const std::string& dir);

}  // namespace kdpos::sim
