#include "kdpos/sim.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kdpos/error.hpp"

namespace kdpos::sim {

namespace {
constexpr double kTraceRateHz = 50.0;
constexpr double kMinDistanceM = 0.1;
constexpr double kDwellMinS = 30.0, kDwellMaxS = 120.0;
constexpr double kSpeedMinS = 0.8, kSpeedMaxS = 1.4;
constexpr double kTagHeightM = 1.0;
}  // namespace

void RadioParams::validate() const {
  if (rssi_rate_hz <= 0) throw input_error("rssi_rate_hz must be > 0");
  if (rssi_resolution_db <= 0)
    throw input_error("rssi_resolution_db must be > 0");
  if (path_loss_exponent < 1.5 || path_loss_exponent > 4.0)
    throw input_error("path_loss_exponent must be in [1.5, 4.0]");
  if (shadow_sigma_db < 0) throw input_error("shadow_sigma_db must be >= 0");
  if (shadow_tau_s < 0) throw input_error("shadow_tau_s must be >= 0");
}

void UltrasoundParams::validate() const {
  if (noise_sigma_m < 0) throw input_error("noise_sigma_m must be >= 0");
  if (rate_hz <= 0) throw input_error("rate_hz must be > 0");
  if (occlusion_dropout_prob < 0 || occlusion_dropout_prob > 1)
    throw input_error("occlusion_dropout_prob must be in [0,1]");
}

int FactoryMap::nearest_module(double x, double y) const {
  int best_id = modules.front().id;
  double best = point_rect_distance(x, y, modules.front().rect);
  for (std::size_t i = 1; i < modules.size(); ++i) {
    double d = point_rect_distance(x, y, modules[i].rect);
    if (d < best || (d == best && modules[i].id < best_id)) {
      best = d;
      best_id = modules[i].id;
    }
  }
  return best_id;
}

const ModuleRect& FactoryMap::module_by_id(int id) const {
  for (const auto& m : modules)
    if (m.id == id) return m;
  throw input_error("plan error: unknown module " + std::to_string(id));
}

const Point2& FactoryMap::work_zone(int id) const {
  for (std::size_t i = 0; i < modules.size(); ++i)
    if (modules[i].id == id) return work_zones[i];
  throw input_error("plan error: unknown module " + std::to_string(id));
}

FactoryMap default_factory_map() {
  MapConfig cfg;
  cfg.use_defaults = false;
  cfg.walkable = {0.0, 0.0, 12.0, 8.0};
  // Module 1 is 3x the area of modules 2-4; all gaps >= 2 m.
  cfg.modules = {{1, {1.0, 5.5, 7.0, 7.5}},
                 {2, {1.0, 0.5, 3.0, 2.5}},
                 {3, {5.0, 0.5, 7.0, 2.5}},
                 {4, {9.0, 0.5, 11.0, 2.5}}};
  // One receiver each near modules 1 and 2; one shared between 3 and 4.
  cfg.receivers = {{4.0, 5.2}, {2.0, 2.8}, {8.0, 2.8}};
  cfg.beacons = {{4.0, 5.3}, {2.0, 2.7}, {6.0, 2.7}, {10.0, 2.7}};
  cfg.work_zones = {{4.0, 4.9}, {2.0, 3.1}, {6.0, 3.1}, {10.0, 3.1}};
  // Strip behind the lower module row, shadowed from the beacons.
  cfg.occluded = {0.0, 0.0, 12.0, 0.5};
  FactoryMap map = build_factory_map(cfg);
  // Workers sometimes cut behind the modules when moving between 3 and 4.
  map.detours.push_back(
      {3, 4, {{8.0, 3.1}, {8.0, 0.25}, {11.5, 0.25}, {11.5, 3.1}}, 0.5});
  return map;
}

FactoryMap build_factory_map(const MapConfig& cfg) {
  if (cfg.use_defaults) return default_factory_map();

  FactoryMap map;
  map.walkable = cfg.walkable;
  if (map.walkable.width() <= 0 || map.walkable.height() <= 0)
    throw input_error("geometry error: walkable region must have positive size");

  if (cfg.modules.size() != 4)
    throw input_error("geometry error: expected exactly 4 modules, got " +
                      std::to_string(cfg.modules.size()));
  std::set<int> ids;
  for (const auto& m : cfg.modules) {
    if (m.id < 1 || m.id > 4 || !ids.insert(m.id).second)
      throw input_error("geometry error: module ids must be 1..4 and unique");
    if (m.rect.width() <= 0 || m.rect.height() <= 0)
      throw input_error("geometry error: module " + std::to_string(m.id) +
                        " must have positive size");
  }
  map.modules = cfg.modules;
  std::sort(map.modules.begin(), map.modules.end(),
            [](const ModuleRect& a, const ModuleRect& b) { return a.id < b.id; });

  for (std::size_t i = 0; i < map.modules.size(); ++i)
    for (std::size_t j = i + 1; j < map.modules.size(); ++j) {
      if (rects_overlap(map.modules[i].rect, map.modules[j].rect))
        throw input_error("geometry error: modules " +
                          std::to_string(map.modules[i].id) + " and " +
                          std::to_string(map.modules[j].id) + " overlap");
      if (rect_gap(map.modules[i].rect, map.modules[j].rect) < 2.0)
        throw input_error("geometry error: gap between modules " +
                          std::to_string(map.modules[i].id) + " and " +
                          std::to_string(map.modules[j].id) + " is below 2 m");
    }

  double area1 = map.module_by_id(1).rect.area();
  for (int id = 2; id <= 4; ++id)
    if (area1 < 2.5 * map.module_by_id(id).rect.area())
      throw input_error("geometry error: module 1 area must be >= 2.5x module " +
                        std::to_string(id));

  if (cfg.receivers.size() != 3)
    throw input_error("placement error: expected exactly 3 receivers, got " +
                      std::to_string(cfg.receivers.size()));
  for (const auto& p : cfg.receivers)
    if (!map.walkable.contains(p.x, p.y))
      throw input_error("placement error: receiver (" + std::to_string(p.x) +
                        "," + std::to_string(p.y) + ") outside walkable region");
  map.receivers = cfg.receivers;

  if (cfg.beacons.size() < 3)
    throw input_error("placement error: need at least 3 beacons");
  for (const auto& p : cfg.beacons)
    if (!map.walkable.contains(p.x, p.y))
      throw input_error("placement error: beacon (" + std::to_string(p.x) +
                        "," + std::to_string(p.y) + ") outside walkable region");
  map.beacons = cfg.beacons;

  if (!cfg.work_zones.empty()) {
    if (cfg.work_zones.size() != 4)
      throw input_error("placement error: need one work zone per module");
    map.work_zones = cfg.work_zones;
  } else {
    // Place each work zone 0.6 m outside the module edge facing the center
    // of the walkable region.
    Point2 c = map.walkable.center();
    for (const auto& m : map.modules) {
      Point2 mc = m.rect.center();
      double dx = c.x - mc.x, dy = c.y - mc.y;
      Point2 wz = mc;
      if (std::abs(dy) >= std::abs(dx))
        wz.y = dy >= 0 ? m.rect.y1 + 0.6 : m.rect.y0 - 0.6;
      else
        wz.x = dx >= 0 ? m.rect.x1 + 0.6 : m.rect.x0 - 0.6;
      map.work_zones.push_back(wz);
    }
  }
  for (const auto& p : map.work_zones)
    if (!map.walkable.contains(p.x, p.y))
      throw input_error("placement error: work zone outside walkable region");

  map.occluded = cfg.occluded;
  return map;
}

// ---------------------------------------------------------------------------

TrajectoryTrace generate_walk(std::uint64_t seed, const FactoryMap& map,
                              const std::vector<int>& plan,
                              double duration_s) {
  if (duration_s <= 0) throw input_error("plan error: duration_s must be > 0");
  if (plan.empty()) throw input_error("plan error: empty plan");
  std::set<int> visited(plan.begin(), plan.end());
  for (int id : plan) map.module_by_id(id);  // throws on unknown module
  for (const auto& m : map.modules)
    if (!visited.count(m.id))
      throw input_error("plan error: plan never visits module " +
                        std::to_string(m.id));

  Rng rng(seed);
  const double dt = 1.0 / kTraceRateHz;
  TrajectoryTrace trace;
  trace.samples.reserve(std::size_t(duration_s * kTraceRateHz) + 1);

  Point2 pos = map.work_zone(plan[0]);
  std::size_t tick = 0;  // sample clock, exact grid t = tick * dt
  double t = 0.0;
  std::size_t leg = 0;  // index into the cyclic plan

  auto emit = [&](double px, double py) {
    px = std::clamp(px, map.walkable.x0, map.walkable.x1);
    py = std::clamp(py, map.walkable.y0, map.walkable.y1);
    trace.samples.push_back(
        {t, px, py, kTagHeightM, map.nearest_module(px, py)});
    ++tick;
    t = double(tick) * dt;
  };

  while (t <= duration_s) {
    // Dwell at the current module with small working movements around the
    // work zone (Ornstein-Uhlenbeck jitter).
    const Point2 anchor = map.work_zone(plan[leg % plan.size()]);
    const double dwell_s = rng.uniform(kDwellMinS, kDwellMaxS);
    const double theta = 1.2, sigma_w = 0.25;
    const double dwell_end = t + dwell_s;
    while (t <= std::min(dwell_end, duration_s)) {
      emit(pos.x, pos.y);
      pos.x += theta * (anchor.x - pos.x) * dt +
               sigma_w * std::sqrt(dt) * rng.normal();
      pos.y += theta * (anchor.y - pos.y) * dt +
               sigma_w * std::sqrt(dt) * rng.normal();
    }
    if (t > duration_s) break;

    // Transit to the next module in the plan at constant speed, optionally
    // via a detour path.
    const int from = plan[leg % plan.size()];
    ++leg;
    const int to = plan[leg % plan.size()];
    std::vector<Point2> waypoints;
    if (to != from) {
      for (const auto& d : map.detours) {
        if ((d.from == from && d.to == to) || (d.from == to && d.to == from)) {
          if (rng.bernoulli(d.prob)) {
            waypoints = d.via;
            if (d.from == to) std::reverse(waypoints.begin(), waypoints.end());
          }
          break;
        }
      }
    }
    waypoints.push_back(map.work_zone(to));

    const double speed = rng.uniform(kSpeedMinS, kSpeedMaxS);
    for (const auto& wp : waypoints) {
      double seg = dist2(pos, wp);
      if (seg < 1e-9) continue;
      double ux = (wp.x - pos.x) / seg, uy = (wp.y - pos.y) / seg;
      double walked = 0.0;
      while (walked + speed * dt < seg && t <= duration_s) {
        emit(pos.x, pos.y);
        walked += speed * dt;
        pos.x += ux * speed * dt;
        pos.y += uy * speed * dt;
      }
      pos = wp;
      if (t > duration_s) break;
    }
  }

  return trace;
}

// ---------------------------------------------------------------------------

namespace {

// Linear interpolation of the trace position at time t (edge-hold outside).
Point3 trace_position(const TrajectoryTrace& trace, double t,
                      std::size_t* cursor) {
  const auto& s = trace.samples;
  if (t <= s.front().t) return {s.front().x, s.front().y, s.front().z};
  if (t >= s.back().t) return {s.back().x, s.back().y, s.back().z};
  std::size_t i = *cursor;
  while (i + 1 < s.size() && s[i + 1].t < t) ++i;
  *cursor = i;
  const auto& a = s[i];
  const auto& b = s[i + 1];
  double w = (t - a.t) / (b.t - a.t);
  return {a.x + w * (b.x - a.x), a.y + w * (b.y - a.y),
          a.z + w * (b.z - a.z)};
}

double quantize_db(double v, double res) {
  return double(std::llround(v / res)) * res;
}

}  // namespace

double path_loss_dbm(double distance_m, const RadioParams& rp) {
  double d = std::max(distance_m, kMinDistanceM);
  return rp.tx_power_dbm - rp.ref_loss_db -
         10.0 * rp.path_loss_exponent * std::log10(d);
}

std::array<TimedSeries, 3> synthesize_rssi(const TrajectoryTrace& trace,
                                           const FactoryMap& map,
                                           const RadioParams& rp,
                                           std::uint64_t seed) {
  if (trace.samples.empty()) throw input_error("empty trajectory");
  rp.validate();

  const double period = 1.0 / rp.rssi_rate_hz;
  const double t_end = trace.samples.back().t;
  std::array<TimedSeries, 3> out;

  for (std::size_t r = 0; r < 3; ++r) {
    Rng rng(derive_seed(seed, "rx" + std::to_string(r)));
    TimedSeries& ch = out[r];
    std::size_t cursor = 0;
    double shadow = 0.0;
    double prev_t = 0.0;
    bool first = true;
    for (std::size_t k = 0;; ++k) {
      double t = double(k) * period + rng.uniform(-0.1 * period, 0.1 * period);
      if (t > t_end) break;
      if (t < 0.0) t = 0.0;
      Point3 p = trace_position(trace, t, &cursor);
      double d = std::hypot(p.x - map.receivers[r].x, p.y - map.receivers[r].y);
      double eps = rng.normal();
      if (rp.shadow_sigma_db > 0) {
        if (first || rp.shadow_tau_s <= 0) {
          shadow = rp.shadow_sigma_db * eps;
        } else {
          double rho = std::exp(-(t - prev_t) / rp.shadow_tau_s);
          shadow = rho * shadow +
                   rp.shadow_sigma_db * std::sqrt(1.0 - rho * rho) * eps;
        }
      }
      first = false;
      prev_t = t;
      ch.t.push_back(t);
      ch.v.push_back(
          quantize_db(path_loss_dbm(d, rp) + shadow, rp.rssi_resolution_db));
    }
  }
  return out;
}

UltrasoundTrack synthesize_ultrasound(const TrajectoryTrace& trace,
                                      const FactoryMap& map,
                                      const UltrasoundParams& up,
                                      std::uint64_t seed) {
  if (trace.samples.empty()) throw input_error("empty trajectory");
  up.validate();

  Rng rng(derive_seed(seed, "us"));
  UltrasoundTrack out;
  const double period = 1.0 / up.rate_hz;
  const double t_end = trace.samples.back().t;
  std::size_t cursor = 0;
  bool have_last = false;
  double lx = 0, ly = 0, lz = 0;
  for (std::size_t k = 0;; ++k) {
    double t = double(k) * period;
    if (t > t_end) break;
    Point3 p = trace_position(trace, t, &cursor);
    bool occluded = map.occluded.area() > 0 && map.occluded.contains(p.x, p.y);
    if (occluded && have_last && rng.bernoulli(up.occlusion_dropout_prob)) {
      // Sample-and-hold: repeat the last emitted coordinate.
    } else {
      lx = p.x + rng.normal(0.0, up.noise_sigma_m);
      ly = p.y + rng.normal(0.0, up.noise_sigma_m);
      lz = p.z + rng.normal(0.0, up.noise_sigma_m);
      have_last = true;
    }
    out.t.push_back(t);
    out.x.push_back(lx);
    out.y.push_back(ly);
    out.z.push_back(lz);
  }
  return out;
}

SessionRecording generate_session(std::uint64_t seed, const FactoryMap& map,
                                  const std::vector<int>& plan,
                                  double duration_s, const RadioParams& rp,
                                  const UltrasoundParams& up,
                                  std::uint32_t participant_id,
                                  std::uint32_t session_id) {
  SessionRecording rec;
  rec.participant_id = participant_id;
  rec.session_id = session_id;

  TrajectoryTrace trace =
      generate_walk(derive_seed(seed, "walk"), map, plan, duration_s);
  rec.rssi = synthesize_rssi(trace, map, rp, derive_seed(seed, "rssi"));
  rec.us = synthesize_ultrasound(trace, map, up, derive_seed(seed, "us"));

  int last = 0;
  for (const auto& s : trace.samples) {
    if (s.label != last) {
      rec.labels.push_back({s.t, s.label});
      last = s.label;
    }
  }
  return rec;
}

}  // namespace kdpos::sim
