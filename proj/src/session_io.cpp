#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "kdpos/error.hpp"
#include "kdpos/sim.hpp"

namespace fs = std::filesystem;

namespace kdpos::sim {

namespace {

std::string fmt_full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw input_error("cannot write " + p.string());
  return os;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw dependency_error("missing stream file " + p.string());
  return is;
}

std::vector<std::vector<double>> read_csv(const fs::path& p,
                                          std::size_t columns) {
  std::ifstream is = open_in(p);
  std::string line;
  std::getline(is, line);  // header
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    const char* s = line.c_str();
    char* end = nullptr;
    for (std::size_t c = 0; c < columns; ++c) {
      double v = std::strtod(s, &end);
      if (end == s)
        throw input_error("bad value in " + p.string() + " line " +
                          std::to_string(lineno));
      row.push_back(v);
      s = end;
      while (*s == ',' || *s == ' ') ++s;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void write_session_dir(const SessionRecording& rec, const std::string& dir,
                       std::uint64_t seed, const std::string& config_hash) {
  fs::create_directories(dir);

  {
    // Merge the three receiver streams onto the union of their timestamps,
    // forward-filling each column (first value back-fills the lead-in).
    std::vector<double> ts;
    for (const auto& ch : rec.rssi) ts.insert(ts.end(), ch.t.begin(), ch.t.end());
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

    std::ofstream os = open_out(fs::path(dir) / "rssi.csv");
    os << "t,rx1,rx2,rx3\n";
    std::array<std::size_t, 3> cur{0, 0, 0};
    for (double t : ts) {
      os << fmt_full(t);
      for (std::size_t r = 0; r < 3; ++r) {
        const auto& ch = rec.rssi[r];
        while (cur[r] + 1 < ch.t.size() && ch.t[cur[r] + 1] <= t) ++cur[r];
        std::size_t i = ch.t[cur[r]] <= t ? cur[r] : 0;
        os << ',' << fmt_full(ch.v[i]);
      }
      os << '\n';
    }
  }

  {
    std::ofstream os = open_out(fs::path(dir) / "us.csv");
    os << "t,x,y,z\n";
    for (std::size_t i = 0; i < rec.us.t.size(); ++i)
      os << fmt_full(rec.us.t[i]) << ',' << fmt_full(rec.us.x[i]) << ','
         << fmt_full(rec.us.y[i]) << ',' << fmt_full(rec.us.z[i]) << '\n';
  }

  {
    std::ofstream os = open_out(fs::path(dir) / "labels.csv");
    os << "t,class\n";
    for (const auto& e : rec.labels)
      os << fmt_full(e.t) << ',' << e.c << '\n';
  }

  {
    nlohmann::ordered_json meta;
    meta["participant"] = rec.participant_id;
    meta["session"] = rec.session_id;
    meta["seed"] = seed;
    meta["config_hash"] = config_hash;
    std::ofstream os = open_out(fs::path(dir) / "meta.json");
    os << meta.dump(2) << '\n';
  }
}

SessionRecording read_session_dir(const std::string& dir) {
  SessionRecording rec;

  {
    std::ifstream is = open_in(fs::path(dir) / "meta.json");
    nlohmann::json meta = nlohmann::json::parse(is, nullptr, true);
    rec.participant_id = meta.value("participant", 0u);
    rec.session_id = meta.value("session", 0u);
  }

  for (const auto& row : read_csv(fs::path(dir) / "rssi.csv", 4)) {
    for (std::size_t r = 0; r < 3; ++r) {
      rec.rssi[r].t.push_back(row[0]);
      rec.rssi[r].v.push_back(row[r + 1]);
    }
  }
  for (const auto& row : read_csv(fs::path(dir) / "us.csv", 4)) {
    rec.us.t.push_back(row[0]);
    rec.us.x.push_back(row[1]);
    rec.us.y.push_back(row[2]);
    rec.us.z.push_back(row[3]);
  }
  for (const auto& row : read_csv(fs::path(dir) / "labels.csv", 2))
    rec.labels.push_back({row[0], int(row[1])});

  if (rec.labels.empty())
    throw input_error("session " + dir + " has an empty label timeline");
  return rec;
}

}  // namespace kdpos::sim
