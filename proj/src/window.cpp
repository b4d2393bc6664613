#include "kdpos/window.hpp"

#include <cstring>
#include <fstream>

#include "kdpos/error.hpp"

namespace kdpos::signal {

void WindowDataset::append(const WindowDataset& other) {
  if (size() == 0) {
    mode = other.mode;
    channels = other.channels;
    win_len = other.win_len;
  }
  if (other.channels != channels || other.win_len != win_len)
    throw input_error("cannot append window datasets of different shape");
  data.insert(data.end(), other.data.begin(), other.data.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  prov.insert(prov.end(), other.prov.begin(), other.prov.end());
  short_input_warning = short_input_warning || other.short_input_warning;
}

WindowDataset WindowDataset::channel_slice(std::size_t keep_channels,
                                           WindowMode new_mode) const {
  if (keep_channels > channels)
    throw input_error("channel slice exceeds channel count");
  WindowDataset out;
  out.mode = new_mode;
  out.channels = keep_channels;
  out.win_len = win_len;
  out.labels = labels;
  out.prov = prov;
  out.short_input_warning = short_input_warning;
  out.data.resize(size() * keep_channels * win_len);
  for (std::size_t w = 0; w < size(); ++w)
    std::memcpy(out.data.data() + w * keep_channels * win_len, window(w),
                keep_channels * win_len * sizeof(float));
  return out;
}

namespace {
template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
}  // namespace

void save_window_dataset(const WindowDataset& ds, const std::string& path,
                         const std::map<std::string, std::string>& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw input_error("cannot write dataset: " + path);
  os.write("BSWD", 4);
  put<std::uint32_t>(os, 1);  // version
  put<std::uint8_t>(os, static_cast<std::uint8_t>(ds.mode));
  put<std::uint64_t>(os, ds.size());
  put<std::uint64_t>(os, ds.channels);
  put<std::uint64_t>(os, ds.win_len);
  put<std::uint8_t>(os, ds.short_input_warning ? 1 : 0);
  os.write(reinterpret_cast<const char*>(ds.data.data()),
           std::streamsize(ds.data.size() * sizeof(float)));
  os.write(reinterpret_cast<const char*>(ds.labels.data()),
           std::streamsize(ds.labels.size()));
  for (const auto& p : ds.prov) {
    put<std::uint32_t>(os, p.participant);
    put<std::uint32_t>(os, p.session);
    put<double>(os, p.start_t);
  }
  if (!os) throw input_error("dataset write failed: " + path);

  std::ofstream ms(path + ".meta");
  if (!ms) throw input_error("cannot write dataset sidecar: " + path + ".meta");
  ms << "format=BSWD\nversion=1\nmode="
     << (ds.mode == WindowMode::teacher
             ? "teacher"
             : ds.mode == WindowMode::student ? "student" : "generic")
     << "\nwindows=" << ds.size() << "\nchannels=" << ds.channels
     << "\nwin_len=" << ds.win_len << "\n";
  for (const auto& [k, v] : meta) ms << k << "=" << v << "\n";
}

WindowDataset load_window_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw dependency_error("missing window dataset: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BSWD", 4) != 0)
    throw input_error("not a window dataset file: " + path);
  if (get<std::uint32_t>(is) != 1)
    throw input_error("unsupported dataset version in " + path);
  WindowDataset ds;
  ds.mode = static_cast<WindowMode>(get<std::uint8_t>(is));
  std::uint64_t n = get<std::uint64_t>(is);
  ds.channels = std::size_t(get<std::uint64_t>(is));
  ds.win_len = std::size_t(get<std::uint64_t>(is));
  ds.short_input_warning = get<std::uint8_t>(is) != 0;
  ds.data.resize(n * ds.channels * ds.win_len);
  is.read(reinterpret_cast<char*>(ds.data.data()),
          std::streamsize(ds.data.size() * sizeof(float)));
  ds.labels.resize(n);
  is.read(reinterpret_cast<char*>(ds.labels.data()), std::streamsize(n));
  ds.prov.resize(n);
  for (auto& p : ds.prov) {
    p.participant = get<std::uint32_t>(is);
    p.session = get<std::uint32_t>(is);
    p.start_t = get<double>(is);
  }
  if (!is) throw input_error("truncated window dataset: " + path);
  return ds;
}

}  // namespace kdpos::signal
