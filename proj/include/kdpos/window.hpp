#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace kdpos::signal {

enum class WindowMode : std::uint8_t { teacher = 0, student = 1, generic = 2 };

struct WindowProvenance {
  std::uint32_t participant = 0;
  std::uint32_t session = 0;
  double start_t = 0.0;
};

// Fixed-shape windowed samples: [num_windows x channels x win_len] float32,
// class labels in 1..4 and per-window provenance.
struct WindowDataset {
  WindowMode mode = WindowMode::generic;
  std::size_t channels = 0;
  std::size_t win_len = 0;
  std::vector<float> data;  // [window][channel][step]
  std::vector<std::uint8_t> labels;
  std::vector<WindowProvenance> prov;
  bool short_input_warning = false;

  std::size_t size() const { return labels.size(); }

  const float* window(std::size_t w) const {
    return data.data() + w * channels * win_len;
  }
  float* window(std::size_t w) { return data.data() + w * channels * win_len; }

  void append(const WindowDataset& other);

  // Copy with only the first `keep_channels` channels of every window.
  WindowDataset channel_slice(std::size_t keep_channels, WindowMode mode) const;
};

// Binary container ("BSWD") plus a small key-value sidecar text file at
// path + ".meta".
void save_window_dataset(const WindowDataset& ds, const std::string& path,
                         const std::map<std::string, std::string>& meta = {});

WindowDataset load_window_dataset(const std::string& path);

}  // namespace kdpos::signal
