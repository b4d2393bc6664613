#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kdpos/sim.hpp"
#include "kdpos/window.hpp"

namespace kdpos::signal {

// Multi-channel stream on an exactly uniform grid.
struct UniformStream {
  double rate_hz = 0.0;
  double start_t = 0.0;
  std::size_t channels = 0;
  std::size_t samples = 0;
  std::vector<double> values;  // [channel][sample]

  double& at(std::size_t c, std::size_t s) { return values[c * samples + s]; }
  double at(std::size_t c, std::size_t s) const {
    return values[c * samples + s];
  }
  double time_of(std::size_t s) const { return start_t + double(s) / rate_hz; }
};

// Step-function class labels over time; lookup is nearest-preceding.
struct LabelTrack {
  std::vector<double> t;
  std::vector<int> c;

  int at(double time) const;
};

// Subtracts the per-channel mean computed over the whole stream.
UniformStream remove_dc_offset(const UniformStream& stream);

// Linear interpolation of one raw channel onto a uniform grid anchored at t0;
// output length is floor((t1 - t0) * rate) + 1. Edge-hold extrapolation is
// allowed up to one raw sample period.
UniformStream resample_uniform(const sim::TimedSeries& raw,
                               double target_rate_hz, double t0, double t1);

// --- Butterworth low-pass ---------------------------------------------------

struct Biquad {
  double b0 = 0, b1 = 0, b2 = 0;  // numerator
  double a1 = 0, a2 = 0;          // denominator (a0 = 1)
};

// Bilinear-transform design with cutoff prewarping, as second-order sections.
std::vector<Biquad> butter_lowpass_sos(double cutoff_hz, double rate_hz,
                                       int order);

// Single-pass filtering; state starts at the step steady state of x[0].
std::vector<double> sosfilt(const std::vector<Biquad>& sos,
                            const std::vector<double>& x);

// Forward-backward (zero-phase) filtering with odd-extension padding.
std::vector<double> sosfiltfilt(const std::vector<Biquad>& sos,
                                const std::vector<double>& x);

// Zero-phase Butterworth low-pass applied per channel.
UniformStream butterworth_lowpass(const UniformStream& stream,
                                  double cutoff_hz, int order = 4);

// --- windowing ---------------------------------------------------------------

// Slides a win_s window with step_s stride over the stream; the window label
// is the majority class over its span (ties -> lower class id). A stream
// shorter than one window yields an empty dataset with the warning flag set.
WindowDataset slide_windows(const UniformStream& stream,
                            const LabelTrack& labels, double win_s = 2.0,
                            double step_s = 0.5);

// Full preprocessing chain for one session:
//   RSSI:       DC offset removal -> resample 50 Hz -> 3 Hz low-pass
//   ultrasound: resample 50 Hz -> 10 Hz low-pass
// Channels stacked as rx1,rx2,rx3,x,y,z, then windowed; student mode drops
// the ultrasound channels after identical windowing.
WindowDataset preprocess_session(const sim::SessionRecording& rec,
                                 WindowMode mode);

}  // namespace kdpos::signal
