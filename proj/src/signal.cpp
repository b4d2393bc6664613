#include "kdpos/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "kdpos/error.hpp"

namespace kdpos::signal {

int LabelTrack::at(double time) const {
  if (t.empty()) throw input_error("empty label timeline");
  // Nearest preceding event; times before the first event hold its class.
  auto it = std::upper_bound(t.begin(), t.end(), time);
  if (it == t.begin()) return c.front();
  return c[std::size_t(it - t.begin()) - 1];
}

UniformStream remove_dc_offset(const UniformStream& stream) {
  if (stream.samples == 0 || stream.channels == 0)
    throw input_error("input error: empty stream");
  UniformStream out = stream;
  for (std::size_t c = 0; c < out.channels; ++c) {
    double mean = 0.0;
    for (std::size_t s = 0; s < out.samples; ++s) mean += out.at(c, s);
    mean /= double(out.samples);
    for (std::size_t s = 0; s < out.samples; ++s) out.at(c, s) -= mean;
  }
  return out;
}

UniformStream resample_uniform(const sim::TimedSeries& raw,
                               double target_rate_hz, double t0, double t1) {
  if (raw.t.size() < 2)
    throw input_error("input error: need at least 2 samples to resample");
  if (target_rate_hz <= 0) throw input_error("parameter error: rate must be > 0");
  if (t1 < t0) throw input_error("parameter error: empty span");
  for (std::size_t i = 1; i < raw.t.size(); ++i)
    if (raw.t[i] <= raw.t[i - 1])
      throw input_error("input error: timestamps must be strictly increasing");

  const double head_period = raw.t[1] - raw.t[0];
  const double tail_period = raw.t[raw.t.size() - 1] - raw.t[raw.t.size() - 2];
  if (t0 < raw.t.front() - head_period || t1 > raw.t.back() + tail_period)
    throw input_error(
        "input error: span exceeds raw coverage by more than one period");

  UniformStream out;
  out.rate_hz = target_rate_hz;
  out.start_t = t0;
  out.channels = 1;
  out.samples = std::size_t(std::floor((t1 - t0) * target_rate_hz + 1e-9)) + 1;
  out.values.resize(out.samples);

  std::size_t cur = 0;
  for (std::size_t s = 0; s < out.samples; ++s) {
    double t = t0 + double(s) / target_rate_hz;
    if (t <= raw.t.front()) {
      out.values[s] = raw.v.front();
      continue;
    }
    if (t >= raw.t.back()) {
      out.values[s] = raw.v.back();
      continue;
    }
    while (cur + 1 < raw.t.size() && raw.t[cur + 1] < t) ++cur;
    double w = (t - raw.t[cur]) / (raw.t[cur + 1] - raw.t[cur]);
    out.values[s] = raw.v[cur] + w * (raw.v[cur + 1] - raw.v[cur]);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Biquad> butter_lowpass_sos(double cutoff_hz, double rate_hz,
                                       int order) {
  if (order < 1) throw input_error("parameter error: order must be >= 1");
  if (!(cutoff_hz > 0) || cutoff_hz >= rate_hz / 2.0)
    throw input_error("parameter error: cutoff must be in (0, rate/2)");

  const double fs2 = 2.0 * rate_hz;
  const double wc = fs2 * std::tan(M_PI * cutoff_hz / rate_hz);  // prewarped

  std::vector<Biquad> sos;
  const int pairs = order / 2;
  for (int m = 0; m < pairs; ++m) {
    // Conjugate analog pole pair of the Butterworth circle.
    double theta = M_PI * (2.0 * m + 1.0) / (2.0 * order) + M_PI / 2.0;
    std::complex<double> p = wc * std::exp(std::complex<double>(0.0, theta));
    std::complex<double> zp = (fs2 + p) / (fs2 - p);
    Biquad q;
    q.a1 = -2.0 * zp.real();
    q.a2 = std::norm(zp);
    double g = (1.0 + q.a1 + q.a2) / 4.0;  // unit DC gain
    q.b0 = g;
    q.b1 = 2.0 * g;
    q.b2 = g;
    sos.push_back(q);
  }
  if (order % 2) {
    // Real pole at -wc.
    double zp = (fs2 - wc) / (fs2 + wc);
    Biquad q;
    q.a1 = -zp;
    q.a2 = 0.0;
    double g = (1.0 + q.a1) / 2.0;
    q.b0 = g;
    q.b1 = g;
    q.b2 = 0.0;
    sos.push_back(q);
  }
  return sos;
}

namespace {

// Direct form II transposed, one section, in place. State starts at the
// step-response steady state of x[0] so constants pass through exactly.
void section_filt(const Biquad& q, std::vector<double>& x) {
  double s0 = (1.0 - q.b0) * x[0];
  double s1 = (q.b2 - q.a2) * x[0];
  for (double& xi : x) {
    double y = q.b0 * xi + s0;
    s0 = q.b1 * xi - q.a1 * y + s1;
    s1 = q.b2 * xi - q.a2 * y;
    xi = y;
  }
}

}  // namespace

std::vector<double> sosfilt(const std::vector<Biquad>& sos,
                            const std::vector<double>& x) {
  if (x.empty()) throw input_error("input error: empty stream");
  std::vector<double> y = x;
  for (const auto& q : sos) section_filt(q, y);
  return y;
}

std::vector<double> sosfiltfilt(const std::vector<Biquad>& sos,
                                const std::vector<double>& x) {
  if (x.empty()) throw input_error("input error: empty stream");
  const std::size_t n = x.size();
  const std::size_t padlen = std::min<std::size_t>(6 * sos.size() + 3, n - 1);

  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i)
    ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i)
    ext.push_back(2.0 * x.back() - x[n - 1 - i]);

  for (const auto& q : sos) section_filt(q, ext);
  std::reverse(ext.begin(), ext.end());
  for (const auto& q : sos) section_filt(q, ext);
  std::reverse(ext.begin(), ext.end());

  return {ext.begin() + std::ptrdiff_t(padlen),
          ext.begin() + std::ptrdiff_t(padlen + n)};
}

UniformStream butterworth_lowpass(const UniformStream& stream,
                                  double cutoff_hz, int order) {
  if (stream.samples == 0) throw input_error("input error: empty stream");
  auto sos = butter_lowpass_sos(cutoff_hz, stream.rate_hz, order);
  UniformStream out = stream;
  for (std::size_t c = 0; c < out.channels; ++c) {
    std::vector<double> ch(out.values.begin() + std::ptrdiff_t(c * out.samples),
                           out.values.begin() +
                               std::ptrdiff_t((c + 1) * out.samples));
    std::vector<double> y = sosfiltfilt(sos, ch);
    std::copy(y.begin(), y.end(),
              out.values.begin() + std::ptrdiff_t(c * out.samples));
  }
  return out;
}

// ---------------------------------------------------------------------------

WindowDataset slide_windows(const UniformStream& stream,
                            const LabelTrack& labels, double win_s,
                            double step_s) {
  if (stream.samples == 0) throw input_error("input error: empty stream");
  const std::size_t win = std::size_t(std::llround(win_s * stream.rate_hz));
  const std::size_t step = std::size_t(std::llround(step_s * stream.rate_hz));
  if (win == 0 || step == 0)
    throw input_error("parameter error: window and step must be positive");

  WindowDataset ds;
  ds.channels = stream.channels;
  ds.win_len = win;
  if (stream.samples < win) {
    ds.short_input_warning = true;
    return ds;
  }

  // Per-sample labels on the uniform grid by the nearest-preceding rule.
  std::vector<int> sample_label(stream.samples);
  for (std::size_t s = 0; s < stream.samples; ++s)
    sample_label[s] = labels.at(stream.time_of(s));

  const std::size_t num = (stream.samples - win) / step + 1;
  ds.data.resize(num * stream.channels * win);
  ds.labels.resize(num);
  ds.prov.resize(num);
  for (std::size_t w = 0; w < num; ++w) {
    const std::size_t s0 = w * step;
    float* dst = ds.data.data() + w * stream.channels * win;
    for (std::size_t c = 0; c < stream.channels; ++c)
      for (std::size_t s = 0; s < win; ++s)
        dst[c * win + s] = float(stream.at(c, s0 + s));

    // Majority class over the window span; ties go to the lower class id.
    std::array<std::size_t, 5> votes{};
    for (std::size_t s = 0; s < win; ++s) {
      int cls = sample_label[s0 + s];
      if (cls < 1 || cls > 4)
        throw input_error("label out of range: " + std::to_string(cls));
      ++votes[std::size_t(cls)];
    }
    int best = 1;
    for (int cls = 2; cls <= 4; ++cls)
      if (votes[std::size_t(cls)] > votes[std::size_t(best)]) best = cls;
    ds.labels[w] = std::uint8_t(best);
    ds.prov[w].start_t = stream.time_of(s0);
  }
  return ds;
}

WindowDataset preprocess_session(const sim::SessionRecording& rec,
                                 WindowMode mode) {
  if (mode == WindowMode::generic)
    throw input_error("preprocess_session needs teacher or student mode");
  for (const auto& ch : rec.rssi)
    if (ch.t.size() < 2) throw input_error("input error: empty RSSI channel");
  if (rec.us.t.size() < 2) throw input_error("input error: empty ultrasound");
  if (rec.labels.empty()) throw input_error("input error: empty label timeline");

  constexpr double kRate = 50.0;

  // Common span covered by every channel.
  double t0 = rec.us.t.front(), t1 = rec.us.t.back();
  for (const auto& ch : rec.rssi) {
    t0 = std::max(t0, ch.t.front());
    t1 = std::min(t1, ch.t.back());
  }
  if (t1 <= t0) throw input_error("input error: channels do not overlap");

  UniformStream stacked;
  stacked.rate_hz = kRate;
  stacked.start_t = t0;
  stacked.channels = 6;

  auto add_channel = [&](std::size_t idx, const UniformStream& ch) {
    if (stacked.samples == 0) {
      stacked.samples = ch.samples;
      stacked.values.resize(6 * ch.samples);
    }
    std::copy(ch.values.begin(), ch.values.end(),
              stacked.values.begin() + std::ptrdiff_t(idx * stacked.samples));
  };

  // RSSI path: per-session DC offset removal on the raw samples, then
  // resampling and the 3 Hz jitter-removal filter.
  for (std::size_t r = 0; r < 3; ++r) {
    sim::TimedSeries raw = rec.rssi[r];
    double mean =
        std::accumulate(raw.v.begin(), raw.v.end(), 0.0) / double(raw.v.size());
    for (double& v : raw.v) v -= mean;
    UniformStream ch = resample_uniform(raw, kRate, t0, t1);
    ch = butterworth_lowpass(ch, 3.0, 4);
    add_channel(r, ch);
  }

  // Ultrasound path: resampling, then the 10 Hz ringing-removal filter.
  const std::vector<const std::vector<double>*> axes = {&rec.us.x, &rec.us.y,
                                                        &rec.us.z};
  for (std::size_t a = 0; a < 3; ++a) {
    sim::TimedSeries raw{rec.us.t, *axes[a]};
    UniformStream ch = resample_uniform(raw, kRate, t0, t1);
    ch = butterworth_lowpass(ch, 10.0, 4);
    add_channel(3 + a, ch);
  }

  LabelTrack track;
  for (const auto& e : rec.labels) {
    track.t.push_back(e.t);
    track.c.push_back(e.c);
  }

  WindowDataset ds = slide_windows(stacked, track, 2.0, 0.5);
  ds.mode = WindowMode::teacher;
  for (auto& p : ds.prov) {
    p.participant = rec.participant_id;
    p.session = rec.session_id;
  }
  if (mode == WindowMode::student)
    return ds.channel_slice(3, WindowMode::student);
  return ds;
}

}  // namespace kdpos::signal
