#include "hvts/data.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>

#include "binio.hpp"
#include "hvts/rng.hpp"
#include "hvts/spectral.hpp"

namespace hvts::data {

using binio::put_f32;
using binio::put_u32;

namespace {

constexpr char kMagic[4] = {'H', 'V', 'S', 'G'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

Tensor4 segment_to_tensor(const SegmentTensor& seg) {
  Tensor4 out(1, 1, seg.channels, seg.samples);
  for (int c = 0; c < seg.channels; ++c)
    for (int t = 0; t < seg.samples; ++t) out.at(0, 0, c, t) = seg.at(c, t);
  return out;
}

void write_segments(const std::string& path, const std::vector<SegmentTensor>& segments) {
  if (segments.empty()) {
    throw Error(ErrorCategory::Input, "write_segments: no segments");
  }
  const int c0 = segments.front().channels;
  for (const auto& s : segments) {
    if (s.channels != c0) {
      throw Error(ErrorCategory::Input,
                  "write_segments: mixed channel counts (" + std::to_string(c0) + " vs " +
                      std::to_string(s.channels) + ")");
    }
    if (s.channels <= 0 || s.samples <= 0 ||
        s.data.size() != static_cast<std::size_t>(s.channels) * s.samples) {
      throw Error(ErrorCategory::Input, "write_segments: segment shape inconsistent with data");
    }
  }
  std::string bytes;
  bytes.append(kMagic, 4);
  put_u32(bytes, kVersion);
  put_u32(bytes, static_cast<std::uint32_t>(segments.size()));
  for (const auto& s : segments) {
    put_u32(bytes, static_cast<std::uint32_t>(s.channels));
    put_u32(bytes, static_cast<std::uint32_t>(s.samples));
    put_f32(bytes, s.fs);
    put_u32(bytes, s.label);
    put_u32(bytes, s.subject);
    put_u32(bytes, s.repetition);
    for (float v : s.data) put_f32(bytes, v);
  }
  binio::spew(path, bytes);
}

std::vector<SegmentTensor> read_segments(const std::string& path) {
  const std::string bytes = binio::slurp(path);
  binio::Reader r(bytes, path);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) {
    throw Error(ErrorCategory::Input, path + ": not a segment container (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw Error(ErrorCategory::Input,
                path + ": unsupported container version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("segment count");
  std::vector<SegmentTensor> segments;
  segments.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    SegmentTensor s;
    s.channels = static_cast<int>(r.u32("channel count"));
    s.samples = static_cast<int>(r.u32("sample count"));
    if (s.channels <= 0 || s.samples <= 0) {
      throw Error(ErrorCategory::Input, path + ": segment " + std::to_string(i) +
                                            " has non-positive dims at byte " +
                                            std::to_string(r.pos() - 8));
    }
    if (!segments.empty() && s.channels != segments.front().channels) {
      throw Error(ErrorCategory::Input, path + ": segment " + std::to_string(i) +
                                            " channel count " + std::to_string(s.channels) +
                                            " differs from " +
                                            std::to_string(segments.front().channels));
    }
    s.fs = r.f32("sampling rate");
    s.label = r.u32("label");
    s.subject = r.u32("subject");
    s.repetition = r.u32("repetition");
    const std::size_t n = static_cast<std::size_t>(s.channels) * s.samples;
    s.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) s.data[k] = r.f32("samples");
    segments.push_back(std::move(s));
  }
  return segments;
}

std::vector<SegmentTensor> synth_dataset(const SynthConfig& cfg) {
  if (cfg.n_segments <= 0 || cfg.channels <= 0 || cfg.samples < 4 || cfg.fs <= 0.0) {
    throw Error(ErrorCategory::Numerical, "synth_dataset: invalid geometry");
  }
  if (cfg.spectral_slope < 0.0 || cfg.n_labels <= 0) {
    throw Error(ErrorCategory::Numerical, "synth_dataset: invalid shaping parameters");
  }
  const int t = cfg.samples;
  const int bins = t / 2 + 1;
  const double df = cfg.fs / t;

  // Target amplitude per bin; bin 0 stays empty so segments are zero-mean.
  std::vector<double> amp(bins, 0.0);
  for (int k = 1; k < bins; ++k) {
    const double f = k * df;
    double a = std::pow(1.0 / std::max(f, 1.0), 0.5 * cfg.spectral_slope);
    const double da = f - cfg.alpha_freq;
    const double db = f - cfg.beta_freq;
    a += cfg.alpha_gain * std::exp(-da * da / (2.0 * cfg.alpha_width * cfg.alpha_width));
    a += cfg.beta_gain * std::exp(-db * db / (2.0 * cfg.beta_width * cfg.beta_width));
    a += cfg.noise_floor;
    amp[k] = cfg.amplitude * a;
  }

  Rng rng(cfg.seed);
  std::vector<SegmentTensor> segments;
  segments.reserve(cfg.n_segments);
  const double inv_sqrt2 = 0.7071067811865475244;
  for (int i = 0; i < cfg.n_segments; ++i) {
    SegmentTensor seg;
    seg.channels = cfg.channels;
    seg.samples = t;
    seg.fs = static_cast<float>(cfg.fs);
    seg.label = static_cast<std::uint32_t>(i % cfg.n_labels);
    seg.subject = 1;
    seg.repetition = static_cast<std::uint32_t>(i);
    seg.data.resize(static_cast<std::size_t>(cfg.channels) * t);
    for (int c = 0; c < cfg.channels; ++c) {
      std::vector<std::complex<double>> spec(bins, 0.0);
      for (int k = 1; k < bins; ++k) {
        if (t % 2 == 0 && k == bins - 1) {
          spec[k] = amp[k] * rng.normal();  // Nyquist bin must stay real
        } else {
          spec[k] = amp[k] * std::complex<double>(rng.normal(), rng.normal()) * inv_sqrt2;
        }
      }
      const std::vector<double> x = spectral::irfft(spec, t);
      // irfft's 1/n scaling would shrink everything; undo it so the series
      // amplitude tracks cfg.amplitude rather than the segment length.
      const double rescale = std::sqrt(static_cast<double>(t));
      for (int s = 0; s < t; ++s)
        seg.at(c, s) = static_cast<float>(x[s] * rescale);
    }
    segments.push_back(std::move(seg));
  }
  return segments;
}

namespace {

std::vector<int> resolve_channels(const SegmentTensor& seg, const std::vector<int>& channels) {
  std::vector<int> out;
  if (channels.empty()) {
    out.resize(seg.channels);
    for (int c = 0; c < seg.channels; ++c) out[c] = c;
    return out;
  }
  for (int c : channels) {
    if (c < 0 || c >= seg.channels) {
      throw Error(ErrorCategory::Shape,
                  "injector: channel " + std::to_string(c) + " out of range");
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace

void inject_saturation(SegmentTensor& seg, int start, int duration, double rail,
                       const std::vector<int>& channels) {
  if (start < 0 || duration <= 0 || start + duration > seg.samples) {
    throw Error(ErrorCategory::Shape, "inject_saturation: window [" + std::to_string(start) +
                                          "," + std::to_string(start + duration) +
                                          ") outside segment of " +
                                          std::to_string(seg.samples) + " samples");
  }
  if (rail <= 0.0) {
    throw Error(ErrorCategory::Numerical, "inject_saturation: rail must be positive");
  }
  const float hi = static_cast<float>(rail);
  for (int c : resolve_channels(seg, channels)) {
    for (int s = start; s < start + duration; ++s) {
      seg.at(c, s) = std::clamp(seg.at(c, s), -hi, hi);
    }
  }
}

void inject_line_noise(SegmentTensor& seg, double freq, double amplitude,
                       const std::vector<int>& channels) {
  if (freq <= 0.0 || freq >= seg.fs / 2.0) {
    throw Error(ErrorCategory::Numerical, "inject_line_noise: frequency outside (0, fs/2)");
  }
  if (amplitude < 0.0) {
    throw Error(ErrorCategory::Numerical, "inject_line_noise: negative amplitude");
  }
  const double w = 2.0 * 3.14159265358979323846 * freq / seg.fs;
  for (int c : resolve_channels(seg, channels)) {
    for (int s = 0; s < seg.samples; ++s) {
      seg.at(c, s) += static_cast<float>(amplitude * std::sin(w * s));
    }
  }
}

void inject_muscle(SegmentTensor& seg, double band_lo, double band_hi, double gain,
                   std::uint64_t seed, const std::vector<int>& channels) {
  const double nyquist = seg.fs / 2.0;
  band_hi = std::min(band_hi, nyquist);
  if (band_lo < 0.0 || band_lo >= band_hi) {
    throw Error(ErrorCategory::Numerical, "inject_muscle: empty band after clamping to fs/2");
  }
  if (gain < 0.0) {
    throw Error(ErrorCategory::Numerical, "inject_muscle: negative gain");
  }
  const int t = seg.samples;
  const int bins = t / 2 + 1;
  const double df = seg.fs / t;
  Rng rng(seed);
  for (int c : resolve_channels(seg, channels)) {
    std::vector<std::complex<double>> spec(bins, 0.0);
    for (int k = 1; k < bins; ++k) {
      const double f = k * df;
      if (f < band_lo || f > band_hi) continue;
      if (t % 2 == 0 && k == bins - 1) {
        spec[k] = rng.normal();
      } else {
        spec[k] = std::complex<double>(rng.normal(), rng.normal());
      }
    }
    std::vector<double> noise = spectral::irfft(spec, t);
    double rms = 0.0;
    for (double v : noise) rms += v * v;
    rms = std::sqrt(rms / t);
    if (rms == 0.0) continue;
    const double s = gain / rms;
    for (int k = 0; k < t; ++k) seg.at(c, k) += static_cast<float>(noise[k] * s);
  }
}

DatasetSplit split(const std::vector<SegmentTensor>& segments, double train_frac,
                   double val_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0) || val_frac < 0.0 || val_frac >= 1.0) {
    throw Error(ErrorCategory::Numerical, "split: fractions out of range");
  }
  std::map<std::uint32_t, std::vector<int>> by_label;
  for (int i = 0; i < static_cast<int>(segments.size()); ++i) {
    by_label[segments[i].label].push_back(i);
  }
  Rng rng(seed);
  DatasetSplit out;
  for (auto& [label, idx] : by_label) {
    const int n = static_cast<int>(idx.size());
    const int n_pool = static_cast<int>(std::floor(n * train_frac));
    if (n_pool < 1 || n - n_pool < 1) {
      throw Error(ErrorCategory::Input,
                  "split: label " + std::to_string(label) + " has too few segments (" +
                      std::to_string(n) + ") for stratification");
    }
    shuffle(idx, rng);
    const int n_val = static_cast<int>(std::floor(n_pool * val_frac));
    for (int i = 0; i < n_pool - n_val; ++i) out.train.push_back(idx[i]);
    for (int i = n_pool - n_val; i < n_pool; ++i) out.val.push_back(idx[i]);
    for (int i = n_pool; i < n; ++i) out.test.push_back(idx[i]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace hvts::data
