#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvts/tensor.hpp"

namespace hvts::data {

// One multichannel recording segment.  Samples are stored as float32 row-major
// (channel-major), matching the on-disk container exactly so write/read
// round-trips are bitwise.
struct SegmentTensor {
  int channels = 0;
  int samples = 0;
  float fs = 0.0f;
  std::uint32_t label = 0;
  std::uint32_t subject = 0;
  std::uint32_t repetition = 0;
  std::vector<float> data;  // channels x samples

  float& at(int c, int t) { return data[static_cast<std::size_t>(c) * samples + t]; }
  float at(int c, int t) const { return data[static_cast<std::size_t>(c) * samples + t]; }

  std::vector<double> channel(int c) const {
    std::vector<double> out(samples);
    for (int t = 0; t < samples; ++t) out[t] = at(c, t);
    return out;
  }
};

// Converts a segment to the (1, 1, C, T) layout the models consume.
Tensor4 segment_to_tensor(const SegmentTensor& seg);

// -- container ---------------------------------------------------------

// Binary segment container: magic "HVSG", u32 version, u32 segment count,
// then per segment u32 C, u32 T, f32 fs, u32 label, u32 subject,
// u32 repetition followed by C*T little-endian f32 samples.  All segments in
// one file must share the channel count.
void write_segments(const std::string& path, const std::vector<SegmentTensor>& segments);
std::vector<SegmentTensor> read_segments(const std::string& path);

// -- synthetic data ----------------------------------------------------

// Frequency-domain shaping of white Gaussian noise: 1/f^(slope/2) amplitude
// profile plus Gaussian alpha/beta bumps, independent phases per channel.
struct SynthConfig {
  int n_segments = 64;
  int channels = 8;
  int samples = 256;
  double fs = 128.0;
  double spectral_slope = 1.0;  // power falls off as 1/f^slope
  double alpha_freq = 10.0;
  double alpha_width = 1.5;
  double alpha_gain = 4.0;
  double beta_freq = 20.0;
  double beta_width = 3.0;
  double beta_gain = 1.5;
  double noise_floor = 0.02;
  double amplitude = 10.0;  // overall scale, microvolts
  int n_labels = 4;
  std::uint64_t seed = 1;
};

std::vector<SegmentTensor> synth_dataset(const SynthConfig& cfg);

// -- artifact injectors ------------------------------------------------
// An empty channel list means all channels.

// Clips [start, start+duration) to +-rail, simulating amplifier saturation.
void inject_saturation(SegmentTensor& seg, int start, int duration, double rail,
                       const std::vector<int>& channels = {});

// Adds a fixed-phase sinusoid (mains interference).
void inject_line_noise(SegmentTensor& seg, double freq, double amplitude,
                       const std::vector<int>& channels = {});

// Adds band-limited Gaussian noise with unit RMS scaled by gain (muscle
// activity).  The band is clamped to the representable range.
void inject_muscle(SegmentTensor& seg, double band_lo, double band_hi, double gain,
                   std::uint64_t seed, const std::vector<int>& channels = {});

// -- splitting ---------------------------------------------------------

struct DatasetSplit {
  std::vector<int> train, val, test;  // indices into the segment vector
};

// Label-stratified split.  Per label: floor(n * train_frac) segments form the
// training pool, the rest are test; floor(pool * val_frac) of the pool move
// to validation.  Every label must land at least one segment on each side of
// the train/test boundary.
DatasetSplit split(const std::vector<SegmentTensor>& segments, double train_frac,
                   double val_frac, std::uint64_t seed);

}  // namespace hvts::data
