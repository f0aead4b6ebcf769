#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hvts/data.hpp"
#include "hvts/model.hpp"

namespace hvts::metrics {

// Per-repetition, per-channel normalized DTW between each segment and its
// reconstruction.
struct ErrorMatrix {
  int rows = 0;  // repetitions
  int cols = 0;  // channels
  std::vector<double> values;           // row-major, all >= 0
  std::vector<std::string> row_labels;  // repetition ids
  std::vector<std::string> col_labels;  // channel names
  std::string provenance;               // run id, or "averaged"

  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

// Noise handling for scored reconstructions: Zero decodes the posterior
// means (deterministic), Sampled draws the reparameterisation noise from
// sample_seed.
enum class EpsMode { Zero, Sampled };

struct ScoreOptions {
  EpsMode eps = EpsMode::Zero;
  std::uint64_t sample_seed = 0;
  // Which latent levels contribute to the decode; defaults to the variant's
  // full mode.
  std::optional<models::DecodeMode> decode;
  std::string provenance;
  int batch_size = 30;
};

ErrorMatrix error_matrix(models::Model& model, const std::vector<data::SegmentTensor>& segments,
                         const ScoreOptions& opts = {});

// Element-wise mean.  Cell sums are accumulated in value order, so the
// result is exactly invariant to permuting the input matrices.
ErrorMatrix average_error(const std::vector<ErrorMatrix>& matrices);

// Summary convention: mean is the grand mean over all entries; std is the
// population standard deviation of the per-channel means (each channel
// averaged over repetitions).  The naive all-entries std is also exposed.
struct SubjectSummary {
  double mean = 0.0;
  double std_channel_means = 0.0;
  double std_all_entries = 0.0;
};

SubjectSummary subject_summary(const ErrorMatrix& m);

// One-sided power spectral density.  Density scaling: power per Hz, so the
// estimate integrates to the series variance; DC and Nyquist bins are not
// doubled.
struct PsdEstimate {
  std::vector<double> frequencies;  // 0 .. fs/2
  std::vector<double> power;
  double fs = 0.0;
  int window_len = 0;  // effective window (shortened when the series is)
  int overlap = 0;
  int n_windows = 0;
  // Series shorter than the requested window: the estimate degrades to a
  // single tapered periodogram over the whole series.
  bool short_series = false;
};

// Welch's method with a periodic Hann taper and no detrending.
PsdEstimate welch_psd(const std::vector<double>& series, double fs, int window_len = 500,
                      int overlap = 250);

// Tab-separated tables with a header row; doubles are emitted with
// round-trip precision so exports are bitwise reproducible.
std::string to_table(const ErrorMatrix& m);
std::string to_table(const PsdEstimate& p);

// Parses a table produced by to_table(ErrorMatrix).
ErrorMatrix matrix_from_table(const std::string& text);

}  // namespace hvts::metrics
