#include "hvts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <tuple>
#include <utility>

#include "hvts/dtw.hpp"
#include "hvts/error.hpp"
#include "hvts/spectral.hpp"

namespace hvts::metrics {

namespace {

std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::pair<double, double> population_mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(xs.size());
  return {mean, std::sqrt(var)};
}

}  // namespace

ErrorMatrix error_matrix(models::Model& model, const std::vector<data::SegmentTensor>& segments,
                         const ScoreOptions& opts) {
  if (segments.empty()) throw Error(ErrorCategory::Input, "no segments to score");
  if (opts.batch_size < 1) throw Error(ErrorCategory::Usage, "batch size must be >= 1");
  const models::DecodeMode mode =
      opts.decode.value_or(model.spec().variant == models::Variant::Hv
                               ? models::DecodeMode::WithZ3
                               : models::DecodeMode::FromZ1);
  const int channels = segments[0].channels;
  const int samples = segments[0].samples;

  ErrorMatrix m;
  m.rows = static_cast<int>(segments.size());
  m.cols = channels;
  m.values.assign(static_cast<std::size_t>(m.rows) * m.cols, 0.0);
  for (const data::SegmentTensor& seg : segments) {
    m.row_labels.push_back(std::to_string(seg.repetition));
  }
  for (int c = 0; c < channels; ++c) m.col_labels.push_back("ch" + std::to_string(c));
  m.provenance = opts.provenance;

  Rng rng(opts.sample_seed);
  Rng* rng_ptr = opts.eps == EpsMode::Sampled ? &rng : nullptr;
  for (int from = 0; from < m.rows;) {
    const int to = std::min(m.rows, from + opts.batch_size);
    Tensor4 batch(to - from, 1, channels, samples);
    for (int i = from; i < to; ++i) {
      const data::SegmentTensor& seg = segments[i];
      if (seg.channels != channels || seg.samples != samples) {
        throw Error(ErrorCategory::Shape, "segments differ in shape across the dataset");
      }
      for (int c = 0; c < channels; ++c) {
        for (int t = 0; t < samples; ++t) batch.at(i - from, 0, c, t) = seg.at(c, t);
      }
    }
    const Tensor4 recon =
        model.run(batch, grad::Phase::Eval, rng_ptr, mode, false, false).reconstruction;
    for (int i = from; i < to; ++i) {
      for (int c = 0; c < channels; ++c) {
        std::vector<double> rec(samples);
        for (int t = 0; t < samples; ++t) rec[t] = recon.at(i - from, 0, c, t);
        m.at(i, c) = dtw::dtw(segments[i].channel(c), rec).normalized_score;
      }
    }
    from = to;
  }
  return m;
}

ErrorMatrix average_error(const std::vector<ErrorMatrix>& matrices) {
  if (matrices.empty()) throw Error(ErrorCategory::Input, "no matrices to average");
  const ErrorMatrix& first = matrices[0];
  for (const ErrorMatrix& m : matrices) {
    if (m.rows != first.rows || m.cols != first.cols) {
      throw Error(ErrorCategory::Shape, "error matrices differ in shape");
    }
  }
  ErrorMatrix avg = first;
  avg.provenance = "averaged";
  std::vector<double> cell(matrices.size());
  for (std::size_t i = 0; i < avg.values.size(); ++i) {
    for (std::size_t k = 0; k < matrices.size(); ++k) cell[k] = matrices[k].values[i];
    std::sort(cell.begin(), cell.end());
    double sum = 0.0;
    for (double v : cell) sum += v;
    avg.values[i] = sum / static_cast<double>(matrices.size());
  }
  return avg;
}

SubjectSummary subject_summary(const ErrorMatrix& m) {
  if (m.rows < 1 || m.cols < 1) throw Error(ErrorCategory::Input, "empty error matrix");
  SubjectSummary s;
  std::vector<double> channel_means(m.cols, 0.0);
  for (int c = 0; c < m.cols; ++c) {
    for (int r = 0; r < m.rows; ++r) channel_means[c] += m.at(r, c);
    channel_means[c] /= m.rows;
  }
  std::tie(s.mean, s.std_all_entries) = population_mean_std(m.values);
  s.std_channel_means = population_mean_std(channel_means).second;
  return s;
}

PsdEstimate welch_psd(const std::vector<double>& series, double fs, int window_len,
                      int overlap) {
  if (series.empty()) throw Error(ErrorCategory::Input, "empty series");
  if (fs <= 0.0) throw Error(ErrorCategory::Usage, "sampling rate must be positive");
  if (window_len < 2) throw Error(ErrorCategory::Usage, "window must be >= 2 samples");
  if (overlap < 0 || overlap >= window_len) {
    throw Error(ErrorCategory::Usage, "overlap must be in [0, window)");
  }

  PsdEstimate est;
  est.fs = fs;
  est.overlap = overlap;
  const int t = static_cast<int>(series.size());
  int n = window_len;
  if (t < window_len) {
    // Not enough samples to tile windows: one tapered periodogram instead.
    est.short_series = true;
    n = t;
  }
  est.window_len = n;

  // Periodic Hann taper.
  std::vector<double> taper(n);
  double win_power = 0.0;
  for (int i = 0; i < n; ++i) {
    taper[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
    win_power += taper[i] * taper[i];
  }

  const int hop = est.short_series ? n : window_len - overlap;
  const int bins = n / 2 + 1;
  est.power.assign(bins, 0.0);
  std::vector<double> frame(n);
  for (int off = 0; off + n <= t; off += hop) {
    for (int i = 0; i < n; ++i) frame[i] = series[off + i] * taper[i];
    const std::vector<std::complex<double>> spec = spectral::rfft(frame);
    for (int k = 0; k < bins; ++k) est.power[k] += std::norm(spec[k]);
    ++est.n_windows;
    if (est.short_series) break;
  }
  const double scale = 1.0 / (fs * win_power * est.n_windows);
  for (int k = 0; k < bins; ++k) {
    est.power[k] *= scale;
    // One-sided density: double everything except DC and (for even n) Nyquist.
    if (k != 0 && !(n % 2 == 0 && k == bins - 1)) est.power[k] *= 2.0;
  }
  est.frequencies.resize(bins);
  for (int k = 0; k < bins; ++k) est.frequencies[k] = k * fs / n;
  return est;
}

std::string to_table(const ErrorMatrix& m) {
  std::string out = "repetition";
  for (const std::string& c : m.col_labels) out += "\t" + c;
  out += "\n";
  for (int r = 0; r < m.rows; ++r) {
    out += m.row_labels[r];
    for (int c = 0; c < m.cols; ++c) out += "\t" + g17(m.at(r, c));
    out += "\n";
  }
  return out;
}

ErrorMatrix matrix_from_table(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty()) throw Error(ErrorCategory::Input, "empty error-matrix table");

  auto fields = [](const std::string& line) {
    std::vector<std::string> out;
    std::size_t from = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', from);
      out.push_back(line.substr(from, tab - from));
      if (tab == std::string::npos) return out;
      from = tab + 1;
    }
  };

  const std::vector<std::string> header = fields(lines[0]);
  if (header.size() < 2 || header[0] != "repetition") {
    throw Error(ErrorCategory::Input, "error-matrix table must start with a 'repetition' header");
  }
  ErrorMatrix m;
  m.cols = static_cast<int>(header.size()) - 1;
  m.col_labels.assign(header.begin() + 1, header.end());
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::vector<std::string> row = fields(lines[r]);
    if (row.size() != header.size()) {
      throw Error(ErrorCategory::Input,
                  "table row " + std::to_string(r) + " has " + std::to_string(row.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    m.row_labels.push_back(row[0]);
    for (int c = 0; c < m.cols; ++c) {
      const std::string& cell = row[c + 1];
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0' || !std::isfinite(v) || v < 0.0) {
        throw Error(ErrorCategory::Input, "bad error value '" + cell + "' at row " +
                                              std::to_string(r) + " column " + std::to_string(c));
      }
      m.values.push_back(v);
    }
  }
  m.rows = static_cast<int>(m.row_labels.size());
  if (m.rows == 0) throw Error(ErrorCategory::Input, "error-matrix table has no data rows");
  return m;
}

std::string to_table(const PsdEstimate& p) {
  std::string out = "# welch hann window=" + std::to_string(p.window_len) +
                    " overlap=" + std::to_string(p.overlap) + " windows=" +
                    std::to_string(p.n_windows) + " fs=" + g17(p.fs) +
                    " scaling=density one-sided" +
                    std::string(p.short_series ? " short-series" : "") + "\n";
  out += "frequency_hz\tpower\n";
  for (std::size_t k = 0; k < p.frequencies.size(); ++k) {
    out += g17(p.frequencies[k]) + "\t" + g17(p.power[k]) + "\n";
  }
  return out;
}

}  // namespace hvts::metrics
