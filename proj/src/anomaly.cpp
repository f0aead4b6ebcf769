#include "hvts/anomaly.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "hvts/error.hpp"

namespace hvts::anomaly {

namespace {

// Ignores differences smaller than rounding noise on [0,1]-normalized curves
// so linear inputs do not produce a spurious knee.
constexpr double kFlatTolerance = 1e-9;

}  // namespace

std::vector<double> k_distances(const metrics::ErrorMatrix& m, int k) {
  if (k < 1) throw Error(ErrorCategory::Usage, "k must be >= 1");
  if (m.rows <= k) {
    throw Error(ErrorCategory::Input, "need more than k=" + std::to_string(k) +
                                          " repetitions, got " + std::to_string(m.rows));
  }
  std::vector<double> out(m.rows, 0.0);
  std::vector<double> dist;
  for (int r = 0; r < m.rows; ++r) {
    dist.clear();
    for (int s = 0; s < m.rows; ++s) {
      if (s == r) continue;
      double d2 = 0.0;
      for (int c = 0; c < m.cols; ++c) {
        const double d = m.at(r, c) - m.at(s, c);
        d2 += d * d;
      }
      dist.push_back(std::sqrt(d2));
    }
    // k-th smallest value; ties in distance cannot change it.
    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    out[r] = dist[k - 1];
  }
  return out;
}

int scaled_k(int rows) { return std::max(3, rows / 20); }

std::optional<Knee> kneedle(const std::vector<double>& xs, const std::vector<double>& ys,
                            Orientation orientation) {
  if (xs.size() != ys.size()) throw Error(ErrorCategory::Shape, "x/y length mismatch");
  const int n = static_cast<int>(xs.size());
  if (n < 3) throw Error(ErrorCategory::Usage, "knee detection needs at least 3 points");
  for (int i = 1; i < n; ++i) {
    if (!(xs[i] > xs[i - 1])) {
      throw Error(ErrorCategory::Input, "knee detection needs strictly increasing x");
    }
  }
  const double x0 = xs.front(), x_span = xs.back() - xs.front();
  const auto [y_min_it, y_max_it] = std::minmax_element(ys.begin(), ys.end());
  const double y_min = *y_min_it, y_span = *y_max_it - *y_min_it;
  if (y_span <= 0.0) return std::nullopt;  // flat curve

  int best = -1;
  double best_d = kFlatTolerance;
  for (int i = 0; i < n; ++i) {
    const double x_norm = (xs[i] - x0) / x_span;
    double y_norm = (ys[i] - y_min) / y_span;
    if (orientation == Orientation::ConvexDecreasing) y_norm = 1.0 - y_norm;
    const double d = y_norm - x_norm;
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best < 0) return std::nullopt;  // linear within tolerance
  return Knee{best, xs[best], ys[best]};
}

OutlierReport detect_outliers(const metrics::ErrorMatrix& m, int k) {
  OutlierReport report;
  report.k = k;
  report.k_distance = k_distances(m, k);

  std::vector<double> sorted = report.k_distance;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> xs(sorted.size());
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i);
  const std::optional<Knee> knee = kneedle(xs, sorted, Orientation::ConcaveIncreasing);
  if (!knee) return report;

  report.knee_found = true;
  report.knee_index = knee->index;
  report.threshold = knee->y;
  for (int r = 0; r < m.rows; ++r) {
    if (report.k_distance[r] >= report.threshold) report.flagged.push_back(r);
  }
  std::sort(report.flagged.begin(), report.flagged.end(), [&](int a, int b) {
    if (report.k_distance[a] != report.k_distance[b]) {
      return report.k_distance[a] > report.k_distance[b];
    }
    return a < b;
  });
  return report;
}

TransitionReport transition_point(const std::vector<int>& checkpoint_epochs,
                                  const std::vector<double>& mean_error,
                                  const std::vector<int>& outlier_counts) {
  if (checkpoint_epochs.size() != mean_error.size()) {
    throw Error(ErrorCategory::Shape, "checkpoint epochs and errors differ in length");
  }
  if (!outlier_counts.empty() && outlier_counts.size() != mean_error.size()) {
    throw Error(ErrorCategory::Shape, "outlier counts differ in length");
  }
  TransitionReport report;
  report.checkpoint_epochs = checkpoint_epochs;
  report.mean_error = mean_error;
  report.outlier_counts = outlier_counts;
  std::vector<double> xs(checkpoint_epochs.begin(), checkpoint_epochs.end());
  const std::optional<Knee> knee = kneedle(xs, mean_error, Orientation::ConvexDecreasing);
  if (knee) report.epoch = checkpoint_epochs[knee->index];
  return report;
}

std::string to_json(const OutlierReport& report) {
  nlohmann::json j;
  j["flagged"] = report.flagged;
  j["k"] = report.k;
  j["k_distance"] = report.k_distance;
  j["knee_found"] = report.knee_found;
  j["knee_index"] = report.knee_index;
  j["sensitivity"] = report.sensitivity;
  j["threshold"] = report.threshold;
  return j.dump(2) + "\n";
}

std::string to_table(const OutlierReport& report) {
  std::string out = "repetition\tk_distance\tflagged\n";
  for (std::size_t r = 0; r < report.k_distance.size(); ++r) {
    const bool hit = std::find(report.flagged.begin(), report.flagged.end(),
                               static_cast<int>(r)) != report.flagged.end();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", report.k_distance[r]);
    out += std::to_string(r) + "\t" + buf + "\t" + (hit ? "1" : "0") + "\n";
  }
  return out;
}

}  // namespace hvts::anomaly
