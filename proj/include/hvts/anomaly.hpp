#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hvts/metrics.hpp"

namespace hvts::anomaly {

// Euclidean distance from each row of the error matrix (one repetition,
// C-dimensional) to its k-th nearest other row.  Requires rows > k >= 1.
std::vector<double> k_distances(const metrics::ErrorMatrix& m, int k = 15);

// Dataset-scaled neighbour count: rows / 20, never below 3.
int scaled_k(int rows);

// Curve orientations the knee finder understands.  ConcaveIncreasing fits a
// sorted ascending k-distance curve; ConvexDecreasing fits a loss curve that
// drops steeply and then plateaus.
enum class Orientation { ConcaveIncreasing, ConvexDecreasing };

struct Knee {
  int index = 0;  // position in the curve as given
  double x = 0.0;
  double y = 0.0;
};

// Kneedle on a short curve: normalize both axes to [0, 1], orient to concave
// increasing, take the difference curve d = y_norm - x_norm and place the
// knee at its maximum (sensitivity S = 1.0, no smoothing -- the curves here
// are short).  Flat or perfectly linear curves have no knee.
std::optional<Knee> kneedle(const std::vector<double>& xs, const std::vector<double>& ys,
                            Orientation orientation);

struct OutlierReport {
  // Repetition indices with k-distance at or above the threshold, ordered by
  // descending k-distance (ties by ascending index).  The knee point itself
  // is flagged: it is the first point of the anomalous regime.
  std::vector<int> flagged;
  std::vector<double> k_distance;  // per repetition, original row order
  int k = 0;
  bool knee_found = false;
  double threshold = 0.0;  // k-distance at the knee; 0 when no knee
  int knee_index = -1;     // position in the ascending sorted curve; -1 when none
  double sensitivity = 1.0;
};

// k_distances + knee threshold.  No knee (flat or linear curve) flags
// nothing.
OutlierReport detect_outliers(const metrics::ErrorMatrix& m, int k = 15);

// Knee of the mean-error-over-epochs curve (convex decreasing): the epoch
// where the steep descent hands over to the plateau.  The outlier counts per
// checkpoint ride along for operator review; they are not thresholded.
struct TransitionReport {
  std::optional<int> epoch;
  std::vector<int> checkpoint_epochs;
  std::vector<double> mean_error;
  std::vector<int> outlier_counts;
};

TransitionReport transition_point(const std::vector<int>& checkpoint_epochs,
                                  const std::vector<double>& mean_error,
                                  const std::vector<int>& outlier_counts);

std::string to_json(const OutlierReport& report);
std::string to_table(const OutlierReport& report);

}  // namespace hvts::anomaly
