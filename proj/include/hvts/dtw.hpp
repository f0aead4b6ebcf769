#pragma once

#include <utility>
#include <vector>

namespace hvts::dtw {

// Ground cost between samples.  Squared is the default for the smooth loss;
// the classic alignment score uses Abs.
enum class Cost { Abs, Squared };

struct DtwResult {
  double raw_score = 0.0;         // minimum cumulative cost over warping paths
  double normalized_score = 0.0;  // raw_score / path length
  std::vector<std::pair<int, int>> path;  // 1-based (i, j), (1,1) .. (n,m)
};

// Classic dynamic time warping with absolute-difference cost.  Backtracking
// prefers the diagonal predecessor, then (i, j-1), then (i-1, j).  band < 0
// disables the Sakoe-Chiba constraint (default); band >= 0 restricts cells
// to |i - j| <= band.
DtwResult dtw(const std::vector<double>& a, const std::vector<double>& b, int band = -1);

// Smoothed alignment score: the min over paths is replaced by
// softmin_gamma(v) = -gamma * log(sum_k exp(-v_k / gamma)), gamma > 0.
double soft_dtw(const std::vector<double>& a, const std::vector<double>& b, double gamma,
                Cost cost = Cost::Squared);

struct SoftDtwResult {
  double value = 0.0;
  std::vector<double> grad_a;  // d value / d a
};

// Value and gradient with respect to the first series in one pass.
SoftDtwResult soft_dtw_grad(const std::vector<double>& a, const std::vector<double>& b,
                            double gamma, Cost cost = Cost::Squared);

// Sum of per-channel soft-DTW scores between two C x T series sets.  No
// normalisation by path length: the training loss is the plain channel sum.
double multichannel_loss(const std::vector<std::vector<double>>& x,
                         const std::vector<std::vector<double>>& y, double gamma,
                         Cost cost = Cost::Squared);

}  // namespace hvts::dtw
