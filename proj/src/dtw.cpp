#include "hvts/dtw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hvts/error.hpp"

namespace hvts::dtw {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double ground_cost(double x, double y, Cost cost) {
  const double d = x - y;
  return cost == Cost::Abs ? std::fabs(d) : d * d;
}

void check_series(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) {
    throw Error(ErrorCategory::Shape, "dtw: empty series");
  }
}

}  // namespace

DtwResult dtw(const std::vector<double>& a, const std::vector<double>& b, int band) {
  check_series(a, b);
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  if (band >= 0 && std::abs(n - m) > band) {
    throw Error(ErrorCategory::Numerical, "dtw: band " + std::to_string(band) +
                                              " admits no path for lengths " + std::to_string(n) +
                                              "," + std::to_string(m));
  }
  auto idx = [m](int i, int j) { return static_cast<std::size_t>(i) * m + j; };
  std::vector<double> w(static_cast<std::size_t>(n) * m, kInf);
  for (int i = 0; i < n; ++i) {
    const int jlo = band >= 0 ? std::max(0, i - band) : 0;
    const int jhi = band >= 0 ? std::min(m - 1, i + band) : m - 1;
    for (int j = jlo; j <= jhi; ++j) {
      const double c = std::fabs(a[i] - b[j]);
      if (i == 0 && j == 0) {
        w[idx(i, j)] = c;
        continue;
      }
      const double diag = (i > 0 && j > 0) ? w[idx(i - 1, j - 1)] : kInf;
      const double left = j > 0 ? w[idx(i, j - 1)] : kInf;
      const double down = i > 0 ? w[idx(i - 1, j)] : kInf;
      w[idx(i, j)] = c + std::min(diag, std::min(left, down));
    }
  }

  DtwResult res;
  res.raw_score = w[idx(n - 1, m - 1)];

  // Backtracking; ties resolved diagonal first, then (i, j-1), then (i-1, j).
  int i = n - 1, j = m - 1;
  res.path.emplace_back(i + 1, j + 1);
  while (i > 0 || j > 0) {
    const double diag = (i > 0 && j > 0) ? w[idx(i - 1, j - 1)] : kInf;
    const double left = j > 0 ? w[idx(i, j - 1)] : kInf;
    const double down = i > 0 ? w[idx(i - 1, j)] : kInf;
    if (diag <= left && diag <= down) {
      --i;
      --j;
    } else if (left <= down) {
      --j;
    } else {
      --i;
    }
    res.path.emplace_back(i + 1, j + 1);
  }
  std::reverse(res.path.begin(), res.path.end());
  res.normalized_score = res.raw_score / static_cast<double>(res.path.size());
  return res;
}

namespace {

// Forward pass shared by value and gradient computation.  R has a one-cell
// border: R[0][0] = 0 and the rest of row/column 0 at +inf.  For each inner
// cell the three softmin weights (diag, up, left) are stored so the backward
// sweep needs no further transcendentals.
struct SoftForward {
  int n = 0, m = 0;
  std::vector<double> r;           // (n+1) x (m+1)
  std::vector<double> wd, wu, wl;  // weights per inner cell, (n+1) x (m+1)

  std::size_t at(int i, int j) const { return static_cast<std::size_t>(i) * (m + 1) + j; }
};

SoftForward soft_forward(const std::vector<double>& a, const std::vector<double>& b, double gamma,
                         Cost cost) {
  check_series(a, b);
  if (!(gamma > 0.0)) {
    throw Error(ErrorCategory::Numerical, "soft_dtw: gamma must be positive");
  }
  SoftForward f;
  f.n = static_cast<int>(a.size());
  f.m = static_cast<int>(b.size());
  const std::size_t cells = static_cast<std::size_t>(f.n + 1) * (f.m + 1);
  f.r.assign(cells, kInf);
  f.wd.assign(cells, 0.0);
  f.wu.assign(cells, 0.0);
  f.wl.assign(cells, 0.0);
  f.r[f.at(0, 0)] = 0.0;
  const double inv_gamma = 1.0 / gamma;
  for (int i = 1; i <= f.n; ++i) {
    for (int j = 1; j <= f.m; ++j) {
      const double vd = f.r[f.at(i - 1, j - 1)];
      const double vu = f.r[f.at(i - 1, j)];
      const double vl = f.r[f.at(i, j - 1)];
      const double lo = std::min(vd, std::min(vu, vl));
      const double ed = std::exp(-(vd - lo) * inv_gamma);
      const double eu = std::exp(-(vu - lo) * inv_gamma);
      const double el = std::exp(-(vl - lo) * inv_gamma);
      const double sum = ed + eu + el;
      const std::size_t c = f.at(i, j);
      f.wd[c] = ed / sum;
      f.wu[c] = eu / sum;
      f.wl[c] = el / sum;
      f.r[c] = ground_cost(a[i - 1], b[j - 1], cost) + lo - gamma * std::log(sum);
    }
  }
  return f;
}

}  // namespace

double soft_dtw(const std::vector<double>& a, const std::vector<double>& b, double gamma,
                Cost cost) {
  const SoftForward f = soft_forward(a, b, gamma, cost);
  return f.r[f.at(f.n, f.m)];
}

SoftDtwResult soft_dtw_grad(const std::vector<double>& a, const std::vector<double>& b,
                            double gamma, Cost cost) {
  const SoftForward f = soft_forward(a, b, gamma, cost);
  const int n = f.n, m = f.m;

  // E(i,j) = d loss / d R(i,j), accumulated from the cells R(i,j) feeds.
  std::vector<double> e(static_cast<std::size_t>(n + 1) * (m + 1), 0.0);
  auto at = [m](int i, int j) { return static_cast<std::size_t>(i) * (m + 1) + j; };
  e[at(n, m)] = 1.0;
  for (int i = n; i >= 1; --i) {
    for (int j = m; j >= 1; --j) {
      if (i == n && j == m) continue;
      double acc = 0.0;
      if (i + 1 <= n && j + 1 <= m) acc += e[at(i + 1, j + 1)] * f.wd[at(i + 1, j + 1)];
      if (i + 1 <= n) acc += e[at(i + 1, j)] * f.wu[at(i + 1, j)];
      if (j + 1 <= m) acc += e[at(i, j + 1)] * f.wl[at(i, j + 1)];
      e[at(i, j)] = acc;
    }
  }

  SoftDtwResult res;
  res.value = f.r[at(n, m)];
  res.grad_a.assign(n, 0.0);
  for (int i = 1; i <= n; ++i) {
    double acc = 0.0;
    for (int j = 1; j <= m; ++j) {
      const double diff = a[i - 1] - b[j - 1];
      const double dcost = cost == Cost::Squared ? 2.0 * diff : (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0));
      acc += e[at(i, j)] * dcost;
    }
    res.grad_a[i - 1] = acc;
  }
  return res;
}

double multichannel_loss(const std::vector<std::vector<double>>& x,
                         const std::vector<std::vector<double>>& y, double gamma, Cost cost) {
  if (x.size() != y.size()) {
    throw Error(ErrorCategory::Shape, "multichannel_loss: channel counts differ");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < x.size(); ++c) {
    total += soft_dtw(x[c], y[c], gamma, cost);
  }
  return total;
}

}  // namespace hvts::dtw
