#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "coordinet/errors.hpp"

namespace coordinet {

inline double mean(const std::vector<double>& v) {
  require(!v.empty(), ErrorCode::invalid_input, "mean of an empty set");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Median with the usual midpoint convention for even sizes.
inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorCode::invalid_input, "median of an empty set");
  const size_t n = v.size();
  const size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (n % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
  return 0.5 * (v[mid - 1] + hi);
}

// Fractional ranks (1-based) with ties receiving the average of their span.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;  // average 1-based rank
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

struct SpearmanResult {
  double rho = 0.0;
  bool defined = false;  // false when either side is constant (zero rank variance)
};

// Spearman rank correlation: Pearson correlation of average ranks. Constant
// inputs make the correlation undefined; that is reported via the flag, never
// as a crash or a NaN.
inline SpearmanResult spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorCode::invalid_input, "spearman needs aligned sequences");
  require(a.size() >= 2, ErrorCode::invalid_input, "spearman needs at least 2 points");
  const std::vector<double> ra = average_ranks(a);
  const std::vector<double> rb = average_ranks(b);
  const double ma = mean(ra), mb = mean(rb);
  double num = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - ma, db = rb[i] - mb;
    num += da * db;
    va += da * da;
    vb += db * db;
  }
  SpearmanResult out;
  if (va <= 0.0 || vb <= 0.0) return out;
  out.rho = num / std::sqrt(va * vb);
  out.defined = true;
  return out;
}

}  // namespace coordinet
