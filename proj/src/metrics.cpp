#include "bertlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bertlab {

namespace {

void check_lengths(size_t a, size_t b) {
  if (a != b) {
    throw std::invalid_argument("metric inputs have mismatched lengths: " + std::to_string(a) +
                                " vs " + std::to_string(b));
  }
  if (a == 0) throw std::invalid_argument("metric inputs are empty");
}

}  // namespace

double accuracy(std::span<const int32_t> preds, std::span<const int32_t> golds) {
  check_lengths(preds.size(), golds.size());
  size_t correct = 0;
  for (size_t i = 0; i < preds.size(); ++i) correct += (preds[i] == golds[i]);
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double f1_binary(std::span<const int32_t> preds, std::span<const int32_t> golds,
                 int32_t positive) {
  check_lengths(preds.size(), golds.size());
  double tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == positive;
    const bool g = golds[i] == positive;
    tp += (p && g);
    fp += (p && !g);
    fn += (!p && g);
  }
  const double denom = 2 * tp + fp + fn;
  if (denom == 0) return 0.0;
  return 2 * tp / denom;
}

double matthews(std::span<const int32_t> preds, std::span<const int32_t> golds) {
  check_lengths(preds.size(), golds.size());
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] != 0;
    const bool g = golds[i] != 0;
    if (p && g) ++tp;
    else if (!p && !g) ++tn;
    else if (p && !g) ++fp;
    else ++fn;
  }
  const double denom_sq = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom_sq == 0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom_sq);
}

std::vector<double> average_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    // Positions i..j (0-based) share the average of ranks i+1..j+1.
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_lengths(x.size(), y.size());
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const size_t n = rx.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean of empty list");
  double s = 0;
  for (const double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double s = 0;
  for (const double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size() - 1));
}

}  // namespace bertlab
