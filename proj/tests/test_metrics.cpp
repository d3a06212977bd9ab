#include <algorithm>
#include <cmath>
#include <vector>

#include "bertlab/metrics.hpp"
#include "bertlab/rng.hpp"
#include "doctest.h"

using namespace bertlab;

namespace {

// Brute-force references, kept deliberately on different algorithmic paths
// from the library implementations.

double ref_accuracy(const std::vector<int32_t>& p, const std::vector<int32_t>& g) {
  int c = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] == g[i]) ++c;
  }
  return double(c) / double(p.size());
}

// Reference F1 through precision and recall.
double ref_f1(const std::vector<int32_t>& p, const std::vector<int32_t>& g, int32_t pos) {
  double tp = 0, pred_pos = 0, gold_pos = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] == pos) ++pred_pos;
    if (g[i] == pos) ++gold_pos;
    if (p[i] == pos && g[i] == pos) ++tp;
  }
  if (pred_pos == 0 && gold_pos == 0) return 0.0;
  if (pred_pos == 0 || gold_pos == 0) return 0.0;
  const double precision = tp / pred_pos;
  const double recall = tp / gold_pos;
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

// Reference MCC via the covariance form: (n*tp - pred_pos*gold_pos) / ...
double ref_matthews(const std::vector<int32_t>& p, const std::vector<int32_t>& g) {
  const double n = double(p.size());
  double s_pred = 0, s_gold = 0, s_both = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i] != 0 ? 1.0 : 0.0;
    const double gi = g[i] != 0 ? 1.0 : 0.0;
    s_pred += pi;
    s_gold += gi;
    s_both += pi * gi;
  }
  const double cov = n * s_both - s_pred * s_gold;
  const double var_p = s_pred * (n - s_pred);
  const double var_g = s_gold * (n - s_gold);
  if (var_p == 0 || var_g == 0) return 0.0;
  return cov / std::sqrt(var_p * var_g);
}

// Reference ranks by O(n^2) counting: rank = 1 + #smaller + (#equal - 1) / 2.
std::vector<double> ref_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    int smaller = 0, equal = 0;
    for (size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++smaller;
      if (v[j] == v[i]) ++equal;
    }
    r[i] = 1.0 + smaller + (equal - 1) / 2.0;
  }
  return r;
}

double ref_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = ref_ranks(x);
  const auto ry = ref_ranks(y);
  const double n = double(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += rx[i];
    sy += ry[i];
    sxy += rx[i] * ry[i];
    sxx += rx[i] * rx[i];
    syy += ry[i] * ry[i];
  }
  const double cov = sxy - sx * sy / n;
  const double vx = sxx - sx * sx / n;
  const double vy = syy - sy * sy / n;
  if (vx == 0 || vy == 0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

}  // namespace

TEST_CASE("metric identities") {
  std::vector<int32_t> perfect = {1, 0, 1, 1, 0};
  CHECK(matthews(perfect, perfect) == doctest::Approx(1.0));
  CHECK(accuracy(perfect, perfect) == 1.0);
  CHECK(f1_binary(perfect, perfect, 1) == doctest::Approx(1.0));

  std::vector<double> a = {1, 2, 3}, b = {3, 2, 1};
  CHECK(spearman(a, b) == doctest::Approx(-1.0));
  CHECK(spearman(a, a) == doctest::Approx(1.0));
}

TEST_CASE("degenerate conventions") {
  std::vector<int32_t> all_zero = {0, 0, 0};
  CHECK(f1_binary(all_zero, all_zero, 1) == 0.0);  // no predicted, no gold positives
  CHECK(matthews(all_zero, all_zero) == 0.0);      // zero marginals
  std::vector<double> flat = {2, 2, 2}, vary = {1, 2, 3};
  CHECK(spearman(flat, vary) == 0.0);
}

TEST_CASE("length mismatch errors") {
  std::vector<int32_t> a = {1, 0}, b = {1};
  CHECK_THROWS_AS(accuracy(a, b), std::invalid_argument);
  std::vector<double> x = {1.0}, y = {};
  CHECK_THROWS_AS(spearman(x, y), std::invalid_argument);
}

TEST_CASE("ties use average ranks") {
  std::vector<double> v = {10, 20, 20, 30};
  const auto r = average_ranks(v);
  CHECK(r[0] == 1.0);
  CHECK(r[1] == 2.5);
  CHECK(r[2] == 2.5);
  CHECK(r[3] == 4.0);
}

TEST_CASE("all four metrics match brute-force references on 1000 random vectors") {
  DetRng rng(4242);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 2 + rng.below(40);
    std::vector<int32_t> p(n), g(n);
    std::vector<double> x(n), y(n);
    for (size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int32_t>(rng.below(2));
      g[i] = static_cast<int32_t>(rng.below(2));
      // Coarse grid so ties actually happen.
      x[i] = static_cast<double>(rng.below(8));
      y[i] = static_cast<double>(rng.below(8));
    }
    CHECK(accuracy(p, g) == doctest::Approx(ref_accuracy(p, g)).epsilon(1e-9));
    CHECK(f1_binary(p, g, 1) == doctest::Approx(ref_f1(p, g, 1)).epsilon(1e-9));
    CHECK(matthews(p, g) == doctest::Approx(ref_matthews(p, g)).epsilon(1e-9));
    CHECK(spearman(x, y) == doctest::Approx(ref_spearman(x, y)).epsilon(1e-9));
  }
}

TEST_CASE("mean and sample std") {
  std::vector<double> v = {90, 92, 94};
  CHECK(mean(v) == doctest::Approx(92.0));
  CHECK(sample_std(v) == doctest::Approx(2.0));
  std::vector<double> one = {5};
  CHECK(sample_std(one) == 0.0);
}
