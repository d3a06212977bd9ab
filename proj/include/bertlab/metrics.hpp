#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bertlab {

double accuracy(std::span<const int32_t> preds, std::span<const int32_t> golds);

// Binary F1 for the given positive class. Returns 0 when there are neither
// predicted nor gold positives (documented degenerate-case convention).
double f1_binary(std::span<const int32_t> preds, std::span<const int32_t> golds,
                 int32_t positive);

// Matthews correlation over binary labels {0, 1}; returns 0 when any
// confusion-matrix marginal is 0.
double matthews(std::span<const int32_t> preds, std::span<const int32_t> golds);

// Spearman rank correlation with average ranks for ties. Returns 0 when
// either input has zero rank variance.
double spearman(std::span<const double> x, std::span<const double> y);

// Average ranks (1-based) with ties sharing the mean of their rank range.
std::vector<double> average_ranks(std::span<const double> values);

double mean(std::span<const double> values);
// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
double sample_std(std::span<const double> values);

}  // namespace bertlab
