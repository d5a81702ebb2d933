#pragma once

// Drift between consecutive embedding tables measured by squared MMD, and the
// mapping from drift to an update compression ratio.

#include <cstdint>
#include <optional>

#include "odup/numkit.hpp"

namespace odup {

struct MmdConfig {
    // Rows sampled from each table; 0 means every row.
    std::size_t sample_n1 = 0;
    std::size_t sample_n2 = 0;
    // Gaussian kernel width; unset selects the median pairwise distance of the pooled sample.
    std::optional<double> bandwidth;
    // Draw the same row indices from both tables instead of independent samples.
    bool paired = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AdaptiveConfig {
    double C = 0.2;
    double skip_threshold = 1e-6;

    void validate() const;
};

inline constexpr std::size_t max_bandwidth_points = 4096;

// Median pairwise Euclidean distance over distinct pairs of the pooled rows
// (an evenly strided subset of max_bandwidth_points when larger); 1 when the
// median is 0.
double median_bandwidth(const Matrix& a, const Matrix& b);

// Biased V-statistic with K(x, y) = exp(-‖x − y‖² / (2σ²)), clamped at 0.
double mmd2(const Matrix& x_t, const Matrix& x_t1, const MmdConfig& cfg);

// nullopt means skip (drift at or below the threshold); otherwise
// ceil(1 / (C (2 sigmoid(mmd) − 1))).
std::optional<std::uint64_t> choose_ratio(double mmd, const AdaptiveConfig& cfg);

}  // namespace odup
