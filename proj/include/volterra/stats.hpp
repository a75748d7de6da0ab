#pragma once

#include <cstddef>
#include <span>

namespace volterra::stats {

/// Pairwise (cascade) summation; result independent of thread scheduling.
double pairwise_sum(std::span<const double> x);
double mean(std::span<const double> x);
/// Unbiased sample variance (n - 1 denominator); 0 for fewer than 2 values.
double sample_variance(std::span<const double> x);

struct MeanEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

/// Mean and iid standard error.
MeanEstimate mean_with_stderr(std::span<const double> x);

/// Batch means: x split into n_batches contiguous blocks of equal length
/// (leading remainder dropped); std_error from the spread of block means.
MeanEstimate batch_means(std::span<const double> x, std::size_t n_batches);

/// (estimate - reference) / std_error; 0 when both numerator and std_error vanish,
/// +-inf when only std_error vanishes.
double z_score(double estimate, double reference, double std_error);

} // namespace volterra::stats
