#include "volterra/stats.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace volterra::stats {

double pairwise_sum(std::span<const double> x) {
    if (x.size() <= 16) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    const std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

double mean(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("mean of an empty sample");
    return pairwise_sum(x) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    std::vector<double> sq(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - m) * (x[i] - m);
    return pairwise_sum(sq) / static_cast<double>(x.size() - 1);
}

MeanEstimate mean_with_stderr(std::span<const double> x) {
    MeanEstimate e;
    e.n = x.size();
    e.mean = mean(x);
    e.std_error = std::sqrt(sample_variance(x) / static_cast<double>(x.size()));
    return e;
}

MeanEstimate batch_means(std::span<const double> x, std::size_t n_batches) {
    if (n_batches < 2 || x.size() < n_batches)
        throw std::invalid_argument("batch means needs at least 2 batches and one value per batch");
    const std::size_t len = x.size() / n_batches;
    const std::size_t skip = x.size() - len * n_batches;
    std::vector<double> batch(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) batch[b] = mean(x.subspan(skip + b * len, len));
    return mean_with_stderr(batch);
}

double z_score(double estimate, double reference, double std_error) {
    const double diff = estimate - reference;
    if (std_error > 0.0) return diff / std_error;
    if (diff == 0.0) return 0.0;
    return diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

} // namespace volterra::stats
