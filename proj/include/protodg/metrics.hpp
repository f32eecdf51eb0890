#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace protodg {

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

// Sample standard deviation (n - 1 denominator); 0 for a single value.
inline double stddev_of(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Mean silhouette coefficient of points [n x dim] under the given labels,
// Euclidean distance. Points in singleton clusters contribute 0.
inline double silhouette(std::span<const double> points, std::size_t dim, std::span<const int> labels) {
    const std::size_t n = labels.size();
    if (points.size() != n * dim) throw std::invalid_argument("silhouette: points/labels size mismatch");
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    if (counts.size() < 2) throw std::invalid_argument("silhouette: need at least two clusters");
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double d = points[i * dim + k] - points[j * dim + k];
            s += d * d;
        }
        return std::sqrt(s);
    };
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] == 1) continue;
        std::map<int, double> sums;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) sums[labels[j]] += dist(i, j);
        const double a = sums[labels[i]] / static_cast<double>(counts[labels[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [l, s] : sums)
            if (l != labels[i]) b = std::min(b, s / static_cast<double>(counts[l]));
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

}  // namespace protodg
