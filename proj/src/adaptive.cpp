#include "odup/adaptive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "odup/error.hpp"

namespace odup {

void MmdConfig::validate() const {
    if (sample_n1 == 1 || sample_n2 == 1) throw Error(ErrorKind::config, "MMD sample counts must be 0 (all rows) or >= 2");
    if (bandwidth && !(std::isfinite(*bandwidth) && *bandwidth > 0.0))
        throw Error(ErrorKind::config, "MMD bandwidth must be positive");
    if (paired && sample_n1 != sample_n2) throw Error(ErrorKind::config, "paired MMD sampling needs equal sample counts");
}

void AdaptiveConfig::validate() const {
    if (!(C > 0.0 && C <= 1.0)) throw Error(ErrorKind::config, "adaptive C must lie in (0, 1]");
    if (!(skip_threshold >= 0.0 && std::isfinite(skip_threshold)))
        throw Error(ErrorKind::config, "skip threshold must be a non-negative number");
}

namespace {

// Row indices drawn without replacement, kept in ascending order.
std::vector<std::size_t> draw_rows(std::size_t rows, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(rows);
    std::iota(idx.begin(), idx.end(), 0);
    if (count == 0 || count == rows) return idx;
    require(count <= rows, "mmd2: sample count exceeds table rows");
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(rows - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto src = m.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

double kernel_mean(const Matrix& a, const Matrix& b, double inv_two_sigma2) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < b.rows(); ++j) row_sum += std::exp(-squared_distance(a.row(i), b.row(j)) * inv_two_sigma2);
        total += row_sum;
    }
    return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace

double median_bandwidth(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "median_bandwidth: dimension mismatch");
    const std::size_t pooled = a.rows() + b.rows();
    auto row = [&](std::size_t i) { return i < a.rows() ? a.row(i) : b.row(i - a.rows()); };
    // Large pools are thinned to an evenly strided subset.
    std::vector<std::size_t> pick;
    const std::size_t m = std::min(pooled, max_bandwidth_points);
    for (std::size_t i = 0; i < m; ++i) pick.push_back(i * pooled / m);
    std::vector<double> dist;
    dist.reserve(m * (m - 1) / 2);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) dist.push_back(squared_distance(row(pick[i]), row(pick[j])));
    if (dist.empty()) return 1.0;
    const std::size_t mid = dist.size() / 2;
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
    double med = dist[mid];
    if (dist.size() % 2 == 0) {
        const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
        med = 0.5 * (med + lower);
    }
    med = std::sqrt(med);
    return med > 0.0 ? med : 1.0;
}

double mmd2(const Matrix& x_t, const Matrix& x_t1, const MmdConfig& cfg) {
    cfg.validate();
    require(x_t.cols() == x_t1.cols(), "mmd2: tables have different dimensions");
    require(x_t.rows() >= 1 && x_t1.rows() >= 1, "mmd2: tables must be non-empty");

    Matrix a, b;
    if (cfg.paired) {
        require(x_t.rows() == x_t1.rows(), "mmd2: paired sampling needs tables with equal row counts");
        Rng rng(mix_seed(cfg.seed, 0x706169726564ULL));
        const auto rows = draw_rows(x_t.rows(), cfg.sample_n1, rng);
        a = gather(x_t, rows);
        b = gather(x_t1, rows);
    } else {
        Rng rng1(mix_seed(cfg.seed, 1));
        Rng rng2(mix_seed(cfg.seed, 2));
        a = gather(x_t, draw_rows(x_t.rows(), cfg.sample_n1, rng1));
        b = gather(x_t1, draw_rows(x_t1.rows(), cfg.sample_n2, rng2));
    }

    const double sigma = cfg.bandwidth ? *cfg.bandwidth : median_bandwidth(a, b);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const double value = kernel_mean(a, a, inv) - 2.0 * kernel_mean(a, b, inv) + kernel_mean(b, b, inv);
    return std::max(0.0, value);
}

std::optional<std::uint64_t> choose_ratio(double mmd, const AdaptiveConfig& cfg) {
    cfg.validate();
    require(std::isfinite(mmd) && mmd >= 0.0, "choose_ratio: mmd must be a non-negative number");
    if (mmd <= cfg.skip_threshold) return std::nullopt;
    // 2 sigmoid(x) - 1 written as tanh(x / 2)
    const double denom = cfg.C * std::tanh(0.5 * mmd);
    if (denom <= 0.0) return std::nullopt;
    const double r = std::ceil(1.0 / denom);
    if (r >= 1.8e19) return std::numeric_limits<std::uint64_t>::max();
    return static_cast<std::uint64_t>(r);
}

}  // namespace odup
