#include "odup/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "odup/error.hpp"

namespace odup {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "matrix data length does not match shape");
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                      " vs " + std::to_string(b.rows()) + ")");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto o = out.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            auto br = b.row(p);
            for (std::size_t j = 0; j < b.cols(); ++j) o[j] += av * br[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn: row counts differ");
    Matrix out(a.cols(), b.cols());
    for (std::size_t p = 0; p < a.rows(); ++p) {
        auto ar = a.row(p);
        auto br = b.row(p);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double av = ar[i];
            if (av == 0.0) continue;
            auto o = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) o[j] += av * br[j];
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

double frobenius2(const Matrix& m) {
    double s = 0.0;
    for (double v : m.flat()) s += v * v;
    return s;
}

double squared_error(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "squared_error: shape mismatch");
    return squared_distance(a.flat(), b.flat());
}

Matrix round_to_f32(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.flat()) v = static_cast<double>(static_cast<float>(v));
    return out;
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) {
    // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Vector softmax(std::span<const double> v, double temperature) {
    require(!v.empty(), "softmax: empty input");
    require(temperature > 0.0 && std::isfinite(temperature), "softmax: temperature must be positive");
    double mx = v[0];
    for (double x : v) {
        require(std::isfinite(x), "softmax: non-finite input");
        mx = std::max(mx, x);
    }
    Vector out(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp((v[i] - mx) / temperature);
        total += out[i];
    }
    for (double& o : out) o /= total;
    return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& z) {
    z += 0x9E3779B97F4A7C15ULL;
    std::uint64_t r = z;
    r = (r ^ (r >> 30)) * 0xBF58476D1CE4E5B9ULL;
    r = (r ^ (r >> 27)) * 0x94D049BB133111EBULL;
    return r ^ (r >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t z = seed;
    for (auto& s : s_) s = splitmix64(z);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    // (m + 0.5) / 2^53 lies strictly inside (0, 1).
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
    const double u1 = uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t bound) {
    require(bound > 0, "Rng::below: bound must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % bound;
}

std::size_t Rng::categorical(std::span<const double> weights) {
    require(!weights.empty(), "Rng::categorical: no weights");
    double total = 0.0;
    for (double w : weights) total += w;
    require(total > 0.0, "Rng::categorical: weights sum to zero");
    const double target = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        acc += weights[i];
        if (target < acc) return i;
    }
    return weights.size() - 1;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed ^ (stream * 0xD1B54A32D192ED03ULL);
    return splitmix64(z);
}

double gumbel_from_uniform(double u) {
    u = std::clamp(u, gumbel_epsilon, 1.0 - gumbel_epsilon);
    return -std::log(-std::log(u));
}

Vector sample_gumbel(Rng& rng, std::size_t count) {
    require(count >= 1, "sample_gumbel: count must be at least 1");
    Vector g(count);
    for (double& x : g) x = gumbel_from_uniform(rng.uniform());
    return g;
}

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = rng.uniform(lo, hi);
    return m;
}

Adam::Adam(std::size_t n_params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n_params, 0.0), v_(n_params, 0.0) {}

void Adam::update(std::span<double> params, std::span<const double> grad, double lr, std::size_t offset) {
    require(params.size() == grad.size(), "Adam: parameter/gradient length mismatch");
    require(offset + params.size() <= m_.size(), "Adam: block outside the optimiser state");
    require(t_ > 0, "Adam: next_step() must precede update()");
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double& m = m_[offset + i];
        double& v = v_[offset + i];
        m = beta1_ * m + (1.0 - beta1_) * grad[i];
        v = beta2_ * v + (1.0 - beta2_) * grad[i] * grad[i];
        params[i] -= lr * (m / c1) / (std::sqrt(v / c2) + eps_);
    }
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> analytic_grad,
                  std::span<const double> point,
                  double h) {
    require(h > 0.0, "grad_check: step must be positive");
    require(analytic_grad.size() == point.size(), "grad_check: gradient/point length mismatch");
    std::vector<double> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw Error(ErrorKind::diverged, "grad_check: objective is not finite near the point");
        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::abs(fd - analytic_grad[i]) /
                           std::max(1e-8, std::abs(analytic_grad[i]) + std::abs(fd));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace odup
