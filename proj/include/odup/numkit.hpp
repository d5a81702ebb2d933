#pragma once

// Dense matrices, a portable RNG and the small set of numerical helpers
// shared by the recommender and codec trainers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace odup {

using Vector = std::vector<double>;

// Row-major dense matrix at 64-bit precision.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool all_finite() const noexcept;
    void fill(double v);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// (a x b) * (b x c) -> (a x c). Shape mismatches throw.
Matrix matmul(const Matrix& a, const Matrix& b);
// aᵀ * b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Sequential left-to-right reductions; results are reproducible bit for bit.
double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double frobenius2(const Matrix& m);
// ‖a − b‖²_F; shapes must agree.
double squared_error(const Matrix& a, const Matrix& b);

// Rounds every entry to the nearest binary32 value.
Matrix round_to_f32(const Matrix& m);

double sigmoid(double x);
double softplus(double x);

// Stable softmax of v / temperature. Throws on non-finite input or temperature <= 0.
Vector softmax(std::span<const double> v, double temperature = 1.0);

// xoshiro256** seeded through splitmix64.
//
//   splitmix64: z += 0x9E3779B97F4A7C15; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//               z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
//   xoshiro256**: result = rotl(s1 * 5, 7) * 9; t = s1 << 17; s2 ^= s0; s3 ^= s1;
//                 s1 ^= s2; s0 ^= s3; s2 ^= t; s3 = rotl(s3, 45)
//
// Every derived draw (uniforms, normals, bounded integers, shuffles) is defined
// here, so sequences do not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t next_u64();
    // Uniform on the open interval (0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);
    // Box-Muller, one draw per call (the sine branch is discarded).
    double normal(double mean = 0.0, double stddev = 1.0);
    // Uniform integer in [0, bound) by rejection sampling; bound > 0.
    std::uint64_t below(std::uint64_t bound);
    // Index drawn proportional to non-negative weights.
    std::size_t categorical(std::span<const double> weights);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

// Derives an independent child seed; used to give each subsystem its own stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

inline constexpr double gumbel_epsilon = 1e-12;

// Standard Gumbel from a given uniform, with u clamped to [ε, 1−ε].
double gumbel_from_uniform(double u);
Vector sample_gumbel(Rng& rng, std::size_t count);

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);

// Adam with bias correction. One instance owns the moments for a flat
// parameter vector; callers address sub-blocks by offset.
class Adam {
public:
    Adam(std::size_t n_params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Advances the shared step counter; call once per optimisation step.
    void next_step() { ++t_; }
    // params -= lr * m̂ / (sqrt(v̂) + eps) over [offset, offset + params.size()).
    void update(std::span<double> params, std::span<const double> grad, double lr, std::size_t offset);
    std::size_t step_count() const noexcept { return t_; }

private:
    double beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

// Maximum over coordinates of |fd − analytic| / max(1e-8, |analytic| + |fd|),
// where fd is the central difference with step h.
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> analytic_grad,
                  std::span<const double> point,
                  double h = 1e-5);

}  // namespace odup
