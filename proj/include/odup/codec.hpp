#pragma once

// Compositional-code compression of an item embedding table.
//
// Each item v gets a code (c_1..c_n) with c_i in [0, k); its embedding is the
// sum of the selected rows of n codebooks, stored concatenated as one (nk x d)
// matrix where row i*k + c belongs to codebook i. Codes come from a two-layer
// MLP over the original embedding whose per-codebook softmax is relaxed with
// Gumbel noise during training, so codebooks and encoder train end to end
// against the reconstruction error.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odup/numkit.hpp"

namespace odup {

struct CodecConfig {
    std::size_t n = 8;   // codebooks
    std::size_t k = 16;  // rows per codebook
    std::size_t d = 32;  // embedding dimension
    double tau = 0.1;    // Gumbel-Softmax temperature (0.2 is the alternative preset)
    double lr = 0.01;
    std::size_t epochs = 100;
    std::size_t batch = 64;
    std::uint64_t seed = 0;
    bool straight_through = false;  // hard one-hot forward, soft backward

    // Throws unless nk is even, dims are positive and C(nk, n) > vocab.
    void validate(std::size_t vocab) const;
    // Soft-constraint violations (n not much smaller than d, nk not much smaller than |V|).
    std::vector<std::string> warnings(std::size_t vocab) const;
};

// log C(nk, n) > log |V|, compared in the log domain.
bool has_code_capacity(std::size_t n, std::size_t k, std::size_t vocab);

class CodebookStore {
public:
    CodebookStore() = default;
    CodebookStore(std::size_t n, std::size_t k, Matrix rows);
    CodebookStore(std::size_t n, std::size_t k, std::size_t d) : CodebookStore(n, k, Matrix(n * k, d)) {}

    std::size_t n() const noexcept { return n_; }
    std::size_t k() const noexcept { return k_; }
    std::size_t d() const noexcept { return rows_.cols(); }
    std::size_t row_count() const noexcept { return rows_.rows(); }
    std::size_t codebook_of(std::size_t row) const { return row / k_; }

    const Matrix& rows() const noexcept { return rows_; }
    Matrix& rows() noexcept { return rows_; }

    friend bool operator==(const CodebookStore&, const CodebookStore&) = default;

private:
    std::size_t n_ = 0;
    std::size_t k_ = 0;
    Matrix rows_;
};

class CodeMatrix {
public:
    CodeMatrix() = default;
    CodeMatrix(std::size_t vocab, std::size_t n, std::size_t k);
    CodeMatrix(std::size_t vocab, std::size_t n, std::size_t k, std::vector<std::uint32_t> codes);

    std::size_t vocab() const noexcept { return vocab_; }
    std::size_t n() const noexcept { return n_; }
    std::size_t k() const noexcept { return k_; }

    std::uint32_t operator()(std::size_t v, std::size_t i) const { return codes_[v * n_ + i]; }
    void set(std::size_t v, std::size_t i, std::uint32_t c);
    std::span<const std::uint32_t> item(std::size_t v) const { return {codes_.data() + v * n_, n_}; }
    const std::vector<std::uint32_t>& flat() const noexcept { return codes_; }

    friend bool operator==(const CodeMatrix&, const CodeMatrix&) = default;

private:
    std::size_t vocab_ = 0;
    std::size_t n_ = 0;
    std::size_t k_ = 0;
    std::vector<std::uint32_t> codes_;
};

// h = tanh(phiᵀx + b); logits = softplus(phi_primeᵀh + b_prime); alpha = per-group softmax.
struct CodecEncoder {
    std::size_t n = 0;
    std::size_t k = 0;
    Matrix phi;        // d x (nk/2)
    Vector b;          // nk/2
    Matrix phi_prime;  // (nk/2) x nk
    Vector b_prime;    // nk

    std::size_t dim() const noexcept { return phi.rows(); }
    std::size_t hidden() const noexcept { return phi.cols(); }

    friend bool operator==(const CodecEncoder&, const CodecEncoder&) = default;
};

CodecEncoder make_encoder(std::size_t d, std::size_t n, std::size_t k, Rng& rng);

// alpha as an n x k matrix; each row sums to one.
Matrix encoder_forward(const CodecEncoder& enc, std::span<const double> x);

// softmax((log max(alpha, ε) + noise) / tau) for one group.
Vector gumbel_relax(std::span<const double> alpha_group, std::span<const double> noise, double tau);
// Same with fresh Gumbel noise drawn from rng.
Vector gumbel_relax(std::span<const double> alpha_group, Rng& rng, double tau);

Vector reconstruct_item(const CodebookStore& store, std::span<const std::uint32_t> code);
// Gather-sum; row v equals reconstruct_item(store, codes.item(v)).
Matrix reconstruct_table(const CodebookStore& store, const CodeMatrix& codes);

// Per-group argmax of alpha (ties to the lowest index), no noise.
CodeMatrix harden(const CodecEncoder& enc, const Matrix& target);

double relative_mse(const Matrix& recon, const Matrix& target);

// Gradients of the codec objective, laid out like the parameters.
struct CodecGrads {
    Matrix phi, phi_prime, store;
    Vector b, b_prime;
};

// Mean squared error over the given items, ‖OE − X‖² / (|items| d), where O is
// the relaxed assignment with the given Gumbel noise (items x nk, null = zero).
// When `grads` is non-null it receives the analytic gradient.
double codec_loss(const CodecEncoder& enc, const CodebookStore& store, const Matrix& target,
                  std::span<const std::size_t> items, const Matrix* noise, double tau, bool straight_through,
                  CodecGrads* grads = nullptr);

struct CodecWarmStart {
    CodebookStore store;
    CodecEncoder encoder;
};

struct CodecTrainResult {
    CodebookStore store;
    CodecEncoder encoder;
    // Noise-free relaxed loss over the whole table: entry 0 at initialisation,
    // entry e after epoch e.
    std::vector<double> loss_curve;
};

// Initial parameters used by train_codec when no warm start is given.
CodecWarmStart init_codec(const CodecConfig& cfg);

// Frozen store rows are never written. Throws ErrorKind::diverged on non-finite loss.
CodecTrainResult train_codec(const Matrix& target, const CodecConfig& cfg,
                             const std::vector<std::size_t>& frozen_rows = {},
                             const std::optional<CodecWarmStart>& warm = std::nullopt);

// |V| d / (n k d + n |V|): embedding-table elements over codebook elements plus code entries.
double model_cr(std::size_t vocab, std::size_t d, std::size_t n, std::size_t k);

}  // namespace odup
