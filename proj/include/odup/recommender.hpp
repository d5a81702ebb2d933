#pragma once

// Minimal session recommender: a session embedding built from item embeddings,
// dot-product scoring against the whole table, softmax cross-entropy training.

#include <cstdint>
#include <span>
#include <vector>

#include "odup/numkit.hpp"
#include "odup/sessiondata.hpp"

namespace odup {

enum class EncoderKind : std::uint8_t { mean_pool = 0, last_item_gated = 1 };

// Everything except the item table: the encoder kind and its gate.
struct SessionEncoder {
    EncoderKind kind = EncoderKind::mean_pool;
    double gate_logit = 0.0;  // gate = sigmoid(gate_logit), used by last_item_gated

    double gate() const { return sigmoid(gate_logit); }
};

struct RecModel {
    Matrix embeddings;  // |V| x d
    SessionEncoder encoder;

    std::size_t vocab_size() const noexcept { return embeddings.rows(); }
    std::size_t dim() const noexcept { return embeddings.cols(); }
};

// Item embeddings drawn from U(-0.1, 0.1); gate starts at 0.5.
RecModel make_model(std::size_t vocab_size, std::size_t dim, EncoderKind kind, Rng& rng);

struct TrainConfig {
    double lr = 0.001;
    std::size_t epochs = 10;
    std::size_t batch = 100;
    double l2 = 1e-5;
    std::uint64_t seed = 0;
    bool train_gate = true;
    // Adam moments.
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// mean-pool: s = mean(x_i); last-item-gated: s = g x_last + (1 - g) mean(x_i).
Vector encode_session(const Matrix& table, const SessionEncoder& enc, std::span<const ItemIndex> prefix);
inline Vector encode_session(const RecModel& m, std::span<const ItemIndex> prefix) {
    return encode_session(m.embeddings, m.encoder, prefix);
}

// score_v = <X_v, s>.
Vector score_all(const Matrix& table, std::span<const double> s);

// 1-based position of `item` when sorting by descending score, ties by lower index.
std::size_t rank_of(std::span<const double> scores, ItemIndex item);
std::vector<ItemIndex> top_k(std::span<const double> scores, std::size_t k);

// Objective on a set of pairs: mean softmax cross-entropy + (l2 / 2) ‖X‖².
// When the gradient pointers are non-null they receive dL/dX and dL/d(gate_logit).
double rec_loss(const RecModel& model, std::span<const LabeledPair> pairs, double l2,
                Matrix* grad_table = nullptr, double* grad_gate_logit = nullptr);

struct TrainResult {
    std::vector<double> loss_curve;  // full-dataset objective after each epoch
};

// Mini-batch Adam. Throws ErrorKind::diverged when the loss stops being finite.
TrainResult train(RecModel& model, const SessionDataset& data, const TrainConfig& cfg);

// Precision@K is the hit rate: a single held-out label either appears in the
// top K or not. NDCG@K credits a hit at rank r with 1 / log2(r + 1).
struct Metrics {
    double prec = 0.0;
    double ndcg = 0.0;
};

Metrics evaluate(const Matrix& table, const SessionEncoder& enc, const SessionDataset& data, std::size_t k);
inline Metrics evaluate(const RecModel& m, const SessionDataset& data, std::size_t k) {
    return evaluate(m.embeddings, m.encoder, data, k);
}

struct MetricsAt5And10 {
    Metrics at5;
    Metrics at10;
};

// One scoring pass per pair for both cut-offs.
MetricsAt5And10 evaluate_5_10(const Matrix& table, const SessionEncoder& enc, const SessionDataset& data);

}  // namespace odup
