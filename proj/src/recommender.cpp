#include "odup/recommender.hpp"

#include <algorithm>
#include <cmath>

#include "odup/error.hpp"

namespace odup {

RecModel make_model(std::size_t vocab_size, std::size_t dim, EncoderKind kind, Rng& rng) {
    require(vocab_size >= 1, "model needs at least one item");
    require(dim >= 2, "embedding dimension must be at least 2");
    RecModel m;
    m.embeddings = uniform_matrix(rng, vocab_size, dim, -0.1, 0.1);
    m.encoder.kind = kind;
    m.encoder.gate_logit = 0.0;
    return m;
}

Vector encode_session(const Matrix& table, const SessionEncoder& enc, std::span<const ItemIndex> prefix) {
    require(!prefix.empty(), "encode_session: empty prefix");
    const std::size_t d = table.cols();
    Vector mean(d, 0.0);
    for (auto v : prefix) {
        require(v < table.rows(), "encode_session: item index out of range");
        auto row = table.row(v);
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(prefix.size());
    for (double& x : mean) x *= inv;
    if (enc.kind == EncoderKind::mean_pool) return mean;

    const double g = enc.gate();
    auto last = table.row(prefix.back());
    Vector s(d);
    for (std::size_t j = 0; j < d; ++j) s[j] = g * last[j] + (1.0 - g) * mean[j];
    return s;
}

Vector score_all(const Matrix& table, std::span<const double> s) {
    require(s.size() == table.cols(), "score_all: session embedding has wrong dimension");
    Vector scores(table.rows());
    for (std::size_t v = 0; v < table.rows(); ++v) scores[v] = dot(table.row(v), s);
    return scores;
}

namespace {

// Scores against a d x |V| transposed table. Each score is still accumulated
// over j = 0..d-1 in order, so results equal score_all bit for bit while the
// inner loop runs across items.
void score_all_transposed(const Matrix& table_t, std::span<const double> s, Vector& scores) {
    const std::size_t V = table_t.cols();
    scores.assign(V, 0.0);
    for (std::size_t j = 0; j < s.size(); ++j) {
        const double sj = s[j];
        auto col = table_t.row(j);
        for (std::size_t v = 0; v < V; ++v) scores[v] += sj * col[v];
    }
}

}  // namespace

std::size_t rank_of(std::span<const double> scores, ItemIndex item) {
    require(item < scores.size(), "rank_of: item out of range");
    const double target = scores[item];
    std::size_t ahead = 0;
    for (std::size_t v = 0; v < scores.size(); ++v) {
        if (scores[v] > target || (scores[v] == target && v < item)) ++ahead;
    }
    return ahead + 1;
}

std::vector<ItemIndex> top_k(std::span<const double> scores, std::size_t k) {
    std::vector<ItemIndex> idx(scores.size());
    for (std::size_t v = 0; v < idx.size(); ++v) idx[v] = static_cast<ItemIndex>(v);
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](ItemIndex a, ItemIndex b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
    idx.resize(k);
    return idx;
}

double rec_loss(const RecModel& model, std::span<const LabeledPair> pairs, double l2, Matrix* grad_table,
                double* grad_gate_logit) {
    const Matrix& X = model.embeddings;
    const std::size_t V = X.rows();
    const std::size_t d = X.cols();
    const bool want_grad = grad_table != nullptr;
    if (want_grad) *grad_table = Matrix(V, d);
    double gate_grad = 0.0;
    const double g = model.encoder.gate();
    const bool gated = model.encoder.kind == EncoderKind::last_item_gated;
    const double inv_batch = pairs.empty() ? 0.0 : 1.0 / static_cast<double>(pairs.size());

    double total = 0.0;
    const Matrix Xt = transpose(X);
    Vector scores, ds(d), mean(d);
    for (const auto& pair : pairs) {
        require(pair.label < V, "rec_loss: label out of range");
        const Vector s = encode_session(X, model.encoder, pair.prefix);
        score_all_transposed(Xt, s, scores);
        const double label_score = scores[pair.label];
        double mx = scores[0];
        for (double sc : scores) mx = std::max(mx, sc);
        double z = 0.0;
        for (double& sc : scores) {
            sc = std::exp(sc - mx);
            z += sc;
        }
        // scores now hold unnormalised probabilities.
        total += mx + std::log(z) - label_score;
        if (!want_grad) continue;

        std::fill(ds.begin(), ds.end(), 0.0);
        for (std::size_t v = 0; v < V; ++v) {
            double coeff = scores[v] / z;
            if (v == pair.label) coeff -= 1.0;
            coeff *= inv_batch;
            auto xr = X.row(v);
            auto gr = grad_table->row(v);
            for (std::size_t j = 0; j < d; ++j) {
                gr[j] += coeff * s[j];
                ds[j] += coeff * xr[j];
            }
        }
        const double share = (gated ? 1.0 - g : 1.0) / static_cast<double>(pair.prefix.size());
        for (auto v : pair.prefix) {
            auto gr = grad_table->row(v);
            for (std::size_t j = 0; j < d; ++j) gr[j] += share * ds[j];
        }
        if (gated) {
            auto last = X.row(pair.prefix.back());
            auto gr = grad_table->row(pair.prefix.back());
            std::fill(mean.begin(), mean.end(), 0.0);
            for (auto v : pair.prefix) {
                auto xr = X.row(v);
                for (std::size_t j = 0; j < d; ++j) mean[j] += xr[j];
            }
            double dg = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                gr[j] += g * ds[j];
                mean[j] /= static_cast<double>(pair.prefix.size());
                dg += ds[j] * (last[j] - mean[j]);
            }
            gate_grad += dg * g * (1.0 - g);
        }
    }
    double loss = total * inv_batch + 0.5 * l2 * frobenius2(X);
    if (want_grad) {
        auto gf = grad_table->flat();
        auto xf = X.flat();
        for (std::size_t i = 0; i < gf.size(); ++i) gf[i] += l2 * xf[i];
    }
    if (grad_gate_logit != nullptr) *grad_gate_logit = gated ? gate_grad : 0.0;
    return loss;
}

TrainResult train(RecModel& model, const SessionDataset& data, const TrainConfig& cfg) {
    require(!data.empty(), "train: dataset is empty");
    require(cfg.lr >= 0.0 && cfg.lr <= 1.0, "train: lr must lie in [0, 1]");
    require(cfg.batch >= 1, "train: batch must be at least 1");
    require(cfg.l2 >= 0.0, "train: l2 must be non-negative");
    require(data.vocab_size == 0 || data.vocab_size == model.vocab_size(), "train: vocabulary size mismatch");

    const std::size_t n_params = model.embeddings.size();
    Adam adam(n_params + 1, cfg.beta1, cfg.beta2, cfg.eps);
    Rng rng(mix_seed(cfg.seed, 0x7261696eULL));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const bool gated = model.encoder.kind == EncoderKind::last_item_gated && cfg.train_gate;
    TrainResult result;
    Matrix grad;
    std::vector<LabeledPair> batch;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(data.pairs[order[i]]);
            double gate_grad = 0.0;
            const double loss = rec_loss(model, batch, cfg.l2, &grad, &gate_grad);
            if (!std::isfinite(loss)) throw Error(ErrorKind::diverged, "recommender training diverged");
            adam.next_step();
            adam.update(model.embeddings.flat(), grad.flat(), cfg.lr, 0);
            if (gated) {
                double gl = model.encoder.gate_logit;
                adam.update(std::span<double>(&gl, 1), std::span<const double>(&gate_grad, 1), cfg.lr, n_params);
                model.encoder.gate_logit = gl;
            }
        }
        const double epoch_loss = rec_loss(model, data.pairs, cfg.l2);
        if (!std::isfinite(epoch_loss) || !model.embeddings.all_finite())
            throw Error(ErrorKind::diverged, "recommender training diverged at epoch " + std::to_string(epoch + 1));
        result.loss_curve.push_back(epoch_loss);
    }
    return result;
}

namespace {

void check_k(std::size_t k, std::size_t vocab) {
    require(k >= 1, "evaluate: K must be at least 1");
    require(k <= vocab, "evaluate: K exceeds vocabulary size");
}

}  // namespace

Metrics evaluate(const Matrix& table, const SessionEncoder& enc, const SessionDataset& data, std::size_t k) {
    check_k(k, table.rows());
    Metrics m;
    if (data.empty()) return m;
    const Matrix table_t = transpose(table);
    Vector scores;
    for (const auto& p : data.pairs) {
        score_all_transposed(table_t, encode_session(table, enc, p.prefix), scores);
        const auto r = rank_of(scores, p.label);
        if (r <= k) {
            m.prec += 1.0;
            m.ndcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
        }
    }
    m.prec /= static_cast<double>(data.size());
    m.ndcg /= static_cast<double>(data.size());
    return m;
}

MetricsAt5And10 evaluate_5_10(const Matrix& table, const SessionEncoder& enc, const SessionDataset& data) {
    check_k(10, table.rows());
    MetricsAt5And10 out;
    if (data.empty()) return out;
    const Matrix table_t = transpose(table);
    Vector scores;
    for (const auto& p : data.pairs) {
        score_all_transposed(table_t, encode_session(table, enc, p.prefix), scores);
        const auto r = rank_of(scores, p.label);
        const double gain = 1.0 / std::log2(static_cast<double>(r) + 1.0);
        if (r <= 10) {
            out.at10.prec += 1.0;
            out.at10.ndcg += gain;
        }
        if (r <= 5) {
            out.at5.prec += 1.0;
            out.at5.ndcg += gain;
        }
    }
    const double n = static_cast<double>(data.size());
    for (Metrics* m : {&out.at5, &out.at10}) {
        m->prec /= n;
        m->ndcg /= n;
    }
    return out;
}

}  // namespace odup
