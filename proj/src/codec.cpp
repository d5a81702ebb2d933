#include "odup/codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "odup/error.hpp"

namespace odup {

bool has_code_capacity(std::size_t n, std::size_t k, std::size_t vocab) {
    if (n == 0 || k == 0) return false;
    const double nk = static_cast<double>(n * k);
    const double nn = static_cast<double>(n);
    const double log_binom = std::lgamma(nk + 1.0) - std::lgamma(nn + 1.0) - std::lgamma(nk - nn + 1.0);
    return log_binom > std::log(static_cast<double>(vocab));
}

void CodecConfig::validate(std::size_t vocab) const {
    require(n >= 1 && k >= 1 && d >= 1, "codec dimensions must be positive");
    require((n * k) % 2 == 0, "codec needs an even n*k (the encoder hidden width is nk/2)");
    require(k <= 65535 && n <= 65535, "n and k must fit in 16 bits");
    require(tau > 0.0, "codec temperature must be positive");
    require(lr >= 0.0, "codec learning rate must be non-negative");
    require(batch >= 1, "codec batch must be at least 1");
    require(has_code_capacity(n, k, vocab), "C(nk, n) must exceed the vocabulary size (" + std::to_string(n) +
                                                " codebooks of " + std::to_string(k) + " cannot code " +
                                                std::to_string(vocab) + " items)");
}

std::vector<std::string> CodecConfig::warnings(std::size_t vocab) const {
    std::vector<std::string> w;
    if (4 * n > d) w.push_back("n is not much smaller than d; compression will be weak");
    if (4 * n * k > vocab) w.push_back("nk is not much smaller than |V|; codebooks dominate the model size");
    return w;
}

CodebookStore::CodebookStore(std::size_t n, std::size_t k, Matrix rows) : n_(n), k_(k), rows_(std::move(rows)) {
    require(rows_.rows() == n_ * k_, "codebook store must have exactly n*k rows");
}

CodeMatrix::CodeMatrix(std::size_t vocab, std::size_t n, std::size_t k)
    : vocab_(vocab), n_(n), k_(k), codes_(vocab * n, 0) {}

CodeMatrix::CodeMatrix(std::size_t vocab, std::size_t n, std::size_t k, std::vector<std::uint32_t> codes)
    : vocab_(vocab), n_(n), k_(k), codes_(std::move(codes)) {
    require(codes_.size() == vocab_ * n_, "code matrix length does not match |V| x n");
    for (auto c : codes_) require(c < k_, "code component out of range");
}

void CodeMatrix::set(std::size_t v, std::size_t i, std::uint32_t c) {
    require(v < vocab_ && i < n_, "code matrix index out of range");
    require(c < k_, "code component out of range");
    codes_[v * n_ + i] = c;
}

CodecEncoder make_encoder(std::size_t d, std::size_t n, std::size_t k, Rng& rng) {
    require((n * k) % 2 == 0, "encoder needs an even n*k");
    const std::size_t nk = n * k;
    const std::size_t hidden = nk / 2;
    CodecEncoder enc;
    enc.n = n;
    enc.k = k;
    // Glorot-uniform weights, zero biases.
    const double lim1 = std::sqrt(6.0 / static_cast<double>(d + hidden));
    const double lim2 = std::sqrt(6.0 / static_cast<double>(hidden + nk));
    enc.phi = uniform_matrix(rng, d, hidden, -lim1, lim1);
    enc.b.assign(hidden, 0.0);
    enc.phi_prime = uniform_matrix(rng, hidden, nk, -lim2, lim2);
    enc.b_prime.assign(nk, 0.0);
    return enc;
}

namespace {

// Forward activations for one item, kept for the backward pass.
struct ItemPass {
    Vector h;      // hidden
    Vector z;      // pre-softplus
    Vector alpha;  // per-group softmax of softplus(z), flattened n*k
    Vector y;      // relaxed one-hot, flattened n*k
};

void encoder_hidden_logits(const CodecEncoder& enc, std::span<const double> x, ItemPass& p) {
    const std::size_t H = enc.hidden();
    const std::size_t nk = enc.n * enc.k;
    p.h.assign(enc.b.begin(), enc.b.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        auto row = enc.phi.row(i);
        for (std::size_t j = 0; j < H; ++j) p.h[j] += xi * row[j];
    }
    for (double& v : p.h) v = std::tanh(v);
    p.z.assign(enc.b_prime.begin(), enc.b_prime.end());
    for (std::size_t j = 0; j < H; ++j) {
        const double hj = p.h[j];
        auto row = enc.phi_prime.row(j);
        for (std::size_t r = 0; r < nk; ++r) p.z[r] += hj * row[r];
    }
    p.alpha.resize(nk);
    for (std::size_t g = 0; g < enc.n; ++g) {
        double mx = -1.0;
        for (std::size_t m = 0; m < enc.k; ++m) {
            const double l = softplus(p.z[g * enc.k + m]);
            p.alpha[g * enc.k + m] = l;
            mx = std::max(mx, l);
        }
        double total = 0.0;
        for (std::size_t m = 0; m < enc.k; ++m) {
            double& a = p.alpha[g * enc.k + m];
            a = std::exp(a - mx);
            total += a;
        }
        for (std::size_t m = 0; m < enc.k; ++m) p.alpha[g * enc.k + m] /= total;
    }
}

// y = softmax((log max(alpha, ε) + noise) / tau) per group.
void relax_groups(std::size_t n, std::size_t k, std::span<const double> alpha, std::span<const double> noise,
                  double tau, Vector& y) {
    y.resize(n * k);
    for (std::size_t g = 0; g < n; ++g) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < k; ++m) {
            const std::size_t r = g * k + m;
            const double u = (std::log(std::max(alpha[r], gumbel_epsilon)) + (noise.empty() ? 0.0 : noise[r])) / tau;
            y[r] = u;
            mx = std::max(mx, u);
        }
        double total = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
            double& v = y[g * k + m];
            v = std::exp(v - mx);
            total += v;
        }
        for (std::size_t m = 0; m < k; ++m) y[g * k + m] /= total;
    }
}

std::size_t argmax_group(std::span<const double> v, std::size_t g, std::size_t k) {
    std::size_t best = 0;
    for (std::size_t m = 1; m < k; ++m)
        if (v[g * k + m] > v[g * k + best]) best = m;
    return best;
}

}  // namespace

Matrix encoder_forward(const CodecEncoder& enc, std::span<const double> x) {
    require(x.size() == enc.dim(), "encoder_forward: input has wrong dimension");
    ItemPass p;
    encoder_hidden_logits(enc, x, p);
    return Matrix(enc.n, enc.k, std::move(p.alpha));
}

Vector gumbel_relax(std::span<const double> alpha_group, std::span<const double> noise, double tau) {
    require(tau > 0.0, "gumbel_relax: temperature must be positive");
    require(noise.empty() || noise.size() == alpha_group.size(), "gumbel_relax: noise length mismatch");
    Vector y;
    relax_groups(1, alpha_group.size(), alpha_group, noise, tau, y);
    return y;
}

Vector gumbel_relax(std::span<const double> alpha_group, Rng& rng, double tau) {
    const Vector g = sample_gumbel(rng, alpha_group.size());
    return gumbel_relax(alpha_group, g, tau);
}

Vector reconstruct_item(const CodebookStore& store, std::span<const std::uint32_t> code) {
    require(code.size() == store.n(), "reconstruct_item: code has wrong length");
    Vector e(store.d(), 0.0);
    for (std::size_t i = 0; i < code.size(); ++i) {
        require(code[i] < store.k(), "reconstruct_item: code component out of range");
        auto row = store.rows().row(i * store.k() + code[i]);
        for (std::size_t j = 0; j < e.size(); ++j) e[j] += row[j];
    }
    return e;
}

Matrix reconstruct_table(const CodebookStore& store, const CodeMatrix& codes) {
    require(codes.n() == store.n() && codes.k() == store.k(), "reconstruct_table: code/store shapes differ");
    Matrix out(codes.vocab(), store.d());
    for (std::size_t v = 0; v < codes.vocab(); ++v) {
        auto o = out.row(v);
        for (std::size_t i = 0; i < codes.n(); ++i) {
            auto row = store.rows().row(i * store.k() + codes(v, i));
            for (std::size_t j = 0; j < o.size(); ++j) o[j] += row[j];
        }
    }
    return out;
}

CodeMatrix harden(const CodecEncoder& enc, const Matrix& target) {
    require(target.cols() == enc.dim(), "harden: target has wrong dimension");
    CodeMatrix codes(target.rows(), enc.n, enc.k);
    ItemPass p;
    for (std::size_t v = 0; v < target.rows(); ++v) {
        encoder_hidden_logits(enc, target.row(v), p);
        for (std::size_t g = 0; g < enc.n; ++g)
            codes.set(v, g, static_cast<std::uint32_t>(argmax_group(p.alpha, g, enc.k)));
    }
    return codes;
}

double relative_mse(const Matrix& recon, const Matrix& target) {
    const double denom = frobenius2(target);
    require(denom > 0.0, "relative_mse: target is all zeros");
    return squared_error(recon, target) / denom;
}

double codec_loss(const CodecEncoder& enc, const CodebookStore& store, const Matrix& target,
                  std::span<const std::size_t> items, const Matrix* noise, double tau, bool straight_through,
                  CodecGrads* grads) {
    const std::size_t n = enc.n, k = enc.k, nk = n * k;
    const std::size_t d = target.cols();
    const std::size_t H = enc.hidden();
    require(store.n() == n && store.k() == k && store.d() == d, "codec_loss: store shape mismatch");
    require(enc.dim() == d, "codec_loss: encoder input dimension mismatch");
    require(noise == nullptr || (noise->rows() == items.size() && noise->cols() == nk), "codec_loss: noise shape");
    require(!items.empty(), "codec_loss: no items");

    if (grads != nullptr) {
        grads->phi = Matrix(enc.phi.rows(), enc.phi.cols());
        grads->phi_prime = Matrix(enc.phi_prime.rows(), enc.phi_prime.cols());
        grads->store = Matrix(nk, d);
        grads->b.assign(H, 0.0);
        grads->b_prime.assign(nk, 0.0);
    }
    const double scale = 1.0 / (static_cast<double>(items.size()) * static_cast<double>(d));
    const Matrix& E = store.rows();

    ItemPass p;
    Vector w(nk), e(d), de(d), dy(nk), dz(nk), dh(H);
    double total = 0.0;
    for (std::size_t b = 0; b < items.size(); ++b) {
        const std::size_t v = items[b];
        require(v < target.rows(), "codec_loss: item out of range");
        auto x = target.row(v);
        encoder_hidden_logits(enc, x, p);
        std::span<const double> g_noise;
        if (noise != nullptr) g_noise = noise->row(b);
        relax_groups(n, k, p.alpha, g_noise, tau, p.y);

        if (straight_through) {
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t g = 0; g < n; ++g) w[g * k + argmax_group(p.y, g, k)] = 1.0;
        } else {
            w = p.y;
        }
        std::fill(e.begin(), e.end(), 0.0);
        for (std::size_t r = 0; r < nk; ++r) {
            const double wr = w[r];
            if (wr == 0.0) continue;
            auto er = E.row(r);
            for (std::size_t j = 0; j < d; ++j) e[j] += wr * er[j];
        }
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = e[j] - x[j];
            sq += diff * diff;
            de[j] = 2.0 * diff * scale;
        }
        total += sq;
        if (grads == nullptr) continue;

        // Reconstruction: dE_r += w_r de, dy_r = <E_r, de>.
        for (std::size_t r = 0; r < nk; ++r) {
            auto er = E.row(r);
            auto gr = grads->store.row(r);
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                gr[j] += w[r] * de[j];
                acc += er[j] * de[j];
            }
            dy[r] = acc;
        }
        // Relaxation and group softmax, then softplus.
        for (std::size_t g = 0; g < n; ++g) {
            double ydy = 0.0;
            for (std::size_t m = 0; m < k; ++m) ydy += p.y[g * k + m] * dy[g * k + m];
            double gsum = 0.0;
            for (std::size_t m = 0; m < k; ++m) {
                const std::size_t r = g * k + m;
                // d/d(log alpha); the clamp at ε cuts the path for tiny alphas.
                double glog = p.y[r] * (dy[r] - ydy) / tau;
                if (p.alpha[r] < gumbel_epsilon) glog = 0.0;
                dz[r] = glog;
                gsum += glog;
            }
            for (std::size_t m = 0; m < k; ++m) {
                const std::size_t r = g * k + m;
                dz[r] = (dz[r] - p.alpha[r] * gsum) * sigmoid(p.z[r]);
            }
        }
        for (std::size_t r = 0; r < nk; ++r) grads->b_prime[r] += dz[r];
        for (std::size_t j = 0; j < H; ++j) {
            auto pr = enc.phi_prime.row(j);
            auto gr = grads->phi_prime.row(j);
            double acc = 0.0;
            const double hj = p.h[j];
            for (std::size_t r = 0; r < nk; ++r) {
                acc += pr[r] * dz[r];
                gr[r] += hj * dz[r];
            }
            dh[j] = acc * (1.0 - hj * hj);
            grads->b[j] += dh[j];
        }
        for (std::size_t i = 0; i < d; ++i) {
            auto gr = grads->phi.row(i);
            const double xi = x[i];
            for (std::size_t j = 0; j < H; ++j) gr[j] += xi * dh[j];
        }
    }
    return total * scale;
}

CodecWarmStart init_codec(const CodecConfig& cfg) {
    Rng rng(mix_seed(cfg.seed, 0x636f646563ULL));
    CodecWarmStart init;
    init.store = CodebookStore(cfg.n, cfg.k, uniform_matrix(rng, cfg.n * cfg.k, cfg.d, -0.1, 0.1));
    init.encoder = make_encoder(cfg.d, cfg.n, cfg.k, rng);
    return init;
}

CodecTrainResult train_codec(const Matrix& target, const CodecConfig& cfg, const std::vector<std::size_t>& frozen_rows,
                             const std::optional<CodecWarmStart>& warm) {
    require(target.cols() == cfg.d, "train_codec: target dimension differs from config");
    require(target.rows() >= 1 && target.all_finite(), "train_codec: target must be non-empty and finite");
    cfg.validate(target.rows());
    const std::size_t nk = cfg.n * cfg.k;
    std::vector<char> frozen(nk, 0);
    for (auto r : frozen_rows) {
        require(r < nk, "train_codec: frozen row out of range");
        frozen[r] = 1;
    }

    CodecWarmStart state = warm ? *warm : init_codec(cfg);
    require(state.store.n() == cfg.n && state.store.k() == cfg.k && state.store.d() == cfg.d,
            "train_codec: warm-start store shape differs from config");
    require(state.encoder.n == cfg.n && state.encoder.k == cfg.k && state.encoder.dim() == cfg.d,
            "train_codec: warm-start encoder shape differs from config");

    std::vector<std::size_t> all(target.rows());
    for (std::size_t v = 0; v < all.size(); ++v) all[v] = v;
    auto full_loss = [&] {
        return codec_loss(state.encoder, state.store, target, all, nullptr, cfg.tau, cfg.straight_through);
    };

    CodecTrainResult result;
    result.loss_curve.push_back(full_loss());
    if (!std::isfinite(result.loss_curve.back())) throw Error(ErrorKind::diverged, "codec loss is not finite");

    const std::size_t n_phi = state.encoder.phi.size();
    const std::size_t n_b = state.encoder.b.size();
    const std::size_t n_phi2 = state.encoder.phi_prime.size();
    const std::size_t n_b2 = state.encoder.b_prime.size();
    const std::size_t off_b = n_phi, off_phi2 = off_b + n_b, off_b2 = off_phi2 + n_phi2, off_store = off_b2 + n_b2;
    Adam adam(off_store + nk * cfg.d);

    Rng order_rng(mix_seed(cfg.seed, 0x6f72646572ULL));
    Rng noise_rng(mix_seed(cfg.seed, 0x6e6f697365ULL));
    std::vector<std::size_t> order = all;
    CodecGrads grads;
    Matrix noise;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            const std::span<const std::size_t> items(order.data() + start, end - start);
            noise = Matrix(items.size(), nk);
            for (double& g : noise.flat()) g = gumbel_from_uniform(noise_rng.uniform());
            const double loss =
                codec_loss(state.encoder, state.store, target, items, &noise, cfg.tau, cfg.straight_through, &grads);
            if (!std::isfinite(loss)) throw Error(ErrorKind::diverged, "codec training diverged");
            adam.next_step();
            adam.update(state.encoder.phi.flat(), grads.phi.flat(), cfg.lr, 0);
            adam.update(state.encoder.b, grads.b, cfg.lr, off_b);
            adam.update(state.encoder.phi_prime.flat(), grads.phi_prime.flat(), cfg.lr, off_phi2);
            adam.update(state.encoder.b_prime, grads.b_prime, cfg.lr, off_b2);
            for (std::size_t r = 0; r < nk; ++r) {
                if (frozen[r]) continue;
                adam.update(state.store.rows().row(r), grads.store.row(r), cfg.lr, off_store + r * cfg.d);
            }
        }
        result.loss_curve.push_back(full_loss());
        if (!std::isfinite(result.loss_curve.back()))
            throw Error(ErrorKind::diverged, "codec training diverged at epoch " + std::to_string(epoch + 1));
    }
    result.store = std::move(state.store);
    result.encoder = std::move(state.encoder);
    return result;
}

double model_cr(std::size_t vocab, std::size_t d, std::size_t n, std::size_t k) {
    require(vocab > 0 && d > 0 && n > 0 && k > 0, "model_cr: arguments must be positive");
    const double V = static_cast<double>(vocab), D = static_cast<double>(d);
    const double N = static_cast<double>(n), K = static_cast<double>(k);
    return V * D / (N * K * D + N * V);
}

}  // namespace odup
