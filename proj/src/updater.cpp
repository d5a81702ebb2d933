#include "odup/updater.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace odup {

std::string_view to_string(Strategy s) {
    switch (s) {
    case Strategy::full:
        return "full";
    case Strategy::stack:
        return "stack";
    case Strategy::queue:
        return "queue";
    }
    return "?";
}

Strategy parse_strategy(std::string_view text) {
    if (text == "full") return Strategy::full;
    if (text == "stack") return Strategy::stack;
    if (text == "queue") return Strategy::queue;
    throw Error(ErrorKind::config, "unknown strategy '" + std::string(text) + "' (expected full, stack or queue)");
}

SlotLedger::SlotLedger(std::size_t rows) : records_(rows) {
    require(rows >= 1, "ledger needs at least one row");
    for (std::size_t r = 0; r < rows; ++r) records_[r] = {0, r};
}

SlotLedger SlotLedger::deployed(std::size_t rows) {
    SlotLedger ledger(rows);
    std::vector<std::uint32_t> all(rows);
    std::iota(all.begin(), all.end(), 0u);
    ledger.commit(all, 1);
    return ledger;
}

std::size_t SlotLedger::count_epoch(std::uint32_t epoch) const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [&](const SlotRecord& r) { return r.epoch == epoch; }));
}

std::vector<std::uint32_t> SlotLedger::logical_order() const {
    std::vector<std::uint32_t> rows(records_.size());
    std::iota(rows.begin(), rows.end(), 0u);
    std::sort(rows.begin(), rows.end(), [&](std::uint32_t a, std::uint32_t b) { return records_[a].seq > records_[b].seq; });
    return rows;
}

void SlotLedger::commit(std::span<const std::uint32_t> slots, std::uint32_t epoch) {
    require(!slots.empty(), "ledger commit: no slots");
    require(epoch > epoch_, "ledger commit: epoch must increase");
    std::vector<char> seen(records_.size(), 0);
    for (auto s : slots) {
        require(s < records_.size(), "ledger commit: slot out of range");
        require(!seen[s], "ledger commit: duplicate slot");
        seen[s] = 1;
    }
    for (std::size_t j = 0; j < slots.size(); ++j) records_[slots[j]] = {epoch, next_seq_ + j};
    next_seq_ += slots.size();
    epoch_ = epoch;
}

std::vector<std::uint32_t> plan_slots(const SlotLedger& ledger, Strategy strategy, std::size_t beta) {
    const std::size_t rows = ledger.size();
    require(beta >= 1 && beta <= rows, "plan_slots: beta must lie in [1, nk]");
    std::vector<std::uint32_t> order = ledger.logical_order();
    std::vector<std::uint32_t> plan;
    switch (strategy) {
    case Strategy::full:
        require(beta == rows, "plan_slots: the full strategy replaces every row");
        plan = order;
        break;
    case Strategy::stack:
        plan.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(beta));
        break;
    case Strategy::queue:
        plan.assign(order.end() - static_cast<std::ptrdiff_t>(beta), order.end());
        break;
    }
    std::sort(plan.begin(), plan.end());
    return plan;
}

std::size_t beta_from_ratio(std::size_t n, std::size_t k, double r) {
    require(std::isfinite(r) && r >= 1.0, "beta_from_ratio: r must be at least 1");
    const std::size_t nk = n * k;
    require(nk >= 1, "beta_from_ratio: empty store");
    const double raw = std::floor(static_cast<double>(nk) / r);
    const auto beta = static_cast<std::size_t>(std::max(1.0, raw));
    return std::min(beta, nk);
}

UpdateDelta deployment_delta(const CodebookStore& store, const CodeMatrix& codes) {
    require(codes.n() == store.n() && codes.k() == store.k(), "deployment: codes and store disagree on n or k");
    UpdateDelta delta;
    delta.epoch = 1;
    delta.strategy = Strategy::full;
    delta.slots.resize(store.row_count());
    std::iota(delta.slots.begin(), delta.slots.end(), 0u);
    delta.new_rows = round_to_f32(store.rows());
    delta.codes = codes;
    return delta;
}

RetrainResult retrain_update(const CodebookStore& prev_store, const CodecEncoder& prev_encoder, const Matrix& new_target,
                             std::span<const std::uint32_t> slots, Strategy strategy, std::uint32_t epoch,
                             const CodecConfig& cfg) {
    const std::size_t nk = prev_store.row_count();
    require(!slots.empty() && slots.size() <= nk, "retrain_update: need between 1 and nk slots");
    std::vector<char> open(nk, 0);
    for (auto s : slots) {
        require(s < nk, "retrain_update: slot out of range");
        open[s] = 1;
    }
    std::vector<std::size_t> frozen;
    for (std::size_t r = 0; r < nk; ++r)
        if (!open[r]) frozen.push_back(r);

    auto trained = train_codec(new_target, cfg, frozen, CodecWarmStart{prev_store, prev_encoder});

    RetrainResult out;
    out.store = std::move(trained.store);
    for (auto s : slots)
        for (double& v : out.store.rows().row(s)) v = static_cast<double>(static_cast<float>(v));
    out.encoder = std::move(trained.encoder);
    out.codes = harden(out.encoder, new_target);
    out.loss_curve = std::move(trained.loss_curve);

    out.delta.epoch = epoch;
    out.delta.strategy = strategy;
    out.delta.slots.assign(slots.begin(), slots.end());
    out.delta.new_rows = Matrix(slots.size(), out.store.d());
    for (std::size_t j = 0; j < slots.size(); ++j) {
        auto src = out.store.rows().row(slots[j]);
        std::copy(src.begin(), src.end(), out.delta.new_rows.row(j).begin());
    }
    out.delta.codes = out.codes;
    return out;
}

DeviceState make_device(Strategy strategy, std::size_t n, std::size_t k, std::size_t d) {
    DeviceState dev;
    dev.strategy = strategy;
    dev.store = CodebookStore(n, k, d);
    dev.ledger = SlotLedger(n * k);
    return dev;
}

Matrix apply_delta(DeviceState& device, const UpdateDelta& delta) {
    const std::size_t nk = device.store.row_count();
    const std::size_t d = device.store.d();
    if (delta.epoch != device.ledger.epoch() + 1)
        throw ProtocolError(ProtocolFault::stale_delta, "delta for epoch " + std::to_string(delta.epoch) +
                                                            " does not follow device epoch " +
                                                            std::to_string(device.ledger.epoch()));
    if (delta.new_rows.rows() != delta.beta() || delta.new_rows.cols() != d || delta.codes.n() != device.store.n() ||
        delta.codes.k() != device.store.k() || delta.beta() == 0)
        throw ProtocolError(ProtocolFault::shape_mismatch, "delta shape does not match the device store");
    if (device.ledger.epoch() == 0 || delta.strategy == Strategy::full) {
        if (delta.strategy != Strategy::full || delta.beta() != nk)
            throw ProtocolError(ProtocolFault::strategy_mismatch, "deployment must be a full delta");
    } else if (delta.strategy != device.strategy) {
        throw ProtocolError(ProtocolFault::strategy_mismatch,
                            "delta strategy " + std::string(to_string(delta.strategy)) + " differs from session strategy " +
                                std::string(to_string(device.strategy)));
    }
    const auto expected = plan_slots(device.ledger, delta.strategy, delta.beta());
    if (!std::equal(expected.begin(), expected.end(), delta.slots.begin(), delta.slots.end()))
        throw ProtocolError(ProtocolFault::slot_divergence, "delta slots differ from the local ledger plan");

    CodebookStore store = device.store;
    for (std::size_t j = 0; j < delta.beta(); ++j) {
        auto src = delta.new_rows.row(j);
        auto dst = store.rows().row(delta.slots[j]);
        for (std::size_t c = 0; c < d; ++c) dst[c] = static_cast<double>(static_cast<float>(src[c]));
    }
    Matrix table = reconstruct_table(store, delta.codes);
    SlotLedger ledger = device.ledger;
    ledger.commit(delta.slots, delta.epoch);

    device.store = std::move(store);
    device.ledger = std::move(ledger);
    device.codes = delta.codes;
    return table;
}

double update_cr(std::size_t n, std::size_t k, std::size_t d, std::size_t vocab, std::size_t beta) {
    require(n > 0 && k > 0 && d > 0 && vocab > 0 && beta > 0, "update_cr: arguments must be positive");
    const double N = static_cast<double>(n), K = static_cast<double>(k), D = static_cast<double>(d);
    const double V = static_cast<double>(vocab), B = static_cast<double>(beta);
    return (N * K * D + N * V) / (B * D + N * V);
}

double end_to_end_cr(std::size_t vocab, std::size_t d, std::size_t n, std::size_t beta) {
    require(vocab > 0 && d > 0 && n > 0 && beta > 0, "end_to_end_cr: arguments must be positive");
    return 1.0 / (static_cast<double>(beta) / static_cast<double>(vocab) + static_cast<double>(n) / static_cast<double>(d));
}

}  // namespace odup
