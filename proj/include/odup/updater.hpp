#pragma once

// Stack- and queue-based update compression of a codebook store.
//
// Server and device both keep a SlotLedger recording, for every store row, the
// epoch and the global sequence number of the delta that last wrote it. The
// "top" of the stack is the set of most recently written rows, the "front" of
// the queue the least recently written ones.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odup/codec.hpp"
#include "odup/error.hpp"

namespace odup {

enum class Strategy : std::uint8_t { full = 0, stack = 1, queue = 2 };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

struct SlotRecord {
    std::uint32_t epoch = 0;
    std::uint64_t seq = 0;

    friend bool operator==(const SlotRecord&, const SlotRecord&) = default;
};

class SlotLedger {
public:
    SlotLedger() = default;
    // Undeployed ledger at epoch 0; the deployment delta (epoch 1, every row)
    // leaves row r with sequence number r.
    explicit SlotLedger(std::size_t rows);
    // The state right after deployment.
    static SlotLedger deployed(std::size_t rows);

    std::size_t size() const noexcept { return records_.size(); }
    std::uint32_t epoch() const noexcept { return epoch_; }
    std::uint64_t next_seq() const noexcept { return next_seq_; }
    const SlotRecord& operator[](std::size_t row) const { return records_.at(row); }
    const std::vector<SlotRecord>& records() const noexcept { return records_; }

    std::size_t count_epoch(std::uint32_t epoch) const;
    // Rows ordered by descending sequence number: position 0 is the top of the
    // stack and the back of the queue.
    std::vector<std::uint32_t> logical_order() const;

    // Records that `slots` were rewritten at `epoch`; slot j gets sequence next_seq + j.
    void commit(std::span<const std::uint32_t> slots, std::uint32_t epoch);

    friend bool operator==(const SlotLedger&, const SlotLedger&) = default;

private:
    std::vector<SlotRecord> records_;
    std::uint32_t epoch_ = 0;
    std::uint64_t next_seq_ = 0;
};

// stack: the beta rows with the highest sequence numbers; queue: the beta
// lowest; full: every row (beta must equal the row count). Ascending row order.
std::vector<std::uint32_t> plan_slots(const SlotLedger& ledger, Strategy strategy, std::size_t beta);

// max(1, floor(nk / r)), at most nk.
std::size_t beta_from_ratio(std::size_t n, std::size_t k, double r);

struct UpdateDelta {
    std::uint32_t epoch = 0;
    Strategy strategy = Strategy::full;
    std::vector<std::uint32_t> slots;  // application order
    Matrix new_rows;                   // beta x d, binary32-representable
    CodeMatrix codes;

    std::size_t beta() const noexcept { return slots.size(); }
    // Transferred elements: beta d codebook entries plus n |V| code entries.
    std::size_t payload_elements() const noexcept { return new_rows.size() + codes.flat().size(); }

    friend bool operator==(const UpdateDelta&, const UpdateDelta&) = default;
};

// Full-strategy epoch-1 delta shipping the whole store.
UpdateDelta deployment_delta(const CodebookStore& store, const CodeMatrix& codes);

struct RetrainResult {
    CodebookStore store;  // rows outside the slots bitwise equal to the previous store
    CodecEncoder encoder;
    CodeMatrix codes;
    UpdateDelta delta;
    std::vector<double> loss_curve;
};

// Warm-started codec retraining with every row outside `slots` frozen. The
// retrained rows are rounded to binary32 so the server store matches what the
// device rebuilds from the frame.
RetrainResult retrain_update(const CodebookStore& prev_store, const CodecEncoder& prev_encoder, const Matrix& new_target,
                             std::span<const std::uint32_t> slots, Strategy strategy, std::uint32_t epoch,
                             const CodecConfig& cfg);

enum class ProtocolFault { stale_delta, strategy_mismatch, slot_divergence, shape_mismatch };

class ProtocolError : public Error {
public:
    ProtocolError(ProtocolFault fault, const std::string& what) : Error(ErrorKind::protocol, what), fault_(fault) {}
    ProtocolFault fault() const noexcept { return fault_; }

private:
    ProtocolFault fault_;
};

// Device-side state for one update session.
struct DeviceState {
    Strategy strategy = Strategy::queue;
    CodebookStore store;
    SlotLedger ledger;
    CodeMatrix codes;
};

DeviceState make_device(Strategy strategy, std::size_t n, std::size_t k, std::size_t d);

// Applies a delta and returns the reconstituted embedding table. The first
// delta must be the deployment; later ones must carry the next epoch, the
// session strategy (or full) and exactly the slots the local ledger plans.
// On any error the state is left untouched.
Matrix apply_delta(DeviceState& device, const UpdateDelta& delta);

// (nkd + n|V|) / (beta d + n|V|)
double update_cr(std::size_t n, std::size_t k, std::size_t d, std::size_t vocab, std::size_t beta);
// 1 / (beta/|V| + n/d)
double end_to_end_cr(std::size_t vocab, std::size_t d, std::size_t n, std::size_t beta);

}  // namespace odup
