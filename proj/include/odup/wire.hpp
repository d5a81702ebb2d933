#pragma once

// Binary formats: update delta frames, compressed-model files and recommender
// checkpoints. All integers are little-endian; every format ends in a CRC-32
// over the preceding bytes.
//
// Delta frame ("ODUP", version 1):
//   0  magic "ODUP"        4  u8 version       5  u8 strategy (0 full, 1 stack, 2 queue)
//   6  u8 0, u8 0          8  u32 epoch       12  u32 vocab
//   16 u16 n               18 u16 k           20  u32 d
//   24 u32 beta            28 packed codes (ceil(log2 k) bits each, at least 1, MSB first,
//                             item-major, zero-padded to a byte)
//   then beta u32 slots, beta*d f32 rows (row-major), u32 CRC.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "odup/bytes.hpp"
#include "odup/codec.hpp"
#include "odup/error.hpp"
#include "odup/recommender.hpp"
#include "odup/updater.hpp"

namespace odup {

enum class WireFault {
    truncated,
    bad_magic,
    bad_version,
    bad_strategy,
    bad_reserved,
    bad_dims,
    size_mismatch,
    bad_crc,
    code_range,
    slot_range,
    duplicate_slot,
    non_finite,
};

std::string_view to_string(WireFault fault);

class WireError : public Error {
public:
    WireError(WireFault fault, const std::string& what);
    WireFault fault() const noexcept { return fault_; }

private:
    WireFault fault_;
};

inline constexpr std::size_t delta_header_bytes = 28;

std::size_t packed_code_bytes(std::size_t vocab, std::size_t n, std::size_t k);
Bytes pack_codes(const CodeMatrix& codes);
// Throws WireError(code_range) on a component >= k.
CodeMatrix unpack_codes(std::span<const std::uint8_t> bytes, std::size_t vocab, std::size_t n, std::size_t k);

Bytes encode_delta(const UpdateDelta& delta);
UpdateDelta decode_delta(std::span<const std::uint8_t> bytes);
// Length of encode_delta's output for these dimensions.
std::size_t delta_bytes(std::size_t vocab, std::size_t n, std::size_t k, std::size_t d, std::size_t beta);

// Element-count and byte-level sizes of the uncompressed table.
inline std::size_t table_elements(std::size_t vocab, std::size_t d) { return vocab * d; }
inline std::size_t table_bytes(std::size_t vocab, std::size_t d) { return 4 * vocab * d; }

// Compressed-model file ("ODCM"): version, |V|, d, n, k, packed codes, store rows as f32, CRC.
struct CompressedModel {
    CodebookStore store;
    CodeMatrix codes;

    friend bool operator==(const CompressedModel&, const CompressedModel&) = default;
};

Bytes encode_model(const CompressedModel& model);
CompressedModel decode_model(std::span<const std::uint8_t> bytes);

// Recommender checkpoint ("ODCK"): version, encoder kind, gate logit, |V|, d, f64 rows, CRC.
Bytes encode_checkpoint(const RecModel& model);
RecModel decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
Bytes read_file(const std::filesystem::path& path);

}  // namespace odup
