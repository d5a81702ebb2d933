#include "odup/wire.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace odup {

std::string_view to_string(WireFault fault) {
    switch (fault) {
    case WireFault::truncated:
        return "truncated";
    case WireFault::bad_magic:
        return "bad magic";
    case WireFault::bad_version:
        return "bad version";
    case WireFault::bad_strategy:
        return "bad strategy";
    case WireFault::bad_reserved:
        return "bad reserved bytes";
    case WireFault::bad_dims:
        return "bad dimensions";
    case WireFault::size_mismatch:
        return "size mismatch";
    case WireFault::bad_crc:
        return "CRC mismatch";
    case WireFault::code_range:
        return "code out of range";
    case WireFault::slot_range:
        return "slot out of range";
    case WireFault::duplicate_slot:
        return "duplicate slot";
    case WireFault::non_finite:
        return "non-finite value";
    }
    return "?";
}

WireError::WireError(WireFault fault, const std::string& what)
    : Error(ErrorKind::protocol, std::string(to_string(fault)) + ": " + what), fault_(fault) {}

namespace {

constexpr std::uint8_t wire_version = 1;

[[noreturn]] void fail(WireFault fault, const std::string& what) { throw WireError(fault, what); }

// a * b + c without wrapping; failures mean the declared sizes cannot be real.
std::uint64_t mul_add(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    std::uint64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out) || __builtin_add_overflow(out, c, &out))
        fail(WireFault::size_mismatch, "declared sizes overflow");
    return out;
}

std::uint64_t packed_bytes_checked(std::uint64_t vocab, std::uint64_t n, std::uint64_t k) {
    const std::uint64_t bits = mul_add(mul_add(vocab, n), bits_for(static_cast<std::uint32_t>(k)));
    return bits / 8 + (bits % 8 != 0 ? 1 : 0);
}

std::uint64_t delta_bytes_checked(std::uint64_t vocab, std::uint64_t n, std::uint64_t k, std::uint64_t d,
                                  std::uint64_t beta) {
    std::uint64_t total = delta_header_bytes + 4;
    total = mul_add(1, packed_bytes_checked(vocab, n, k), total);
    total = mul_add(beta, 4, total);
    total = mul_add(mul_add(beta, d), 4, total);
    return total;
}

void check_crc(std::span<const std::uint8_t> bytes) {
    const auto body = bytes.first(bytes.size() - 4);
    ByteReader tail(bytes.last(4));
    const std::uint32_t stored = tail.u32();
    const std::uint32_t actual = crc32(body);
    if (stored != actual) fail(WireFault::bad_crc, "stored checksum does not match the payload");
}

void write_rows_f32(ByteWriter& w, const Matrix& rows) {
    for (double v : rows.flat()) {
        require(std::isfinite(v), "cannot serialise non-finite row values");
        w.f32(static_cast<float>(v));
    }
}

Matrix read_rows_f32(ByteReader& r, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) {
        const float f = r.f32();
        if (!std::isfinite(f)) fail(WireFault::non_finite, "row value is not finite");
        v = static_cast<double>(f);
    }
    return m;
}

void check_magic(std::span<const std::uint8_t> bytes, const char* magic) {
    if (bytes.size() < 4) fail(WireFault::truncated, "buffer shorter than the magic");
    if (std::memcmp(bytes.data(), magic, 4) != 0) fail(WireFault::bad_magic, std::string("expected ") + magic);
}

}  // namespace

std::size_t packed_code_bytes(std::size_t vocab, std::size_t n, std::size_t k) {
    return static_cast<std::size_t>(packed_bytes_checked(vocab, n, k));
}

Bytes pack_codes(const CodeMatrix& codes) {
    require(codes.k() >= 1, "pack_codes: k must be at least 1");
    const unsigned bits = bits_for(static_cast<std::uint32_t>(codes.k()));
    BitWriter w;
    for (auto c : codes.flat()) w.put(c, bits);
    return std::move(w).finish();
}

CodeMatrix unpack_codes(std::span<const std::uint8_t> bytes, std::size_t vocab, std::size_t n, std::size_t k) {
    if (bytes.size() != packed_code_bytes(vocab, n, k)) fail(WireFault::size_mismatch, "packed code length");
    const unsigned bits = bits_for(static_cast<std::uint32_t>(k));
    BitReader r(bytes);
    std::vector<std::uint32_t> flat(vocab * n);
    for (auto& c : flat) {
        c = r.get(bits);
        if (c >= k) fail(WireFault::code_range, "code " + std::to_string(c) + " >= k = " + std::to_string(k));
    }
    return CodeMatrix(vocab, n, k, std::move(flat));
}

std::size_t delta_bytes(std::size_t vocab, std::size_t n, std::size_t k, std::size_t d, std::size_t beta) {
    require(vocab > 0 && n > 0 && k > 0 && d > 0 && beta > 0, "delta_bytes: arguments must be positive");
    return static_cast<std::size_t>(delta_bytes_checked(vocab, n, k, d, beta));
}

Bytes encode_delta(const UpdateDelta& delta) {
    const std::size_t beta = delta.beta();
    const std::size_t n = delta.codes.n();
    const std::size_t k = delta.codes.k();
    const std::size_t d = delta.new_rows.cols();
    const std::size_t vocab = delta.codes.vocab();
    require(beta >= 1, "encode_delta: a frame carries at least one row");
    require(delta.new_rows.rows() == beta, "encode_delta: row count differs from the slot count");
    require(n >= 1 && n <= 0xFFFF && k >= 1 && k <= 0xFFFF, "encode_delta: n and k must fit in 16 bits");
    require(vocab >= 1 && vocab <= 0xFFFFFFFFu && d >= 1 && d <= 0xFFFFFFFFu, "encode_delta: bad dimensions");
    require(beta <= n * k, "encode_delta: beta exceeds nk");
    for (auto s : delta.slots) require(s < n * k, "encode_delta: slot out of range");

    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("ODUP"), 4));
    w.u8(wire_version);
    w.u8(static_cast<std::uint8_t>(delta.strategy));
    w.u8(0);
    w.u8(0);
    w.u32(delta.epoch);
    w.u32(static_cast<std::uint32_t>(vocab));
    w.u16(static_cast<std::uint16_t>(n));
    w.u16(static_cast<std::uint16_t>(k));
    w.u32(static_cast<std::uint32_t>(d));
    w.u32(static_cast<std::uint32_t>(beta));
    w.raw(pack_codes(delta.codes));
    for (auto s : delta.slots) w.u32(s);
    write_rows_f32(w, delta.new_rows);
    w.seal_crc();
    return std::move(w).take();
}

UpdateDelta decode_delta(std::span<const std::uint8_t> bytes) {
    check_magic(bytes, "ODUP");
    if (bytes.size() < delta_header_bytes) fail(WireFault::truncated, "buffer shorter than the header");
    ByteReader r(bytes);
    r.raw(4);
    const std::uint8_t version = r.u8();
    if (version != wire_version) fail(WireFault::bad_version, "version " + std::to_string(version));
    const std::uint8_t strategy = r.u8();
    if (strategy > 2) fail(WireFault::bad_strategy, "strategy byte " + std::to_string(strategy));
    if (r.u8() != 0 || r.u8() != 0) fail(WireFault::bad_reserved, "reserved header bytes must be zero");
    UpdateDelta delta;
    delta.strategy = static_cast<Strategy>(strategy);
    delta.epoch = r.u32();
    const std::uint32_t vocab = r.u32();
    const std::uint16_t n = r.u16();
    const std::uint16_t k = r.u16();
    const std::uint32_t d = r.u32();
    const std::uint32_t beta = r.u32();
    if (vocab == 0 || n == 0 || k == 0 || d == 0 || beta == 0 ||
        static_cast<std::uint64_t>(beta) > static_cast<std::uint64_t>(n) * k)
        fail(WireFault::bad_dims, "header dimensions are inconsistent");
    const std::uint64_t expected = delta_bytes_checked(vocab, n, k, d, beta);
    if (bytes.size() != expected)
        fail(WireFault::size_mismatch,
             "frame is " + std::to_string(bytes.size()) + " bytes, header implies " + std::to_string(expected));
    check_crc(bytes);

    delta.codes = unpack_codes(r.raw(packed_code_bytes(vocab, n, k)), vocab, n, k);
    const std::size_t nk = static_cast<std::size_t>(n) * k;
    std::vector<char> seen(nk, 0);
    delta.slots.resize(beta);
    for (auto& s : delta.slots) {
        s = r.u32();
        if (s >= nk) fail(WireFault::slot_range, "slot " + std::to_string(s) + " >= nk = " + std::to_string(nk));
        if (seen[s]) fail(WireFault::duplicate_slot, "slot " + std::to_string(s) + " repeated");
        seen[s] = 1;
    }
    delta.new_rows = read_rows_f32(r, beta, d);
    return delta;
}

Bytes encode_model(const CompressedModel& model) {
    const auto& codes = model.codes;
    const auto& store = model.store;
    require(codes.n() == store.n() && codes.k() == store.k(), "encode_model: codes and store disagree on n or k");
    require(store.n() <= 0xFFFF && store.k() <= 0xFFFF, "encode_model: n and k must fit in 16 bits");
    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("ODCM"), 4));
    w.u8(wire_version);
    w.u8(0);
    w.u8(0);
    w.u8(0);
    w.u32(static_cast<std::uint32_t>(codes.vocab()));
    w.u32(static_cast<std::uint32_t>(store.d()));
    w.u16(static_cast<std::uint16_t>(store.n()));
    w.u16(static_cast<std::uint16_t>(store.k()));
    w.raw(pack_codes(codes));
    write_rows_f32(w, store.rows());
    w.seal_crc();
    return std::move(w).take();
}

CompressedModel decode_model(std::span<const std::uint8_t> bytes) {
    check_magic(bytes, "ODCM");
    constexpr std::size_t header = 20;
    if (bytes.size() < header + 4) fail(WireFault::truncated, "buffer shorter than the header");
    ByteReader r(bytes);
    r.raw(4);
    if (r.u8() != wire_version) fail(WireFault::bad_version, "unsupported model version");
    if (r.u8() != 0 || r.u8() != 0 || r.u8() != 0) fail(WireFault::bad_reserved, "reserved header bytes must be zero");
    const std::uint32_t vocab = r.u32();
    const std::uint32_t d = r.u32();
    const std::uint16_t n = r.u16();
    const std::uint16_t k = r.u16();
    if (vocab == 0 || d == 0 || n == 0 || k == 0) fail(WireFault::bad_dims, "zero dimension");
    const std::uint64_t expected =
        mul_add(mul_add(mul_add(n, k), d), 4, header + 4 + packed_bytes_checked(vocab, n, k));
    if (bytes.size() != expected) fail(WireFault::size_mismatch, "model file length does not match its header");
    check_crc(bytes);
    CompressedModel model;
    model.codes = unpack_codes(r.raw(packed_code_bytes(vocab, n, k)), vocab, n, k);
    model.store = CodebookStore(n, k, read_rows_f32(r, static_cast<std::size_t>(n) * k, d));
    return model;
}

Bytes encode_checkpoint(const RecModel& model) {
    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("ODCK"), 4));
    w.u8(wire_version);
    w.u8(static_cast<std::uint8_t>(model.encoder.kind));
    w.u8(0);
    w.u8(0);
    w.f64(model.encoder.gate_logit);
    w.u32(static_cast<std::uint32_t>(model.embeddings.rows()));
    w.u32(static_cast<std::uint32_t>(model.embeddings.cols()));
    for (double v : model.embeddings.flat()) w.f64(v);
    w.seal_crc();
    return std::move(w).take();
}

RecModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
    check_magic(bytes, "ODCK");
    constexpr std::size_t header = 24;
    if (bytes.size() < header + 4) fail(WireFault::truncated, "buffer shorter than the header");
    ByteReader r(bytes);
    r.raw(4);
    if (r.u8() != wire_version) fail(WireFault::bad_version, "unsupported checkpoint version");
    const std::uint8_t kind = r.u8();
    if (kind > 1) fail(WireFault::bad_dims, "unknown encoder kind");
    if (r.u8() != 0 || r.u8() != 0) fail(WireFault::bad_reserved, "reserved header bytes must be zero");
    RecModel model;
    model.encoder.kind = static_cast<EncoderKind>(kind);
    model.encoder.gate_logit = r.f64();
    const std::uint32_t vocab = r.u32();
    const std::uint32_t d = r.u32();
    if (vocab == 0 || d == 0) fail(WireFault::bad_dims, "zero dimension");
    if (bytes.size() != mul_add(mul_add(vocab, d), 8, header + 4))
        fail(WireFault::size_mismatch, "checkpoint length does not match its header");
    check_crc(bytes);
    if (!std::isfinite(model.encoder.gate_logit)) fail(WireFault::non_finite, "gate logit is not finite");
    model.embeddings = Matrix(vocab, d);
    for (double& v : model.embeddings.flat()) {
        v = r.f64();
        if (!std::isfinite(v)) fail(WireFault::non_finite, "embedding value is not finite");
    }
    return model;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

}  // namespace odup
