#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "odup/wire.hpp"

using namespace odup;

namespace {

UpdateDelta random_delta(Rng& rng) {
    const std::size_t n = 1 + rng.below(6);
    std::size_t k = 2 + rng.below(30);
    if ((n * k) % 2) ++k;
    const std::size_t nk = n * k, d = 1 + rng.below(9), V = 1 + rng.below(60);
    const std::size_t beta = 1 + rng.below(nk);
    UpdateDelta delta;
    delta.epoch = static_cast<std::uint32_t>(1 + rng.below(1000));
    delta.strategy = static_cast<Strategy>(rng.below(3));
    std::vector<std::uint32_t> all(nk);
    std::iota(all.begin(), all.end(), 0u);
    rng.shuffle(all);
    delta.slots.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(beta));
    delta.new_rows = Matrix(beta, d);
    for (double& x : delta.new_rows.flat()) x = static_cast<float>(rng.normal());
    delta.codes = CodeMatrix(V, n, k);
    for (std::size_t v = 0; v < V; ++v)
        for (std::size_t i = 0; i < n; ++i) delta.codes.set(v, i, static_cast<std::uint32_t>(rng.below(k)));
    return delta;
}

void reseal(Bytes& frame) {
    const std::uint32_t c = crc32(std::span(frame).first(frame.size() - 4));
    for (int i = 0; i < 4; ++i) frame[frame.size() - 4 + i] = static_cast<std::uint8_t>(c >> (8 * i));
}

WireFault fault_of(const Bytes& frame) {
    try {
        decode_delta(frame);
    } catch (const WireError& e) {
        return e.fault();
    }
    ADD_FAILURE() << "frame decoded";
    return WireFault::truncated;
}

}  // namespace

TEST(BitPacking, WidthAndOrder) {
    EXPECT_EQ(bits_for(1), 1u);
    EXPECT_EQ(bits_for(2), 1u);
    EXPECT_EQ(bits_for(16), 4u);
    EXPECT_EQ(bits_for(17), 5u);
    EXPECT_EQ(bits_for(32), 5u);
    BitWriter w;
    w.put(0b101, 3);
    w.put(0b1, 1);
    w.put(0b11, 2);
    EXPECT_EQ(std::move(w).finish(), (Bytes{0b10111100}));
}

TEST(Crc, KnownValue) {
    const std::string s = "123456789";
    EXPECT_EQ(crc32(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())), 0xCBF43926u);
}

TEST(DeltaBytes, LayoutArithmetic) {
    EXPECT_EQ(delta_bytes(1000, 8, 16, 32, 16), 6144u);
    EXPECT_EQ(delta_bytes(10000, 20, 32, 128, 64), 158056u);
    EXPECT_NEAR(10000.0 * 128 * 4 / 158056.0, 32.4, 0.05);
    const std::size_t nk = 20 * 32;
    EXPECT_EQ(delta_bytes(10000, 20, 32, 128, nk) - delta_bytes(10000, 20, 32, 128, 1), (nk - 1) * 128 * 4 + (nk - 1) * 4);
}

TEST(DeltaFrame, MatchesLayoutExample) {
    Rng rng(1);
    UpdateDelta delta;
    delta.epoch = 2;
    delta.strategy = Strategy::queue;
    for (std::uint32_t s = 0; s < 16; ++s) delta.slots.push_back(s * 3);
    delta.new_rows = Matrix(16, 32, 0.5);
    delta.codes = CodeMatrix(1000, 8, 16);
    const Bytes frame = encode_delta(delta);
    EXPECT_EQ(frame.size(), 6144u);
    EXPECT_EQ(std::string(frame.begin(), frame.begin() + 4), "ODUP");
}

TEST(DeltaFrame, RandomRoundTrips) {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const UpdateDelta delta = random_delta(rng);
        const Bytes frame = encode_delta(delta);
        ASSERT_EQ(frame.size(), delta_bytes(delta.codes.vocab(), delta.codes.n(), delta.codes.k(), delta.new_rows.cols(),
                                            delta.beta()));
        const UpdateDelta back = decode_delta(frame);
        EXPECT_EQ(back, delta);
        EXPECT_EQ(encode_delta(back), frame);
    }
}

TEST(DeltaFrame, EverySingleBitFlipIsRejected) {
    Rng rng(3);
    for (int i = 0; i < 5; ++i) {
        const Bytes frame = encode_delta(random_delta(rng));
        for (std::size_t bit = 0; bit < frame.size() * 8; ++bit) {
            Bytes bad = frame;
            bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
            EXPECT_THROW(decode_delta(bad), WireError) << "bit " << bit;
        }
    }
}

TEST(DeltaFrame, TruncationIsRejected) {
    Rng rng(4);
    const Bytes frame = encode_delta(random_delta(rng));
    for (std::size_t len = 0; len < frame.size(); len += 3) {
        const Bytes cut(frame.begin(), frame.begin() + static_cast<std::ptrdiff_t>(len));
        const auto f = fault_of(cut);
        EXPECT_TRUE(f == WireFault::truncated || f == WireFault::size_mismatch);
    }
    Bytes longer = frame;
    longer.push_back(0);
    EXPECT_EQ(fault_of(longer), WireFault::size_mismatch);
}

TEST(DeltaFrame, HeaderFaultsAreNamed) {
    Rng rng(5);
    const Bytes frame = encode_delta(random_delta(rng));
    Bytes b = frame;
    b[0] = 'X';
    EXPECT_EQ(fault_of(b), WireFault::bad_magic);
    b = frame;
    b[4] = 9;
    EXPECT_EQ(fault_of(b), WireFault::bad_version);
    b = frame;
    b[5] = 3;
    EXPECT_EQ(fault_of(b), WireFault::bad_strategy);
    b = frame;
    b[6] = 1;
    EXPECT_EQ(fault_of(b), WireFault::bad_reserved);
    b = frame;
    b = frame;
    b[b.size() - 1] ^= 0xFF;
    EXPECT_EQ(fault_of(b), WireFault::bad_crc);
}

TEST(DeltaFrame, RangeFaultsSurviveAValidCrc) {
    UpdateDelta delta;
    delta.epoch = 3;
    delta.strategy = Strategy::stack;
    delta.slots = {0, 1};
    delta.new_rows = Matrix(2, 2, 1.0);
    delta.codes = CodeMatrix(2, 2, 5);  // 3 bits per component, max encodable 7
    const Bytes frame = encode_delta(delta);

    Bytes bad_code = frame;
    bad_code[delta_header_bytes] = 0xFF;
    reseal(bad_code);
    EXPECT_EQ(fault_of(bad_code), WireFault::code_range);

    const std::size_t slot_at = delta_header_bytes + packed_code_bytes(2, 2, 5);
    Bytes bad_slot = frame;
    bad_slot[slot_at] = 10;
    reseal(bad_slot);
    EXPECT_EQ(fault_of(bad_slot), WireFault::slot_range);

    Bytes dup = frame;
    dup[slot_at + 4] = 0;
    reseal(dup);
    EXPECT_EQ(fault_of(dup), WireFault::duplicate_slot);

    Bytes nan = frame;
    const std::size_t row_at = slot_at + 8;
    nan[row_at + 0] = 0x00;
    nan[row_at + 1] = 0x00;
    nan[row_at + 2] = 0xC0;
    nan[row_at + 3] = 0x7F;
    reseal(nan);
    EXPECT_EQ(fault_of(nan), WireFault::non_finite);
}

TEST(DeltaFrame, ZeroBetaIsInvalid) {
    UpdateDelta delta;
    delta.epoch = 2;
    delta.strategy = Strategy::queue;
    delta.new_rows = Matrix(0, 3);
    delta.codes = CodeMatrix(3, 2, 2);
    EXPECT_THROW(encode_delta(delta), Error);
}

TEST(ModelFile, RoundTrip) {
    Rng rng(6);
    CompressedModel m;
    m.store = CodebookStore(4, 8, Matrix(32, 5));
    for (double& x : m.store.rows().flat()) x = static_cast<float>(rng.normal());
    m.codes = CodeMatrix(50, 4, 8);
    for (std::size_t v = 0; v < 50; ++v)
        for (std::size_t i = 0; i < 4; ++i) m.codes.set(v, i, static_cast<std::uint32_t>(rng.below(8)));
    const Bytes bytes = encode_model(m);
    EXPECT_EQ(decode_model(bytes), m);
    Bytes bad = bytes;
    bad[bad.size() / 2] ^= 4;
    EXPECT_THROW(decode_model(bad), WireError);
}

TEST(Checkpoint, RoundTripIsExact) {
    Rng rng(7);
    RecModel m = make_model(30, 6, EncoderKind::last_item_gated, rng);
    m.encoder.gate_logit = 0.123456789012345;
    const RecModel back = decode_checkpoint(encode_checkpoint(m));
    EXPECT_EQ(back.embeddings, m.embeddings);
    EXPECT_EQ(back.encoder.gate_logit, m.encoder.gate_logit);
    EXPECT_EQ(back.encoder.kind, m.encoder.kind);
}

TEST(Files, WriteAndRead) {
    const auto path = std::filesystem::temp_directory_path() / "odup_wire_test.bin";
    const Bytes data{1, 2, 3, 250};
    write_file(path, data);
    EXPECT_EQ(read_file(path), data);
    std::filesystem::remove(path);
    EXPECT_THROW(read_file(path), Error);
}
