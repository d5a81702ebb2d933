#pragma once

// Little-endian byte buffers, MSB-first bit packing and CRC-32 (IEEE).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace odup {

using Bytes = std::vector<std::uint8_t>;

std::uint32_t crc32(std::span<const std::uint8_t> data);

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
    void str(const std::string& s);  // u32 length + bytes
    // Appends crc32 over everything written so far.
    void seal_crc();

    std::size_t size() const noexcept { return buf_.size(); }
    const Bytes& bytes() const& noexcept { return buf_; }
    Bytes take() && { return std::move(buf_); }

private:
    Bytes buf_;
};

// Bounds-checked reader. Reading past the end throws ByteOverrun.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    std::span<const std::uint8_t> raw(std::size_t n);
    std::string str();

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

// Thrown by ByteReader on overrun; callers translate it to their format's error.
struct ByteOverrun {
    std::size_t wanted;
    std::size_t available;
};

// Bits per code component: ceil(log2 k), and at least one.
unsigned bits_for(std::uint32_t k);

// Continuous MSB-first bitstream, zero-padded to a byte boundary on finish().
class BitWriter {
public:
    void put(std::uint32_t value, unsigned bits);
    Bytes finish() &&;

private:
    Bytes out_;
    std::uint32_t acc_ = 0;
    unsigned filled_ = 0;
};

class BitReader {
public:
    explicit BitReader(std::span<const std::uint8_t> data) : data_(data) {}
    std::uint32_t get(unsigned bits);

private:
    std::span<const std::uint8_t> data_;
    std::size_t bit_pos_ = 0;
};

}  // namespace odup
