#include "odup/bytes.hpp"

#include <algorithm>
#include <bit>
#include <climits>
#include <cstring>

#include <zlib.h>

#include "odup/error.hpp"

namespace odup {

std::uint32_t crc32(std::span<const std::uint8_t> data) {
    uLong c = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large buffers.
    std::size_t off = 0;
    while (off < data.size()) {
        const std::size_t chunk = std::min<std::size_t>(data.size() - off, 1u << 30);
        c = ::crc32(c, data.data() + off, static_cast<uInt>(chunk));
        off += chunk;
    }
    return static_cast<std::uint32_t>(c);
}

void ByteWriter::u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::seal_crc() { u32(crc32(buf_)); }

void ByteReader::need(std::size_t n) const {
    if (remaining() < n) throw ByteOverrun{n, remaining()};
}

std::uint8_t ByteReader::u8() {
    need(1);
    return data_[pos_++];
}

std::uint16_t ByteReader::u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
}

std::string ByteReader::str() {
    const auto n = u32();
    auto s = raw(n);
    return {s.begin(), s.end()};
}

unsigned bits_for(std::uint32_t k) {
    if (k <= 2) return 1;
    return static_cast<unsigned>(std::bit_width(k - 1));
}

void BitWriter::put(std::uint32_t value, unsigned bits) {
    require(bits >= 1 && bits <= 24, "BitWriter: width must be in [1, 24]");
    require(value < (1u << bits), "BitWriter: value does not fit in width");
    for (unsigned b = bits; b-- > 0;) {
        acc_ = (acc_ << 1) | ((value >> b) & 1u);
        if (++filled_ == 8) {
            out_.push_back(static_cast<std::uint8_t>(acc_));
            acc_ = 0;
            filled_ = 0;
        }
    }
}

Bytes BitWriter::finish() && {
    if (filled_ > 0) {
        out_.push_back(static_cast<std::uint8_t>(acc_ << (8 - filled_)));
        acc_ = 0;
        filled_ = 0;
    }
    return std::move(out_);
}

std::uint32_t BitReader::get(unsigned bits) {
    if (bit_pos_ + bits > data_.size() * CHAR_BIT) throw ByteOverrun{bits, data_.size() * CHAR_BIT - bit_pos_};
    std::uint32_t v = 0;
    for (unsigned b = 0; b < bits; ++b, ++bit_pos_) {
        const std::uint8_t byte = data_[bit_pos_ / 8];
        v = (v << 1) | ((byte >> (7 - bit_pos_ % 8)) & 1u);
    }
    return v;
}

}  // namespace odup
