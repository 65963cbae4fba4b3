#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace adpq {

/// Appends little-endian scalars to a growing byte buffer.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
    void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    std::size_t size() const noexcept { return buf_.size(); }
    std::vector<std::uint8_t>& buffer() noexcept { return buf_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(buf_); }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader. Running past the end throws with
/// the configured error code.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes, ErrorCode on_short = ErrorCode::Truncated)
        : bytes_(bytes), on_short_(on_short) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    std::string_view str(std::size_t n) {
        auto s = take(n);
        return {reinterpret_cast<const char*>(s.data()), s.size()};
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (n > remaining()) {
            fail(on_short_, "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) + ", only " +
                                std::to_string(remaining()) + " remain");
        }
    }

    std::uint64_t get_le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    ErrorCode on_short_;
};

/// MSB-first bit packer. Each field is written high bit first; flush()
/// zero-pads to the next byte boundary.
class BitWriter {
public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void put(std::uint32_t value, int width) {
        for (int i = width - 1; i >= 0; --i) {
            acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((value >> i) & 1u));
            if (++fill_ == 8) {
                out_.push_back(acc_);
                acc_ = 0;
                fill_ = 0;
            }
        }
    }

    /// Returns the number of padding bits emitted.
    int flush() {
        if (fill_ == 0) return 0;
        const int pad = 8 - fill_;
        out_.push_back(static_cast<std::uint8_t>(acc_ << pad));
        acc_ = 0;
        fill_ = 0;
        return pad;
    }

private:
    std::vector<std::uint8_t>& out_;
    std::uint8_t acc_ = 0;
    int fill_ = 0;
};

class BitReader {
public:
    explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t get(int width) {
        if (bit_ + static_cast<std::size_t>(width) > bytes_.size() * 8) {
            fail(ErrorCode::Truncated, "bitstream ended mid-field");
        }
        std::uint32_t v = 0;
        for (int i = 0; i < width; ++i, ++bit_) {
            v = (v << 1) | ((bytes_[bit_ >> 3] >> (7 - (bit_ & 7))) & 1u);
        }
        return v;
    }

    /// Skips to the next byte boundary and reports whether the skipped bits were zero.
    bool align() {
        bool zero = true;
        while (bit_ & 7) {
            zero = zero && ((bytes_[bit_ >> 3] >> (7 - (bit_ & 7))) & 1u) == 0;
            ++bit_;
        }
        return zero;
    }

    std::size_t bytes_consumed() const noexcept { return (bit_ + 7) / 8; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t bit_ = 0;
};

} // namespace adpq
