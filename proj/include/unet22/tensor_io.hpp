#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "unet22/tensor.hpp"

// Binary tensor records: magic "T22F", u8 version (1), u8 dtype (0 = f32,
// 1 = f64), u8 rank, rank x u32 little-endian extents, then the payload as
// little-endian scalars in row-major order. No padding anywhere.

namespace unet22 {

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

template <typename S>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() {
    return Dtype::f32;
}
template <>
constexpr Dtype dtype_of<double>() {
    return Dtype::f64;
}

namespace detail {

inline void put_u8(std::string& buf, uint8_t v) { buf.push_back(static_cast<char>(v)); }

inline void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& buf, float v) { put_u32(buf, std::bit_cast<uint32_t>(v)); }

inline void put_f64(std::string& buf, double v) {
    const uint64_t u = std::bit_cast<uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

inline void read_exact(std::istream& in, char* dst, size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n)
        throw IoError(std::string("truncated tensor record while reading ") + what);
}

inline uint8_t get_u8(std::istream& in, const char* what) {
    char c;
    read_exact(in, &c, 1, what);
    return static_cast<uint8_t>(c);
}

inline uint16_t get_u16(std::istream& in, const char* what) {
    unsigned char b[2];
    read_exact(in, reinterpret_cast<char*>(b), 2, what);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    read_exact(in, reinterpret_cast<char*>(b), 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <typename S>
void write_tensor_record(std::ostream& out, const TensorT<S>& t) {
    std::string buf;
    buf.reserve(7 + 4 * static_cast<size_t>(t.rank()) + t.vec().size() * sizeof(S));
    buf += "T22F";
    detail::put_u8(buf, 1);
    detail::put_u8(buf, static_cast<uint8_t>(dtype_of<S>()));
    detail::put_u8(buf, static_cast<uint8_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) detail::put_u32(buf, static_cast<uint32_t>(t.size(a)));
    for (const S& v : t.vec()) {
        if constexpr (sizeof(S) == 4)
            detail::put_f32(buf, static_cast<float>(v));
        else
            detail::put_f64(buf, static_cast<double>(v));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing tensor record");
}

// Reads one record, casting the stored scalars to S. Reading an f64 record
// into float narrows each value; the reverse widens exactly.
template <typename S>
TensorT<S> read_tensor_record(std::istream& in, Dtype* stored_dtype = nullptr) {
    char magic[4];
    detail::read_exact(in, magic, 4, "magic");
    if (std::memcmp(magic, "T22F", 4) != 0) throw IoError("bad tensor record magic");
    const uint8_t version = detail::get_u8(in, "version");
    if (version != 1) throw IoError("unsupported tensor record version " + std::to_string(version));
    const uint8_t dt = detail::get_u8(in, "dtype");
    if (dt > 1) throw IoError("unknown tensor record dtype " + std::to_string(dt));
    if (stored_dtype) *stored_dtype = static_cast<Dtype>(dt);
    const uint8_t rank = detail::get_u8(in, "rank");
    if (rank > 4) throw IoError("tensor record rank " + std::to_string(rank) + " exceeds 4");
    std::vector<int> shape(rank);
    int64_t numel = 1;
    for (int a = 0; a < rank; ++a) {
        const uint32_t e = detail::get_u32(in, "extent");
        if (e == 0 || e > 0x7fffffffu)
            throw IoError("tensor record extent " + std::to_string(e) + " out of range");
        shape[static_cast<size_t>(a)] = static_cast<int>(e);
        numel *= e;
        if (numel > (int64_t(1) << 33))
            throw IoError("tensor record too large: " + std::to_string(numel) + " elements");
    }
    TensorT<S> t(shape);
    const size_t n = static_cast<size_t>(numel);
    if (dt == 0) {
        std::vector<char> raw(n * 4);
        detail::read_exact(in, raw.data(), raw.size(), "f32 payload");
        const unsigned char* p = reinterpret_cast<const unsigned char*>(raw.data());
        for (size_t i = 0; i < n; ++i, p += 4) {
            const uint32_t u = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                               (static_cast<uint32_t>(p[2]) << 16) |
                               (static_cast<uint32_t>(p[3]) << 24);
            t.vec()[i] = static_cast<S>(std::bit_cast<float>(u));
        }
    } else {
        std::vector<char> raw(n * 8);
        detail::read_exact(in, raw.data(), raw.size(), "f64 payload");
        const unsigned char* p = reinterpret_cast<const unsigned char*>(raw.data());
        for (size_t i = 0; i < n; ++i, p += 8) {
            uint64_t u = 0;
            for (int k = 7; k >= 0; --k) u = (u << 8) | p[k];
            t.vec()[i] = static_cast<S>(std::bit_cast<double>(u));
        }
    }
    return t;
}

template <typename S>
void save_tensor(const std::string& path, const TensorT<S>& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    write_tensor_record(out, t);
    if (!out) throw IoError("failed writing " + path);
}

template <typename S>
TensorT<S> load_tensor(const std::string& path, Dtype* stored_dtype = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    TensorT<S> t = read_tensor_record<S>(in, stored_dtype);
    return t;
}

}  // namespace unet22
