// Binary container for tensors (".tns") and the little-endian primitives
// shared with the checkpoint format. Round-trips are bit-exact.
//
// Layout: magic "TNSR", u32 version = 1, u8 dtype (0 = f32, 1 = f64),
// u8 ndim, ndim x u64 dims, row-major little-endian payload.
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "wmamba/tensor.hpp"

namespace wmamba::io {

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), std::streamsize(n));
    if (!os) fail("io: write failed");
}
inline void get_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(is.gcount()) != n) fail("io: unexpected end of stream");
}

inline void put_u8(std::ostream& os, uint8_t v) { put_bytes(os, &v, 1); }
inline void put_u16(std::ostream& os, uint16_t v) {
    uint8_t b[2] = {uint8_t(v), uint8_t(v >> 8)};
    put_bytes(os, b, 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = uint8_t(v >> (8 * i));
    put_bytes(os, b, 4);
}
inline void put_u64(std::ostream& os, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = uint8_t(v >> (8 * i));
    put_bytes(os, b, 8);
}
inline uint8_t get_u8(std::istream& is) {
    uint8_t v;
    get_bytes(is, &v, 1);
    return v;
}
inline uint16_t get_u16(std::istream& is) {
    uint8_t b[2];
    get_bytes(is, b, 2);
    return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}
inline uint32_t get_u32(std::istream& is) {
    uint8_t b[4];
    get_bytes(is, b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
}
inline uint64_t get_u64(std::istream& is) {
    uint8_t b[8];
    get_bytes(is, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

template <class T>
constexpr uint8_t dtype_tag() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 0 : 1;
}

template <class T>
void put_payload(std::ostream& os, const std::vector<T>& data) {
    for (T v : data) {
        if constexpr (std::is_same_v<T, float>)
            put_u32(os, std::bit_cast<uint32_t>(v));
        else
            put_u64(os, std::bit_cast<uint64_t>(v));
    }
}
template <class T>
void get_payload(std::istream& is, std::vector<T>& data) {
    for (auto& v : data) {
        if constexpr (std::is_same_v<T, float>)
            v = std::bit_cast<float>(get_u32(is));
        else
            v = std::bit_cast<double>(get_u64(is));
    }
}

}  // namespace wmamba::io

namespace wmamba {

constexpr uint32_t kTnsVersion = 1;

template <class T>
void write_tns(std::ostream& os, const tensor<T>& t) {
    io::put_bytes(os, "TNSR", 4);
    io::put_u32(os, kTnsVersion);
    io::put_u8(os, io::dtype_tag<T>());
    check(t.ndim() <= 255, "write_tns: rank too large");
    io::put_u8(os, uint8_t(t.ndim()));
    for (size_t d : t.shape()) io::put_u64(os, d);
    io::put_payload(os, t.data());
}

template <class T>
tensor<T> read_tns(std::istream& is) {
    char magic[4];
    io::get_bytes(is, magic, 4);
    check(std::memcmp(magic, "TNSR", 4) == 0, "read_tns: bad magic");
    const uint32_t version = io::get_u32(is);
    check(version == kTnsVersion, "read_tns: unsupported version ", version);
    const uint8_t tag = io::get_u8(is);
    check(tag == io::dtype_tag<T>(), "read_tns: dtype tag ", int(tag),
          " does not match requested scalar type");
    const uint8_t ndim = io::get_u8(is);
    shape_t shape(ndim);
    for (auto& d : shape) d = io::get_u64(is);
    std::vector<T> data(numel(shape));
    io::get_payload(is, data);
    return tensor<T>::constant(std::move(shape), std::move(data));
}

template <class T>
void save_tns(const std::string& path, const tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    check(bool(os), "save_tns: cannot open ", path);
    write_tns(os, t);
    check(bool(os), "save_tns: write failed for ", path);
}

template <class T>
tensor<T> load_tns(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(bool(is), "load_tns: cannot open ", path);
    return read_tns<T>(is);
}

}  // namespace wmamba
