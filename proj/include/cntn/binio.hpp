// Little-endian binary record helpers for checkpoint and trace files.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace cntn::binio {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline std::uint64_t to_le(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    else return __builtin_bswap64(v);
}
inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    else return __builtin_bswap32(v);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    v = to_le(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
    v = to_le(v);
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }

inline void put_f64s(std::ostream& os, const double* data, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) put_f64(os, data[i]);
    }
}

inline std::uint64_t get_u64(std::istream& is, const std::string& what) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("truncated " + what);
    return to_le(v);
}
inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("truncated " + what);
    return to_le(v);
}
inline double get_f64(std::istream& is, const std::string& what) {
    return std::bit_cast<double>(get_u64(is, what));
}
inline void get_f64s(std::istream& is, double* data, std::size_t n, const std::string& what) {
    if constexpr (std::endian::native == std::endian::little) {
        if (!is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)))) {
            throw std::runtime_error("truncated " + what);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) data[i] = get_f64(is, what);
    }
}

}  // namespace cntn::binio
