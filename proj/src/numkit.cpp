#include "cntn/numkit.hpp"

#include <cstdio>
#include <numbers>

namespace cntn {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t fingerprint(const Vec& v) {
    const std::uint64_t n = static_cast<std::uint64_t>(v.size());
    std::uint64_t h = fnv1a(&n, sizeof n);
    return fnv1a(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double), h);
}

std::uint64_t RngStream::at(std::uint64_t index) const {
    const std::uint64_t key = splitmix64(seed_ ^ splitmix64(stream_ ^ 0x6a09e667f3bcc909ULL));
    return splitmix64(key + splitmix64(index));
}

double RngStream::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
    // reject the short tail so every residue is equally likely
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x < limit) return x % n;
    }
}

RngStream RngStream::substream(std::uint64_t id) const {
    return RngStream(seed_, splitmix64(stream_ * 0x9e3779b97f4a7c15ULL + splitmix64(id + 0x3c6ef372fe94f82bULL)));
}

}  // namespace cntn
