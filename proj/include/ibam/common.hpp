#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ibam {

inline constexpr const char* kVersion = "1.0.0";

// malformed input text
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// structurally valid input violating a domain invariant
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// bad configuration or parameter value
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// numeric failure at runtime (divergence, unreachable cutoff, ...)
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// stage-2 fit has no gated samples to score
struct TailUnobservableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a, used for config hashes and RNG stream derivation
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag) {
    return fnv1a64(tag, fnv1a64(&seed, sizeof seed));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t v) {
    return fnv1a64(&v, sizeof v, fnv1a64(&seed, sizeof seed));
}

}  // namespace ibam
