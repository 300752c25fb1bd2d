#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace orapo {

/// Shape, dimension or hyperparameter mismatch between collaborating objects.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed caller-supplied data (out-of-range token, NaN reward, ...).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File or record parse failure. `line` is 1-based, 0 when not applicable.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
          line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent counter-based seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    return mix_seed(mix_seed(mix_seed(mix_seed(base) ^ a) ^ b) ^ c);
}

}  // namespace orapo
