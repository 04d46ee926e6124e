#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lcmfuse {

// Error taxonomy shared across modules. The CLI maps these onto process
// exit codes, so library code should throw the most specific type.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class MissingArtifactError : public Error {
public:
    MissingArtifactError(const std::string& msg, std::string required_command)
        : Error(msg), required_command_(std::move(required_command)) {}
    const std::string& required_command() const { return required_command_; }

private:
    std::string required_command_;
};

class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

// 64-bit FNV-1a, used for artifact provenance digests.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

inline std::string digest_hex(const std::vector<unsigned char>& bytes) {
    return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

}  // namespace lcmfuse
