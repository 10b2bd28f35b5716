#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sam2b {

// ---------------------------------------------------------------------------
// Error hierarchy. The CLI maps these onto distinct exit codes.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes disagree (matmul inner dims, elementwise operands, ...).
struct DimensionError : Error {
    using Error::Error;
};

/// Invalid or unknown configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// File I/O failure.
struct IoError : Error {
    using Error::Error;
};

/// Stored CRC does not cover the payload read back (corruption).
struct ChecksumError : IoError {
    using IoError::IoError;
};

/// File ends before its declared contents do.
struct TruncationError : IoError {
    using IoError::IoError;
};

/// File schema version not understood by this build.
struct VersionError : IoError {
    using IoError::IoError;
};

/// Normalization statistics (or other fitted state) required but absent.
struct NotFittedError : Error {
    using Error::Error;
};

/// An index (e.g. a class label) outside its valid range.
struct IndexError : Error {
    using Error::Error;
};

/// Optimization diverged (non-finite loss).
struct TrainingError : Error {
    std::size_t epoch;
    TrainingError(const std::string& msg, std::size_t epoch_index)
        : Error(msg), epoch(epoch_index) {}
};

// ---------------------------------------------------------------------------
// Deterministic random numbers. All stochastic behavior in the project goes
// through Rng so datasets and training runs are reproducible bit-for-bit:
// the engine is std::mt19937_64 (standardized output sequence) and the
// distributions below are implemented here rather than taken from <random>,
// whose distribution algorithms are implementation-defined.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Split rule for per-sample / per-stream sub-seeds: mixes the master seed,
/// a stream tag, and an index through splitmix64. Documented contract: equal
/// (master, tag, index) always yields the same sub-seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t s = master ^ fnv1a64(tag);
    splitmix64(s);
    s ^= 0x632be59bd9b4e019ull + index * 0x9e3779b97f4a7c15ull;
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw Error("uniform_int: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via the polar (Marsaglia) method. The spare deviate is
    /// discarded so each call consumes a self-contained draw sequence.
    double gaussian() {
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        return u * std::sqrt(-2.0 * std::log(s) / s);
    }

    double gaussian(double mean, double std_dev) {
        return mean + std_dev * gaussian();
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// CRC-32 (IEEE, reflected, poly 0xEDB88320) for dataset and checkpoint
// integrity checks.
// ---------------------------------------------------------------------------

namespace detail {
inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}
}  // namespace detail

inline std::uint32_t crc32(const void* data, std::size_t len,
                           std::uint32_t crc = 0) {
    const auto* p = static_cast<const unsigned char*>(data);
    const auto& table = detail::crc32_table();
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i)
        crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32(const std::vector<unsigned char>& bytes) {
    return crc32(bytes.data(), bytes.size());
}

}  // namespace sam2b
