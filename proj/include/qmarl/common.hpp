#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace qmarl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define QMARL_DEFINE_ERROR(Name)          \
    class Name : public Error {           \
    public:                               \
        using Error::Error;               \
    }

QMARL_DEFINE_ERROR(ConfigError);
QMARL_DEFINE_ERROR(UnknownAgent);
QMARL_DEFINE_ERROR(EpisodeFinished);
QMARL_DEFINE_ERROR(EmptyWorld);
QMARL_DEFINE_ERROR(DomainError);
QMARL_DEFINE_ERROR(ShapeError);
QMARL_DEFINE_ERROR(StaleTrace);
QMARL_DEFINE_ERROR(EmptyEnsemble);
QMARL_DEFINE_ERROR(MemberNotFound);
QMARL_DEFINE_ERROR(ShapeMismatch);
QMARL_DEFINE_ERROR(ResourceError);
QMARL_DEFINE_ERROR(IoError);

#undef QMARL_DEFINE_ERROR

// mt19937_64 is fully specified by the standard; the helpers below avoid the
// implementation-defined std distributions so seeded runs are portable.
using Rng = std::mt19937_64;

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t draw = rng();
    while (draw >= limit) draw = rng();
    return static_cast<std::size_t>(draw % bound);
}

/// Uniform real in [0, 1) with 53 bits of precision.
inline double unit_real(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and two indices.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0xd1342543de82ef95ULL));
}

}  // namespace qmarl
