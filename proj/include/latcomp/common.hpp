#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

// The whole library is built twice: once with float storage (default) and once
// with double storage for gradient probes. The inline namespace keeps the two
// builds link-compatible inside a single binary.
#ifdef LATCOMP_DOUBLE
#define LATCOMP_ABI f64
#else
#define LATCOMP_ABI f32
#endif

namespace latcomp {
inline namespace LATCOMP_ABI {

#ifdef LATCOMP_DOUBLE
using Real = double;
#else
using Real = float;
#endif

enum class ErrorCode {
    SpecMismatch,
    DegenerateLatent,
    ShapeMismatch,
    EmptyInput,
    EmptyMask,
    TrainingDiverged,
    OptimizationDiverged,
    NumericalFailure,
    InsufficientSamples,
    UnknownExtractor,
    ExtractorMismatch,
    OverlappingRegions,
    UnknownModel,
    InvalidArgument,
    IoError,
};

/// Stable upper-snake identifier used on the wire and in CLI diagnostics.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

using Rng = std::mt19937_64;

/// Derives an independent generator from a root seed and a named substream.
/// Every random draw in the library goes through one of these so that each
/// component (train / mask / collage / eval ...) can be re-run in isolation.
Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

/// FNV-1a over raw bytes; used for parameter checksums.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ULL);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
