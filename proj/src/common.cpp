#include "latcomp/common.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::SpecMismatch: return "SPEC_MISMATCH";
        case ErrorCode::DegenerateLatent: return "DEGENERATE_LATENT";
        case ErrorCode::ShapeMismatch: return "SHAPE_MISMATCH";
        case ErrorCode::EmptyInput: return "EMPTY_INPUT";
        case ErrorCode::EmptyMask: return "EMPTY_MASK";
        case ErrorCode::TrainingDiverged: return "TRAINING_DIVERGED";
        case ErrorCode::OptimizationDiverged: return "OPTIMIZATION_DIVERGED";
        case ErrorCode::NumericalFailure: return "NUMERICAL_FAILURE";
        case ErrorCode::InsufficientSamples: return "INSUFFICIENT_SAMPLES";
        case ErrorCode::UnknownExtractor: return "UNKNOWN_EXTRACTOR";
        case ErrorCode::ExtractorMismatch: return "EXTRACTOR_MISMATCH";
        case ErrorCode::OverlappingRegions: return "OVERLAPPING_REGIONS";
        case ErrorCode::UnknownModel: return "UNKNOWN_MODEL";
        case ErrorCode::InvalidArgument: return "INVALID_ARGUMENT";
        case ErrorCode::IoError: return "IO_ERROR";
    }
    return "UNKNOWN";
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index) {
    std::uint64_t h = fnv1a(name.data(), name.size());
    h = fnv1a(&seed, sizeof seed, h);
    h = fnv1a(&index, sizeof index, h);
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(index)};
    return Rng(seq);
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
