#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latcomp/composition.hpp"
#include "latcomp/metrics.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

std::string code_version();

/// `<out>/run.json`: command, resolved config, seed, code version.
void write_run_json(const fs::path& out_dir, const std::string& command, const Json& config, std::uint64_t seed);

struct MakeCollagesOptions {
    std::string preset = "oracle";
    std::string part_source = "oracle";  // oracle | rectangle
    int count = 200;
    std::uint64_t seed = 0;
};

/// Writes `<out>/samples/{collages,masks,composites,reencoded,reference}/NNNNN.png`
/// and `<out>/samples/manifest.jsonl`. Item i draws from substream(seed,
/// "collage", i); reference and re-encoded samples come from their own
/// substreams.
void make_collages(const GeneratorHandle& g, const Encoder& e, const MakeCollagesOptions& opts, const fs::path& out_dir);

/// Locates manifest.jsonl in `dir` or `dir/samples`.
fs::path find_manifest(const fs::path& dir);

enum class EvalSubject { Composite, Collage };
EvalSubject parse_eval_subject(const std::string& s);

struct EvalOptions {
    int k = 5;
    std::string extractor_id = RandomConvEmbedding::kId;
    EvalSubject subject = EvalSubject::Composite;
};

/// Metrics for one image set against a reference set. masked_l1 compares the
/// subject with the collages on the union masks; fid_delta subtracts the
/// re-encoded samples' FID.
MetricsReport evaluate_sets(const ImageBatch& reference, const ImageBatch& subject, const ImageBatch& reencoded,
                            const ImageBatch& collages, const Mask& masks, const EvalOptions& opts);

/// Evaluates a make-collages directory. `reference_dir` may be empty to use
/// the run's own reference samples.
MetricsReport evaluate_collage_dir(const fs::path& reference_dir, const fs::path& collage_dir, const EvalOptions& opts);

ImageBatch read_png_dir(const fs::path& dir);

struct TradeoffPoint {
    std::string label;
    double masked_l1 = 0;
    double fid_delta = 0;
};

/// Scatter data for masked L1 vs FID delta. EXTRACTOR_MISMATCH when the
/// reports disagree on the feature extractor.
std::vector<TradeoffPoint> tradeoff_points(const std::vector<std::pair<std::string, MetricsReport>>& reports);
Json tradeoff_json(const std::vector<TradeoffPoint>& points, const std::string& extractor_id);
std::string tradeoff_svg(const std::vector<TradeoffPoint>& points);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
