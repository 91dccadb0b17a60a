#include "latcomp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "latcomp/analysis.hpp"

#ifndef LATCOMP_VERSION
#define LATCOMP_VERSION "dev"
#endif

namespace latcomp {
inline namespace LATCOMP_ABI {

std::string code_version() { return LATCOMP_VERSION; }

void write_run_json(const fs::path& out_dir, const std::string& command, const Json& config, std::uint64_t seed) {
    fs::create_directories(out_dir);
    const Json run = {{"command", command},
                      {"config", config},
                      {"seed", seed},
                      {"code_version", code_version()},
                      {"precision", sizeof(Real) == 8 ? "float64" : "float32"}};
    write_text_file(out_dir / "run.json", run.dump(2) + "\n");
}

namespace {

std::string item_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d.png", i);
    return buf;
}

const char* const kSampleDirs[] = {"collages", "masks", "composites", "reencoded", "reference"};

}  // namespace

void make_collages(const GeneratorHandle& gh, const Encoder& e, const MakeCollagesOptions& opts,
                   const fs::path& out_dir) {
    require(opts.count >= 1, ErrorCode::InvalidArgument, "count must be >= 1");
    require(gh != nullptr, ErrorCode::InvalidArgument, "make-collages needs a generator");
    const Generator& g = *gh;
    const PartOrderPreset& p = preset(opts.preset);
    std::unique_ptr<PartSource> source;
    if (opts.part_source == "oracle") {
        auto proc = std::dynamic_pointer_cast<const ProceduralGenerator>(gh);
        require(proc != nullptr, ErrorCode::InvalidArgument, "the oracle part source needs a procedural generator");
        source = std::make_unique<OraclePartSource>(std::move(proc));
    } else if (opts.part_source == "rectangle") {
        source = std::make_unique<RectanglePartSource>();
    } else {
        fail(ErrorCode::InvalidArgument, "unknown part source '" + opts.part_source + "'");
    }
    const fs::path samples = out_dir / "samples";
    for (const char* d : kSampleDirs) fs::create_directories(samples / d);
    const Mask ones = Mask::ones(1, g.output_shape().height, g.output_shape().width);
    std::string manifest;
    for (int i = 0; i < opts.count; ++i) {
        try {
            const std::uint64_t item_seed = substream(opts.seed, "collage-item", static_cast<std::uint64_t>(i))();
            const RandomCollage rc = random_collage(g, *source, p, item_seed);
            const ComposeResult r = compose_detailed(e, g, rc.spec);
            Rng ref_rng = substream(opts.seed, "reference", static_cast<std::uint64_t>(i));
            const ImageBatch reference = generate(g, sample_latent(g.latent_spec(), 1, ref_rng));
            Rng re_rng = substream(opts.seed, "reencode", static_cast<std::uint64_t>(i));
            const ImageBatch source_image = generate(g, sample_latent(g.latent_spec(), 1, re_rng));
            const ImageBatch reencoded = generate(g, decoder_input(encode_full(e, source_image)));
            const std::string name = item_name(i);
            write_png(samples / "collages" / name, r.collage.image);
            write_mask_png(samples / "masks" / name, r.collage.mask);
            write_png(samples / "composites" / name, r.composite);
            write_png(samples / "reencoded" / name, reencoded);
            write_png(samples / "reference" / name, reference);
            const Json row = {{"index", i},
                              {"item_seed", item_seed},
                              {"preset", p.domain_name},
                              {"part_source", source->name()},
                              {"union_fraction", double(r.collage.mask.count_ones()) / double(r.collage.mask.values.size())},
                              {"collage", "collages/" + name},
                              {"mask", "masks/" + name},
                              {"composite", "composites/" + name},
                              {"reencoded", "reencoded/" + name},
                              {"reference", "reference/" + name}};
            manifest += row.dump() + "\n";
        } catch (const Error& err) {
            fail(err.code(), "make-collages item " + std::to_string(i) + ": " + err.what());
        }
    }
    write_text_file(samples / "manifest.jsonl", manifest);
}

fs::path find_manifest(const fs::path& dir) {
    for (const fs::path& p : {dir / "manifest.jsonl", dir / "samples" / "manifest.jsonl"})
        if (fs::is_regular_file(p)) return p;
    fail(ErrorCode::IoError, "no manifest.jsonl in " + dir.string());
}

EvalSubject parse_eval_subject(const std::string& s) {
    if (s == "composite") return EvalSubject::Composite;
    if (s == "collage") return EvalSubject::Collage;
    fail(ErrorCode::InvalidArgument, "unknown eval subject '" + s + "' (composite|collage)");
}

MetricsReport evaluate_sets(const ImageBatch& reference, const ImageBatch& subject, const ImageBatch& reencoded,
                            const ImageBatch& collages, const Mask& masks, const EvalOptions& opts) {
    MetricsReport r;
    r.k_neighbors = opts.k;
    r.extractor_id = opts.extractor_id;
    r.n_samples = subject.batch();
    r.masked_l1 = masked_l1(collages, subject, masks);
    const FeatureSet ref = extract_features(reference, opts.extractor_id);
    const FeatureSet sub = extract_features(subject, opts.extractor_id);
    const FeatureSet re = extract_features(reencoded, opts.extractor_id);
    r.fid = frechet_distance(sub, ref);
    r.fid_delta = fid_delta(sub, re, ref);
    const DensityCoverage dc = density_coverage(ref, sub, opts.k);
    r.density = dc.density;
    r.coverage = dc.coverage;
    return r;
}

ImageBatch read_png_dir(const fs::path& dir) {
    const auto files = list_pngs(dir);
    require(!files.empty(), ErrorCode::EmptyInput, "no PNG files in " + dir.string());
    std::vector<ImageBatch> images;
    for (const auto& f : files) images.push_back(read_png(f));
    return concat(std::span<const ImageBatch>(images));
}

MetricsReport evaluate_collage_dir(const fs::path& reference_dir, const fs::path& collage_dir, const EvalOptions& opts) {
    const fs::path manifest = find_manifest(collage_dir);
    const fs::path base = manifest.parent_path();
    std::ifstream in(manifest);
    std::vector<ImageBatch> collages, subjects, reencoded, reference;
    std::vector<Mask> masks;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const Json row = Json::parse(line);
        collages.push_back(read_png(base / row.at("collage").get<std::string>()));
        masks.push_back(read_mask_png(base / row.at("mask").get<std::string>()));
        subjects.push_back(opts.subject == EvalSubject::Composite ? read_png(base / row.at("composite").get<std::string>())
                                                                  : collages.back());
        reencoded.push_back(read_png(base / row.at("reencoded").get<std::string>()));
        if (reference_dir.empty()) reference.push_back(read_png(base / row.at("reference").get<std::string>()));
    }
    require(!collages.empty(), ErrorCode::EmptyInput, "empty manifest " + manifest.string());
    const ImageBatch ref = reference_dir.empty() ? concat(std::span<const ImageBatch>(reference)) : read_png_dir(reference_dir);
    return evaluate_sets(ref, concat(std::span<const ImageBatch>(subjects)), concat(std::span<const ImageBatch>(reencoded)),
                         concat(std::span<const ImageBatch>(collages)), concat(std::span<const Mask>(masks)), opts);
}

std::vector<TradeoffPoint> tradeoff_points(const std::vector<std::pair<std::string, MetricsReport>>& reports) {
    require(!reports.empty(), ErrorCode::EmptyInput, "tradeoff needs at least one report");
    std::vector<TradeoffPoint> points;
    for (const auto& [label, r] : reports) {
        require(r.extractor_id == reports.front().second.extractor_id, ErrorCode::ExtractorMismatch,
                "report '" + label + "' uses extractor '" + r.extractor_id + "', expected '" +
                    reports.front().second.extractor_id + "'");
        points.push_back({label, r.masked_l1, r.fid_delta});
    }
    return points;
}

Json tradeoff_json(const std::vector<TradeoffPoint>& points, const std::string& extractor_id) {
    Json pts = Json::array();
    for (const auto& p : points) pts.push_back({{"label", p.label}, {"masked_l1", p.masked_l1}, {"fid_delta", p.fid_delta}});
    return {{"x_axis", "masked L1"}, {"y_axis", "FID delta"}, {"extractor_id", extractor_id}, {"points", pts}};
}

std::string tradeoff_svg(const std::vector<TradeoffPoint>& points) {
    constexpr double W = 480, H = 360, L = 60, R = 20, T = 20, B = 50;
    double x0 = 0, x1 = 1e-9, y0 = 0, y1 = 1e-9;
    for (const auto& p : points) {
        x1 = std::max(x1, p.masked_l1);
        y0 = std::min(y0, p.fid_delta);
        y1 = std::max(y1, p.fid_delta);
    }
    x1 *= 1.1;
    y1 += 0.1 * (y1 - y0);
    auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">masked L1</text>\n"
      << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">FID delta</text>\n";
    for (double t : {0.0, 0.5, 1.0}) {
        s << "<text x=\"" << px(x0 + t * (x1 - x0)) << "\" y=\"" << H - B + 16 << "\" font-size=\"10\" text-anchor=\"middle\">"
          << x0 + t * (x1 - x0) << "</text>\n";
        s << "<text x=\"" << L - 4 << "\" y=\"" << py(y0 + t * (y1 - y0)) << "\" font-size=\"10\" text-anchor=\"end\">"
          << y0 + t * (y1 - y0) << "</text>\n";
    }
    for (const auto& p : points) {
        s << "<circle cx=\"" << px(p.masked_l1) << "\" cy=\"" << py(p.fid_delta) << "\" r=\"4\" fill=\"steelblue\"/>\n";
        s << "<text x=\"" << px(p.masked_l1) + 6 << "\" y=\"" << py(p.fid_delta) - 6 << "\" font-size=\"11\">" << p.label
          << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
