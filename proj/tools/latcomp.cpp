// latcomp: command-line entry for training, composition, evaluation and serving.
#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <spdlog/spdlog.h>

#include "latcomp/analysis.hpp"
#include "latcomp/composition.hpp"
#include "latcomp/generators.hpp"
#include "latcomp/metrics.hpp"
#include "latcomp/pipeline.hpp"
#include "latcomp/service.hpp"
#include "latcomp/training.hpp"

using namespace latcomp;

namespace {

// env > flags > file > defaults for every option of a subcommand. Option
// "--refine-steps" maps to config key "refine_steps" and LATCOMP_REFINE_STEPS.
void apply_overrides(CLI::App* sub, const Json& file) {
    for (CLI::Option* opt : sub->get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config" || opt->get_lnames().empty()) continue;
        std::string key = name;
        std::replace(key.begin(), key.end(), '-', '_');
        std::string env = "LATCOMP_" + key;
        std::transform(env.begin(), env.end(), env.begin(), [](unsigned char c) { return std::toupper(c); });
        std::optional<std::string> value;
        if (const char* v = std::getenv(env.c_str())) {
            value = v;
        } else if (opt->count() == 0 && file.is_object() && file.contains(key)) {
            const Json& j = file.at(key);
            value = j.is_string() ? j.get<std::string>() : j.dump();
        }
        if (!value) continue;
        opt->clear();
        opt->add_result(*value);
        opt->run_callback();
    }
}

Json read_config(const std::string& path) { return path.empty() ? Json::object() : read_json_file(path); }

fs::path run_dir_for_file(const fs::path& out_file) {
    return out_file.has_parent_path() ? out_file.parent_path() : fs::path(".");
}

LatentSpec make_spec(const std::string& kind, int dim, int layers) {
    return parse_latent_kind(kind) == LatentKind::SphericalZ ? LatentSpec::spherical(dim) : LatentSpec::per_layer(dim, layers);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masked latent regression toolkit"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path, verbosity = "info";
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON file with option defaults");
    app.add_option("--seed", seed, "Root seed");
    app.add_option("--log-level", verbosity, "trace|debug|info|warn|error");

    // make-generator
    auto* mg = app.add_subcommand("make-generator", "Build a procedural oracle or train a toy adversarial generator");
    std::string mg_kind = "procedural", mg_latent = "PER_LAYER_W", mg_out;
    int mg_dim = 20, mg_layers = 1, mg_res = 64, mg_steps = 2000;
    mg->add_option("--kind", mg_kind, "procedural|toy")->check(CLI::IsMember({"procedural", "toy"}));
    mg->add_option("--latent-kind", mg_latent, "SPHERICAL_Z|PER_LAYER_W");
    mg->add_option("--dim", mg_dim);
    mg->add_option("--layers", mg_layers);
    mg->add_option("--resolution", mg_res);
    mg->add_option("--steps", mg_steps, "Adversarial training steps (toy)");
    mg->add_option("--out", mg_out)->required();

    // sample
    auto* sa = app.add_subcommand("sample", "Write G(z) samples as PNG");
    std::string sa_gen, sa_out;
    int sa_count = 16;
    sa->add_option("--generator", sa_gen)->required();
    sa->add_option("--count", sa_count);
    sa->add_option("--out", sa_out)->required();

    // train
    auto* tr = app.add_subcommand("train", "Train the masked latent encoder");
    std::string tr_gen, tr_out, tr_ablation = "FULL", tr_resume;
    TrainConfig tc;
    EncoderConfig ec;
    tr->add_option("--generator", tr_gen)->required();
    tr->add_option("--steps", tc.steps);
    tr->add_option("--batch-size", tc.batch_size);
    tr->add_option("--lr", tc.learning_rate);
    tr->add_option("--mask-probability", tc.mask_probability);
    tr->add_option("--checkpoint-every", tc.checkpoint_every);
    tr->add_option("--ablation", tr_ablation)->check(CLI::IsMember({"FULL", "NO_LATENT", "NO_PERCEPTUAL", "NO_MASK"}));
    tr->add_option("--backbone-depth", ec.backbone_depth);
    tr->add_option("--base-channels", ec.base_channels);
    tr->add_option("--resume", tr_resume, "Training checkpoint to continue from");
    tr->add_option("--out", tr_out)->required();

    // compose
    auto* co = app.add_subcommand("compose", "Re-project a collage through E and G");
    std::string co_spec, co_enc, co_gen, co_out, co_init = "encoder";
    int co_refine = 0, co_k = 500;
    co->add_option("--spec", co_spec)->required();
    co->add_option("--encoder", co_enc)->required();
    co->add_option("--generator", co_gen)->required();
    co->add_option("--refine-steps", co_refine);
    co->add_option("--init", co_init, "encoder|best-of-k (refinement start)")->check(CLI::IsMember({"encoder", "best-of-k"}));
    co->add_option("--k", co_k);
    co->add_option("--out", co_out)->required();

    // make-collages
    auto* mc = app.add_subcommand("make-collages", "Write (collage, mask, composite) triples");
    std::string mc_gen, mc_enc, mc_out;
    MakeCollagesOptions mco;
    mc->add_option("--generator", mc_gen)->required();
    mc->add_option("--encoder", mc_enc)->required();
    mc->add_option("--preset", mco.preset);
    mc->add_option("--part-source", mco.part_source, "oracle|rectangle");
    mc->add_option("--count", mco.count);
    mc->add_option("--out", mc_out)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Masked L1, FID, FID delta, density and coverage");
    std::string ev_real, ev_fake, ev_out, ev_subject = "composite";
    EvalOptions evo;
    ev->add_option("--real", ev_real, "Reference PNG directory (default: the run's own reference samples)");
    ev->add_option("--fake", ev_fake, "make-collages output directory")->required();
    ev->add_option("--k", evo.k);
    ev->add_option("--extractor", evo.extractor_id);
    ev->add_option("--subject", ev_subject, "composite|collage")->check(CLI::IsMember({"composite", "collage"}));
    ev->add_option("--out", ev_out)->required();

    // tradeoff
    auto* to = app.add_subcommand("tradeoff", "Masked L1 vs FID delta scatter");
    std::vector<std::string> to_reports, to_labels;
    std::string to_out;
    to->add_option("--report", to_reports)->required();
    to->add_option("--label", to_labels);
    to->add_option("--out", to_out)->required();

    // blend-compare
    auto* bc = app.add_subcommand("blend-compare", "Composition vs latent / pixel alpha blends");
    std::string bc_ctx, bc_tgt, bc_mask, bc_enc, bc_gen, bc_out;
    std::optional<double> bc_alpha;
    bc->add_option("--context", bc_ctx)->required();
    bc->add_option("--target", bc_tgt)->required();
    bc->add_option("--mask", bc_mask, "Target-region mask")->required();
    bc->add_option("--encoder", bc_enc)->required();
    bc->add_option("--generator", bc_gen)->required();
    bc->add_option("--alpha", bc_alpha);
    bc->add_option("--out", bc_out)->required();

    // probe-independence
    auto* pi = app.add_subcommand("probe-independence", "Part-independence statistics");
    std::string pi_image, pi_parts, pi_enc, pi_gen, pi_out;
    IndependenceOptions pio;
    bool pi_baseline = false;
    pi->add_option("--image", pi_image)->required();
    pi->add_option("--parts", pi_parts, "JSON list of {component_id, mask}")->required();
    pi->add_option("--encoder", pi_enc)->required();
    pi->add_option("--generator", pi_gen)->required();
    pi->add_option("--n", pio.n_replacements);
    pi->add_option("--repeats", pio.repeats);
    pi->add_flag("--baseline", pi_baseline, "Also compute the full-swap baseline");
    pi->add_option("--out", pi_out)->required();

    // serve
    auto* sv = app.add_subcommand("serve", "HTTP composition service");
    std::string sv_host;
    int sv_port = -1, sv_ttl = -1, sv_depth = -1;
    sv->add_option("--host", sv_host);
    sv->add_option("--port", sv_port);
    sv->add_option("--session-ttl", sv_ttl);
    sv->add_option("--queue-depth", sv_depth);

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(verbosity));

    try {
        const Json file = read_config(config_path);
        CLI::App* sub = app.get_subcommands().front();
        if (sub != sv) apply_overrides(sub, file);

        if (sub == mg) {
            const LatentSpec spec = make_spec(mg_latent, mg_dim, mg_layers);
            const fs::path out(mg_out);
            Json cfg = {{"kind", mg_kind}, {"latent_spec", latent_spec_to_json(spec)}, {"resolution", mg_res}};
            if (mg_kind == "procedural") {
                save_generator(*build_procedural_generator(spec, {3, mg_res, mg_res}, seed), out / "checkpoints" / "generator");
            } else {
                ToyGeneratorConfig tg;
                tg.latent = spec;
                tg.resolution = mg_res;
                tg.steps = mg_steps;
                tg.seed = seed;
                cfg["steps"] = mg_steps;
                const ToyTrainResult r = train_toy_generator(rectangles_dataset(mg_res, seed), tg);
                save_generator(*r.generator, out / "checkpoints" / "generator");
                std::string lines;
                for (const GanStepLosses& h : r.history)
                    lines += Json{{"step", h.step}, {"discriminator", h.discriminator}, {"generator", h.generator}}.dump() + "\n";
                write_text_file(out / "gan_history.jsonl", lines);
            }
            write_run_json(out, "make-generator", cfg, seed);
            std::cout << (out / "checkpoints" / "generator").string() << "\n";
        } else if (sub == sa) {
            const GeneratorHandle g = load_generator(sa_gen);
            const fs::path out(sa_out);
            const ImageBatch x = generate(*g, sample_latent(g->latent_spec(), sa_count, seed));
            fs::create_directories(out / "samples");
            for (int n = 0; n < x.batch(); ++n) {
                char name[16];
                std::snprintf(name, sizeof(name), "%05d.png", n);
                write_png(out / "samples" / name, x, n);
            }
            write_run_json(out, "sample", {{"generator", sa_gen}, {"count", sa_count}}, seed);
        } else if (sub == tr) {
            const GeneratorHandle g = load_generator(tr_gen);
            const fs::path out(tr_out);
            tc.seed = seed;
            tc.ablation = parse_ablation(tr_ablation);
            ec.latent_spec = g->latent_spec();
            ec.resolution = g->output_shape().height;
            ec.seed = seed;
            TrainOptions opts;
            opts.out_dir = out;
            opts.on_step = [&](const TrainState& s) {
                if (s.step % 100 == 0 || s.step == tc.steps) {
                    const LossRecord& r = s.loss_history.back();
                    spdlog::info("step {} total {:.4f} mse {:.4f} perceptual {:.4f} latent {:.4f}", s.step, r.total,
                                 r.mse, r.perceptual, r.latent);
                }
            };
            std::optional<TrainState> state;
            if (!tr_resume.empty()) {
                state.emplace(load_train_state(tr_resume));
            } else {
                state.emplace(Encoder(ablated_encoder_config(ec, tc.ablation)), tc.learning_rate);
            }
            write_run_json(out, "train",
                           {{"generator", tr_gen},
                            {"train", train_config_to_json(tc)},
                            {"encoder", encoder_config_to_json(state->encoder.config())},
                            {"resume", tr_resume}},
                           seed);
            train(*state, *g, tc, opts);
            save_train_state(*state, tc, out / "checkpoints" / "encoder");
            std::cout << (out / "checkpoints" / "encoder").string() << "\n";
        } else if (sub == co) {
            const GeneratorHandle g = load_generator(co_gen);
            const Encoder e = load_encoder(co_enc);
            const CollageSpec spec = collage_spec_from_json(read_json_file(co_spec), fs::path(co_spec).parent_path());
            ComposeResult r = compose_detailed(e, *g, spec);
            Json cfg = {{"spec", co_spec}, {"encoder", co_enc}, {"generator", co_gen}, {"refine_steps", co_refine}};
            if (co_refine > 0) {
                RefineOptions ro;
                ro.steps = co_refine;
                const LatentCode init = co_init == "encoder"
                                            ? r.latent
                                            : initial_latent(InitStrategy::BestOfK, nullptr, *g, r.collage.image,
                                                             r.collage.mask, co_k, seed);
                const RefineResult rr = refine_latent(*g, init, r.collage.image, r.collage.mask, ro);
                r.latent = rr.latent;
                r.composite = generate(*g, decoder_input(r.latent));
                cfg["init"] = co_init;
                cfg["objective"] = rr.objective;
            }
            write_png(co_out, r.composite);
            write_run_json(run_dir_for_file(co_out), "compose", cfg, seed);
        } else if (sub == mc) {
            const GeneratorHandle g = load_generator(mc_gen);
            const Encoder e = load_encoder(mc_enc);
            mco.seed = seed;
            make_collages(g, e, mco, mc_out);
            write_run_json(mc_out, "make-collages",
                           {{"generator", mc_gen}, {"encoder", mc_enc}, {"preset", mco.preset},
                            {"part_source", mco.part_source}, {"count", mco.count}},
                           seed);
        } else if (sub == ev) {
            evo.subject = parse_eval_subject(ev_subject);
            const MetricsReport r = evaluate_collage_dir(ev_real, ev_fake, evo);
            Json j = metrics_report_to_json(r);
            j["subject"] = ev_subject;
            write_text_file(ev_out, j.dump(2) + "\n");
            write_run_json(run_dir_for_file(ev_out), "eval",
                           {{"real", ev_real}, {"fake", ev_fake}, {"k", evo.k}, {"subject", ev_subject},
                            {"extractor", evo.extractor_id}},
                           seed);
            std::cout << j.dump(2) << "\n";
        } else if (sub == to) {
            std::vector<std::pair<std::string, MetricsReport>> reports;
            for (std::size_t i = 0; i < to_reports.size(); ++i)
                reports.emplace_back(i < to_labels.size() ? to_labels[i] : fs::path(to_reports[i]).stem().string(),
                                     metrics_report_from_json(read_json_file(to_reports[i])));
            const auto points = tradeoff_points(reports);
            const fs::path out(to_out);
            fs::create_directories(out / "reports");
            write_text_file(out / "reports" / "tradeoff.json",
                            tradeoff_json(points, reports.front().second.extractor_id).dump(2) + "\n");
            write_text_file(out / "reports" / "tradeoff.svg", tradeoff_svg(points));
            write_run_json(out, "tradeoff", {{"reports", to_reports}, {"labels", to_labels}}, seed);
        } else if (sub == bc) {
            const GeneratorHandle g = load_generator(bc_gen);
            const Encoder e = load_encoder(bc_enc);
            std::optional<Real> alpha;
            if (bc_alpha) alpha = static_cast<Real>(*bc_alpha);
            const BlendResult r = blend_compare(e, *g, read_png(bc_ctx), read_png(bc_tgt), read_mask_png(bc_mask), alpha);
            const fs::path out(bc_out);
            fs::create_directories(out / "samples");
            write_png(out / "samples" / "collage.png", r.collage);
            write_png(out / "samples" / "composition.png", r.composition);
            write_png(out / "samples" / "latent_blend.png", r.latent_blend);
            write_png(out / "samples" / "pixel_blend.png", r.pixel_blend);
            auto dist = [](const RegionDistances& d) {
                return Json{{"to_context", d.to_context}, {"to_target", d.to_target}, {"to_collage", d.to_collage}};
            };
            const Json report = {{"alpha", r.alpha},
                                 {"composition", dist(r.composition_distances)},
                                 {"latent_blend", dist(r.latent_distances)},
                                 {"pixel_blend", dist(r.pixel_distances)}};
            fs::create_directories(out / "reports");
            write_text_file(out / "reports" / "blend_compare.json", report.dump(2) + "\n");
            write_run_json(out, "blend-compare", {{"context", bc_ctx}, {"target", bc_tgt}, {"mask", bc_mask}}, seed);
            std::cout << report.dump(2) << "\n";
        } else if (sub == pi) {
            const GeneratorHandle g = load_generator(pi_gen);
            const Encoder e = load_encoder(pi_enc);
            const ImageBatch x = read_png(pi_image);
            const Json parts_json = read_json_file(pi_parts);
            std::vector<PartRegion> parts;
            const fs::path parts_dir = fs::path(pi_parts).parent_path();
            for (const Json& p : parts_json) {
                const std::string m = p.at("mask").get<std::string>();
                const Mask mask = m.ends_with(".png") ? read_mask_png(parts_dir / m) : decode_png_mask(base64_decode(m));
                parts.push_back({p.at("component_id").get<std::string>(), mask});
            }
            pio.seed = seed;
            const auto reports = part_independence(e, *g, x, parts, pio);
            std::vector<IndependenceReport> baseline;
            if (pi_baseline) {
                IndependenceOptions bo = pio;
                bo.full_swap = true;
                baseline = part_independence(e, *g, x, parts, bo);
            }
            const fs::path out_dir = run_dir_for_file(pi_out);
            fs::create_directories(out_dir / "maps");
            auto heatmap = [](const Tensor& map, Real scale) {
                // channel-mean map, scaled to [-1, 1] grey
                const int C = map.dim(0), H = map.dim(1), W = map.dim(2);
                ImageBatch img;
                img.values = Tensor({1, 3, H, W});
                for (int p = 0; p < H * W; ++p) {
                    Real v = 0;
                    for (int c = 0; c < C; ++c) v += map[static_cast<std::size_t>(c) * H * W + p];
                    v = std::clamp(v / C / scale, Real(0), Real(1)) * 2 - 1;
                    for (int c = 0; c < 3; ++c) img.values[static_cast<std::size_t>(c) * H * W + p] = v;
                }
                return img;
            };
            Json table = Json::array();
            for (std::size_t i = 0; i < reports.size(); ++i) {
                const IndependenceReport& r = reports[i];
                Real smax = r.sigma_map.max();
                write_png(out_dir / "maps" / ("sigma_" + r.component_id + ".png"), heatmap(r.sigma_map, smax > 0 ? smax : 1));
                write_png(out_dir / "maps" / ("variation_" + r.component_id + ".png"), heatmap(r.variation_map, 1));
                Json row = {{"component_id", r.component_id}, {"s_c", r.score}, {"n", r.n_replacements},
                            {"repeats", r.n_repeats},
                            {"sigma_png", "maps/sigma_" + r.component_id + ".png"},
                            {"variation_png", "maps/variation_" + r.component_id + ".png"}};
                if (!baseline.empty()) row["baseline_s_c"] = baseline[i].score;
                table.push_back(row);
            }
            write_text_file(pi_out, Json{{"parts", table}}.dump(2) + "\n");
            write_run_json(out_dir, "probe-independence",
                           {{"image", pi_image}, {"parts", pi_parts}, {"n", pio.n_replacements}, {"repeats", pio.repeats}},
                           seed);
            std::cout << table.dump(2) << "\n";
        } else if (sub == sv) {
            Json flags = Json::object();
            if (!sv_host.empty()) flags["host"] = sv_host;
            if (sv_port >= 0) flags["port"] = sv_port;
            if (sv_ttl > 0) flags["session_ttl_seconds"] = sv_ttl;
            if (sv_depth > 0) flags["finetune_queue_depth"] = sv_depth;
            const fs::path dir = config_path.empty() ? fs::path() : fs::path(config_path).parent_path();
            const ServiceConfig cfg = resolve_service_config(file, dir, flags, service_env());
            auto registry = std::make_shared<ModelRegistry>();
            for (const ModelPaths& m : cfg.models) registry->register_model(m.model_id, m.generator, m.encoder);
            CompositionService service(cfg, registry);
            service.run();
        }
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
