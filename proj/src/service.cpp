#include "latcomp/service.hpp"

#include <cstdlib>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "latcomp/masking.hpp"
#include "latcomp/analysis.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

Json service_config_to_json(const ServiceConfig& c) {
    Json models = Json::array();
    for (const ModelPaths& m : c.models)
        models.push_back({{"model_id", m.model_id}, {"generator", m.generator.string()}, {"encoder", m.encoder.string()}});
    return {{"host", c.host},
            {"port", c.port},
            {"session_ttl_seconds", c.session_ttl_seconds},
            {"finetune_queue_depth", c.finetune_queue_depth},
            {"threads", c.threads},
            {"models", models}};
}

namespace {

void apply_layer(ServiceConfig& c, const Json& j, const fs::path& base_dir) {
    if (j.is_null()) return;
    require(j.is_object(), ErrorCode::InvalidArgument, "service config must be a JSON object");
    try {
        if (j.contains("host")) c.host = j.at("host").get<std::string>();
        if (j.contains("port")) c.port = j.at("port").get<int>();
        if (j.contains("session_ttl_seconds")) c.session_ttl_seconds = j.at("session_ttl_seconds").get<int>();
        if (j.contains("finetune_queue_depth")) c.finetune_queue_depth = j.at("finetune_queue_depth").get<int>();
        if (j.contains("threads")) c.threads = j.at("threads").get<int>();
        if (j.contains("models")) {
            c.models.clear();
            for (const Json& m : j.at("models")) {
                auto resolve = [&](const std::string& p) {
                    fs::path path(p);
                    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
                };
                c.models.push_back({m.at("model_id").get<std::string>(), resolve(m.at("generator").get<std::string>()),
                                    resolve(m.at("encoder").get<std::string>())});
            }
        }
    } catch (const Json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("bad service config: ") + e.what());
    }
}

int env_int(const std::map<std::string, std::string>& env, const char* key, int fallback) {
    const auto it = env.find(key);
    if (it == env.end()) return fallback;
    try {
        std::size_t used = 0;
        const int v = std::stoi(it->second, &used);
        require(used == it->second.size(), ErrorCode::InvalidArgument, "");
        return v;
    } catch (...) {
        fail(ErrorCode::InvalidArgument, std::string(key) + " is not an integer: '" + it->second + "'");
    }
}

}  // namespace

ServiceConfig resolve_service_config(const Json& file, const fs::path& file_dir, const Json& flags,
                                     const std::map<std::string, std::string>& env) {
    ServiceConfig c;
    apply_layer(c, file, file_dir);
    apply_layer(c, flags, {});
    if (const auto it = env.find("LATCOMP_HOST"); it != env.end()) c.host = it->second;
    c.port = env_int(env, "LATCOMP_PORT", c.port);
    c.session_ttl_seconds = env_int(env, "LATCOMP_SESSION_TTL", c.session_ttl_seconds);
    c.finetune_queue_depth = env_int(env, "LATCOMP_QUEUE_DEPTH", c.finetune_queue_depth);
    c.threads = env_int(env, "LATCOMP_THREADS", c.threads);
    require(c.port >= 0 && c.port <= 65535, ErrorCode::InvalidArgument, "port out of range");
    require(c.session_ttl_seconds > 0, ErrorCode::InvalidArgument, "session TTL must be positive");
    require(c.finetune_queue_depth >= 1, ErrorCode::InvalidArgument, "finetune queue depth must be >= 1");
    require(c.threads >= 1, ErrorCode::InvalidArgument, "threads must be >= 1");
    return c;
}

std::map<std::string, std::string> service_env() {
    std::map<std::string, std::string> env;
    for (const char* key : {"LATCOMP_HOST", "LATCOMP_PORT", "LATCOMP_SESSION_TTL", "LATCOMP_QUEUE_DEPTH", "LATCOMP_THREADS"})
        if (const char* v = std::getenv(key)) env[key] = v;
    return env;
}

Json latent_to_json(const LatentCode& z) {
    return {{"kind", latent_kind_name(z.spec.kind)},
            {"dim", z.spec.dim},
            {"num_layers", z.spec.num_layers},
            {"shape", z.values.shape()},
            {"values", z.values.storage()}};
}

namespace {

void flatten_numbers(const Json& j, std::vector<Real>& out) {
    if (j.is_array()) {
        for (const Json& e : j) flatten_numbers(e, out);
        return;
    }
    require(j.is_number(), ErrorCode::InvalidArgument, "latent values must be numbers");
    out.push_back(j.get<Real>());
}

}  // namespace

LatentCode latent_from_json(const Json& j, const LatentSpec& spec) {
    require(j.is_object() && j.contains("values"), ErrorCode::InvalidArgument, "latent must be an object with 'values'");
    std::vector<Real> values;
    flatten_numbers(j.at("values"), values);
    const std::size_t per = static_cast<std::size_t>(spec.size());
    require(!values.empty() && values.size() % per == 0, ErrorCode::InvalidArgument,
            "latent has " + std::to_string(values.size()) + " values, not a multiple of " + std::to_string(per));
    const int n = static_cast<int>(values.size() / per);
    if (j.contains("shape"))
        require(j.at("shape").get<Shape>() == Shape{n, spec.num_layers, spec.dim}, ErrorCode::InvalidArgument,
                "latent shape does not match the model's " + spec.summary());
    Tensor t({n, spec.num_layers, spec.dim});
    std::copy(values.begin(), values.end(), t.data());
    return LatentCode(spec, std::move(t));
}

// ---------------------------------------------------------------------------

void ModelRegistry::register_model(const std::string& id, const fs::path& generator, const fs::path& encoder) {
    auto entry = std::make_shared<ModelEntry>();
    entry->model_id = id;
    entry->generator_path = generator;
    entry->encoder_path = encoder;
    entry->generator = load_generator(generator);
    entry->encoder = std::make_shared<const Encoder>(load_encoder(encoder));
    insert(std::move(entry));
}

void ModelRegistry::register_model(const std::string& id, GeneratorHandle g, EncoderHandle e) {
    auto entry = std::make_shared<ModelEntry>();
    entry->model_id = id;
    entry->generator = std::move(g);
    entry->encoder = std::move(e);
    insert(std::move(entry));
}

void ModelRegistry::insert(std::shared_ptr<ModelEntry> entry) {
    const std::string& id = entry->model_id;
    require(!id.empty(), ErrorCode::InvalidArgument, "empty model id");
    require(entry->generator && entry->encoder, ErrorCode::InvalidArgument,
            "model '" + id + "' needs a generator and an encoder");
    const Generator& g = *entry->generator;
    const EncoderConfig& ec = entry->encoder->config();
    require(ec.latent_spec == g.latent_spec(), ErrorCode::SpecMismatch,
            "model '" + id + "': encoder " + ec.latent_spec.summary() + " vs generator " + g.latent_spec().summary());
    require(ec.resolution == g.output_shape().height && g.output_shape().height == g.output_shape().width,
            ErrorCode::SpecMismatch, "model '" + id + "': encoder resolution does not match the generator output");
    std::lock_guard lock(mu_);
    require(!entries_.contains(id), ErrorCode::InvalidArgument, "model id '" + id + "' already registered");
    entries_[id] = std::move(entry);
}

std::string ModelRegistry::add_session(const std::string& base_id, EncoderHandle e, std::chrono::seconds ttl) {
    const auto base = find(base_id);
    auto entry = std::make_shared<ModelEntry>(*base);
    entry->encoder = std::move(e);
    entry->encoder_path.clear();
    entry->base_model = base->base_model.empty() ? base->model_id : base->base_model;
    entry->expires = std::chrono::steady_clock::now() + ttl;
    std::lock_guard lock(mu_);
    entry->model_id = entry->base_model + "@session-" + std::to_string(++session_counter_);
    const std::string id = entry->model_id;
    entries_[id] = std::move(entry);
    return id;
}

std::size_t ModelRegistry::purge_expired() {
    const auto now = std::chrono::steady_clock::now();
    std::lock_guard lock(mu_);
    return std::erase_if(entries_, [&](const auto& kv) { return kv.second->expires && *kv.second->expires <= now; });
}

std::shared_ptr<const ModelEntry> ModelRegistry::find(const std::string& id) {
    purge_expired();
    std::lock_guard lock(mu_);
    const auto it = entries_.find(id);
    require(it != entries_.end(), ErrorCode::UnknownModel, "unknown model '" + id + "'");
    return it->second;
}

std::vector<std::shared_ptr<const ModelEntry>> ModelRegistry::list() {
    purge_expired();
    std::lock_guard lock(mu_);
    std::vector<std::shared_ptr<const ModelEntry>> out;
    for (const auto& [_, e] : entries_) out.push_back(e);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnknownModel: return 404;
        case ErrorCode::NumericalFailure:
        case ErrorCode::OptimizationDiverged:
        case ErrorCode::TrainingDiverged: return 500;
        default: return 422;
    }
}

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
    return {status, {{"error", code}, {"message", message}}};
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::string png_b64(const ImageBatch& x, int index = 0) { return base64_encode(encode_png_rgb(x, index)); }

ImageBatch image_field(const Json& req, const char* key, const Generator& g) {
    require(req.contains(key), ErrorCode::InvalidArgument, std::string("missing field '") + key + "'");
    require(req.at(key).is_string(), ErrorCode::InvalidArgument, std::string("'") + key + "' must be base64 PNG");
    ImageBatch x = decode_png_image(base64_decode(req.at(key).get<std::string>()));
    const ImageShape s = g.output_shape();
    require(x.height() == s.height && x.width() == s.width, ErrorCode::ShapeMismatch,
            std::string("'") + key + "' must be " + std::to_string(s.width) + "x" + std::to_string(s.height));
    return x;
}

const std::string& model_id_of(const Json& req) {
    require(req.is_object(), ErrorCode::InvalidArgument, "request body must be a JSON object");
    require(req.contains("model_id") && req.at("model_id").is_string(), ErrorCode::InvalidArgument,
            "missing field 'model_id'");
    return req.at("model_id").get_ref<const std::string&>();
}

}  // namespace

CompositionService::CompositionService(ServiceConfig config, std::shared_ptr<ModelRegistry> registry)
    : config_(std::move(config)), registry_(std::move(registry)) {
    require(registry_ != nullptr, ErrorCode::InvalidArgument, "service needs a registry");
}

CompositionService::~CompositionService() { stop(); }

HttpReply CompositionService::guarded(const char* endpoint, const std::function<HttpReply()>& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        spdlog::warn("{}: {}", endpoint, e.what());
        return error_reply(status_for(e.code()), std::string(error_code_name(e.code())), e.what());
    } catch (const Json::exception& e) {
        return error_reply(422, "INVALID_ARGUMENT", e.what());
    } catch (const std::exception& e) {
        spdlog::error("{}: {}", endpoint, e.what());
        return error_reply(500, "INTERNAL", e.what());
    }
}

HttpReply CompositionService::compose(const Json& req) {
    return guarded("compose", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const auto model = registry_->find(model_id_of(req));
        require(req.contains("collage_spec"), ErrorCode::InvalidArgument, "missing field 'collage_spec'");
        const int refine_steps = req.value("refine_steps", 0);
        require(refine_steps >= 0, ErrorCode::InvalidArgument, "refine_steps must be >= 0");
        const CollageSpec spec = collage_spec_from_json(req.at("collage_spec"));
        require(spec.canvas == model->generator->output_shape(), ErrorCode::ShapeMismatch,
                "collage canvas does not match the model output");
        ComposeResult r = compose_detailed(*model->encoder, *model->generator, spec);
        if (refine_steps > 0) {
            RefineOptions o;
            o.steps = refine_steps;
            r.latent = refine_latent(*model->generator, r.latent, r.collage.image, r.collage.mask, o).latent;
            r.composite = latcomp::generate(*model->generator, decoder_input(r.latent));
        }
        Json body = {{"model_id", model->model_id},
                     {"composite", png_b64(r.composite)},
                     {"latent", latent_to_json(r.latent)},
                     {"union_mask", base64_encode(encode_png_mask(r.collage.mask))},
                     {"refine_steps", refine_steps}};
        body["timing_ms"] = elapsed_ms(t0);
        return HttpReply{200, body};
    });
}

HttpReply CompositionService::encode(const Json& req) {
    return guarded("encode", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        const auto model = registry_->find(model_id_of(req));
        const ImageBatch x = image_field(req, "image", *model->generator);
        Mask m = Mask::ones(1, x.height(), x.width());
        if (req.contains("mask") && !req.at("mask").is_null()) {
            require(req.at("mask").is_string(), ErrorCode::InvalidArgument, "'mask' must be base64 PNG");
            m = decode_png_mask(base64_decode(req.at("mask").get<std::string>()));
            require(m.height() == x.height() && m.width() == x.width(), ErrorCode::ShapeMismatch,
                    "mask does not match the image");
        }
        const LatentCode z = encode_masked(*model->encoder, x, m);
        const ImageBatch rec = latcomp::generate(*model->generator, decoder_input(z));
        return HttpReply{200,
                         {{"model_id", model->model_id},
                          {"latent", latent_to_json(z)},
                          {"reconstruction", png_b64(rec)},
                          {"timing_ms", elapsed_ms(t0)}}};
    });
}

HttpReply CompositionService::generate(const Json& req) {
    return guarded("generate", [&] {
        const auto model = registry_->find(model_id_of(req));
        const Generator& g = *model->generator;
        const bool has_latent = req.contains("latent") && !req.at("latent").is_null();
        const bool has_seed = req.contains("seed") && !req.at("seed").is_null();
        require(has_latent != has_seed, ErrorCode::InvalidArgument, "give exactly one of 'latent' and 'seed'");
        LatentCode z;
        if (has_latent) {
            z = latent_from_json(req.at("latent"), g.latent_spec());
            if (req.contains("count"))
                require(req.at("count").get<int>() == z.batch(), ErrorCode::InvalidArgument,
                        "'count' disagrees with the latent batch");
        } else {
            const int count = req.value("count", 1);
            require(count >= 1 && count <= 256, ErrorCode::InvalidArgument, "count must be in [1, 256]");
            z = sample_latent(g.latent_spec(), count, req.at("seed").get<std::uint64_t>());
        }
        const ImageBatch x = latcomp::generate(g, decoder_input(z));
        Json images = Json::array();
        for (int n = 0; n < x.batch(); ++n) images.push_back(png_b64(x, n));
        return HttpReply{200, {{"model_id", model->model_id}, {"images", images}, {"latent", latent_to_json(z)}}};
    });
}

HttpReply CompositionService::finetune(const Json& req) {
    return guarded("finetune", [&] {
        const auto model = registry_->find(model_id_of(req));
        const ImageBatch x = image_field(req, "image", *model->generator);
        const int steps = req.value("steps", 30);
        require(steps >= 0 && steps <= 1000, ErrorCode::InvalidArgument, "steps must be in [0, 1000]");
        struct Slot {
            std::atomic<int>& n;
            ~Slot() { --n; }
        };
        if (++finetune_pending_ > config_.finetune_queue_depth) {
            --finetune_pending_;
            return error_reply(503, "QUEUE_FULL", "finetune queue is full");
        }
        Slot slot{finetune_pending_};
        const auto t0 = std::chrono::steady_clock::now();
        std::lock_guard lock(finetune_mu_);
        FinetuneOptions o;
        o.steps = steps;
        FinetuneResult r = finetune_encoder(*model->encoder, *model->generator, x, o);
        const std::string id = registry_->add_session(model->model_id, std::make_shared<const Encoder>(std::move(r.encoder)),
                                                      std::chrono::seconds(config_.session_ttl_seconds));
        return HttpReply{200,
                         {{"session_model_id", id},
                          {"base_model_id", model->model_id},
                          {"ttl_seconds", config_.session_ttl_seconds},
                          {"initial_l1", r.initial_l1},
                          {"final_l1", r.final_l1},
                          {"timing_ms", elapsed_ms(t0)}}};
    });
}

HttpReply CompositionService::models() {
    return guarded("models", [&] {
        Json list = Json::array();
        const auto now = std::chrono::steady_clock::now();
        for (const auto& e : registry_->list()) {
            Json j = {{"model_id", e->model_id},
                      {"latent_spec", e->generator->latent_spec().summary()},
                      {"generator_kind", generator_kind_name(e->generator->kind())},
                      {"output_shape", {e->generator->output_shape().channels, e->generator->output_shape().height,
                                        e->generator->output_shape().width}},
                      {"generator", e->generator_path.string()},
                      {"encoder", e->encoder_path.string()},
                      {"loaded", true}};
            if (e->expires) {
                j["base_model_id"] = e->base_model;
                j["expires_in_s"] = std::chrono::duration<double>(*e->expires - now).count();
            }
            list.push_back(std::move(j));
        }
        return HttpReply{200, list};
    });
}

void CompositionService::mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const HttpReply& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto post = [&, send](const char* path, HttpReply (CompositionService::*fn)(const Json&)) {
        server.Post(path, [this, send, fn, path](const httplib::Request& req, httplib::Response& res) {
            Json body;
            try {
                body = Json::parse(req.body);
            } catch (const Json::exception& e) {
                send(res, error_reply(422, "INVALID_ARGUMENT", std::string("request body is not JSON: ") + e.what()));
                return;
            }
            const HttpReply r = (this->*fn)(body);
            spdlog::info("POST {} -> {}", path, r.status);
            send(res, r);
        });
    };
    post("/v1/compose", &CompositionService::compose);
    post("/v1/encode", &CompositionService::encode);
    post("/v1/generate", &CompositionService::generate);
    post("/v1/finetune", &CompositionService::finetune);
    server.Get("/v1/models", [this, send](const httplib::Request&, httplib::Response& res) { send(res, models()); });
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) send(res, error_reply(res.status, "NOT_FOUND", "no such endpoint"));
    });
}

int CompositionService::start() {
    require(!server_, ErrorCode::InvalidArgument, "service already started");
    server_ = std::make_unique<httplib::Server>();
    const int threads = config_.threads;
    server_->new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    mount(*server_);
    int port = config_.port;
    if (port == 0) {
        port = server_->bind_to_any_port(config_.host);
    } else if (!server_->bind_to_port(config_.host, port)) {
        port = -1;
    }
    if (port < 0) {
        server_.reset();
        fail(ErrorCode::IoError, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    spdlog::info("serving on {}:{}", config_.host, port);
    return port;
}

void CompositionService::stop() {
    if (!server_) return;
    server_->stop();
    if (thread_.joinable()) thread_.join();
    server_.reset();
}

void CompositionService::run() {
    start();
    if (thread_.joinable()) thread_.join();
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
