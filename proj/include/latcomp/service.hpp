#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "latcomp/composition.hpp"
#include "latcomp/generators.hpp"
#include "latcomp/io.hpp"
#include "latcomp/regressor.hpp"

namespace httplib {
class Server;
}

namespace latcomp {
inline namespace LATCOMP_ABI {

struct ModelPaths {
    std::string model_id;
    fs::path generator;
    fs::path encoder;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    int session_ttl_seconds = 15 * 60;
    int finetune_queue_depth = 2;  // running + waiting finetune jobs
    int threads = 4;
    std::vector<ModelPaths> models;
};

Json service_config_to_json(const ServiceConfig& c);

/// Resolves the service config. Precedence: env > flags > file > defaults.
/// `file` and `flags` hold the same keys as service_config_to_json; relative
/// model paths in the file resolve against `file_dir`. Recognised environment
/// variables: LATCOMP_HOST, LATCOMP_PORT, LATCOMP_SESSION_TTL,
/// LATCOMP_QUEUE_DEPTH, LATCOMP_THREADS.
ServiceConfig resolve_service_config(const Json& file, const fs::path& file_dir, const Json& flags,
                                     const std::map<std::string, std::string>& env);
/// The LATCOMP_* subset of the process environment.
std::map<std::string, std::string> service_env();

Json latent_to_json(const LatentCode& z);
/// Accepts {"values": [...]} flat or nested, optionally with "shape".
LatentCode latent_from_json(const Json& j, const LatentSpec& spec);

struct ModelEntry {
    std::string model_id;
    fs::path generator_path;
    fs::path encoder_path;
    GeneratorHandle generator;
    EncoderHandle encoder;
    std::string base_model;  // set for session entries
    std::optional<std::chrono::steady_clock::time_point> expires;
};

/// Thread-safe model table. Base entries are immutable; session entries hold
/// finetuned encoder copies and expire.
class ModelRegistry {
public:
    /// Loads and validates both checkpoints; on failure the registry is unchanged.
    void register_model(const std::string& id, const fs::path& generator, const fs::path& encoder);
    void register_model(const std::string& id, GeneratorHandle g, EncoderHandle e);
    std::string add_session(const std::string& base_id, EncoderHandle e, std::chrono::seconds ttl);

    /// Throws UNKNOWN_MODEL for missing or expired entries.
    std::shared_ptr<const ModelEntry> find(const std::string& id);
    std::vector<std::shared_ptr<const ModelEntry>> list();
    std::size_t purge_expired();

private:
    void insert(std::shared_ptr<ModelEntry> entry);

    std::mutex mu_;
    std::map<std::string, std::shared_ptr<const ModelEntry>> entries_;
    std::uint64_t session_counter_ = 0;
};

struct HttpReply {
    int status = 200;
    Json body;
};

/// Endpoint logic, independent of the transport so it can be tested directly.
class CompositionService {
public:
    CompositionService(ServiceConfig config, std::shared_ptr<ModelRegistry> registry);
    ~CompositionService();

    HttpReply compose(const Json& request);
    HttpReply encode(const Json& request);
    HttpReply generate(const Json& request);
    HttpReply finetune(const Json& request);
    HttpReply models();

    /// Routes the handlers on an httplib server (CORS enabled).
    void mount(httplib::Server& server);

    /// Binds config.host:port (port 0 picks a free one) and serves on a
    /// background thread. Returns the bound port.
    int start();
    void stop();
    /// Blocking serve.
    void run();

    const ServiceConfig& config() const { return config_; }
    ModelRegistry& registry() { return *registry_; }

private:
    HttpReply guarded(const char* endpoint, const std::function<HttpReply()>& fn);

    ServiceConfig config_;
    std::shared_ptr<ModelRegistry> registry_;
    std::mutex finetune_mu_;
    std::atomic<int> finetune_pending_{0};
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace LATCOMP_ABI
}  // namespace latcomp
