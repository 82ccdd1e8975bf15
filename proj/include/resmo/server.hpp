#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include "resmo/auth.hpp"
#include "resmo/session_store.hpp"

namespace httplib {
class Server;
}

namespace resmo {

struct ServiceConfig
{
    std::string host = "127.0.0.1";
    int port = 8080; ///< 0 picks a free port
    std::filesystem::path credentials = "credentials.txt";
    std::filesystem::path data_dir = "sessions-data";
    std::chrono::seconds token_ttl{3600};
};

/// `key = value` lines: listen, port, credentials, data_dir, token_ttl.
/// Relative paths are resolved against `base`. Unknown keys are a
/// ConfigError naming the line.
ServiceConfig parse_service_config(const std::string& text, const std::filesystem::path& base = {});
ServiceConfig load_service_config(const std::filesystem::path& path);

/// HTTP front end of the session store. Routes:
///   POST /api/login, POST /api/logout
///   GET|POST /api/patients, GET /api/patients/{id}
///   GET|POST /api/sessions, GET /api/sessions/{id}
///   POST /api/sessions/{id}/frames       EFS/1 F-lines
///   POST /api/sessions/{id}/activities   EFS/1 A-lines or JSON {dt_ms, text}
///   GET  /api/sessions/{id}/export?from=&to=
///   GET  /api/sessions/{id}/live         chunked EFS/1 lines as they arrive
/// Every route except login needs `Authorization: Bearer <token>`.
class SessionServer
{
public:
    explicit SessionServer(const ServiceConfig& cfg);
    SessionServer(const ServiceConfig& cfg, std::unique_ptr<Authenticator> auth);
    ~SessionServer();
    SessionServer(const SessionServer&) = delete;
    SessionServer& operator=(const SessionServer&) = delete;

    /// Binds the listening socket and returns the port. Throws IoError.
    int bind();
    /// Serves until stop(); binds first if needed.
    void run();
    /// bind() and run() on a background thread.
    int start();
    void stop();

    SessionStore& store() noexcept { return *store_; }
    Authenticator& auth() noexcept { return *auth_; }
    int port() const noexcept { return port_; }

private:
    void routes();

    ServiceConfig cfg_;
    std::unique_ptr<Authenticator> auth_;
    std::unique_ptr<SessionStore> store_;
    std::unique_ptr<httplib::Server> http_;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
    int port_ = -1;
};

} // namespace resmo
