#include "resmo/server.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "resmo/errors.hpp"

namespace resmo {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::int64_t parse_i64(const std::string& s, const std::string& what)
{
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ArgumentError(what + " '" + s + "' is not an integer");
    return v;
}

int status_of(const Error& e)
{
    if (dynamic_cast<const AuthError*>(&e))
        return 401;
    if (dynamic_cast<const NotFoundError*>(&e))
        return 404;
    if (dynamic_cast<const ConflictError*>(&e))
        return 409;
    if (dynamic_cast<const IoError*>(&e))
        return 500;
    return 400;
}

void send_error(httplib::Response& res, int status, const std::string& name, const std::string& message)
{
    res.status = status;
    res.set_content(json{{"error", name}, {"message", message}}.dump(), "application/json");
}

json card_json(const PatientCard& c)
{
    return {{"patient_id", c.patient_id}, {"display_name", c.display_name}, {"age", c.age}, {"notes", c.notes}};
}

json session_json(const SessionInfo& s)
{
    return {{"session_id", s.session_id}, {"patient_id", s.patient_id}, {"t0_ms", s.t0_ms},
            {"frames", s.frames},         {"activities", s.activities}};
}

json parse_body(const httplib::Request& req)
{
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("request body is not JSON: ") + e.what());
    }
}

template <typename T>
T field(const json& j, const char* key)
{
    if (!j.is_object() || !j.contains(key))
        throw ValidationError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(std::string("field '") + key + "' has the wrong type");
    }
}

std::int64_t epoch_ms()
{
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

} // namespace

ServiceConfig parse_service_config(const std::string& text, const fs::path& base)
{
    ServiceConfig cfg;
    const auto resolve = [&](const std::string& v) {
        const fs::path p(v);
        return p.is_absolute() || base.empty() ? p : base / p;
    };
    std::istringstream in(text);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        const auto hash = line.find('#');
        const std::string t = trim(line.substr(0, hash));
        if (t.empty())
            continue;
        const auto eq = t.find('=');
        const std::string where = "config line " + std::to_string(ln) + ": ";
        if (eq == std::string::npos)
            throw ConfigError(where + "expected key = value");
        const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
        if (value.empty())
            throw ConfigError(where + "empty value for " + key);
        try {
            if (key == "listen")
                cfg.host = value;
            else if (key == "port") {
                const auto p = parse_i64(value, "port");
                if (p < 0 || p > 65535)
                    throw ArgumentError("port out of range");
                cfg.port = static_cast<int>(p);
            } else if (key == "credentials")
                cfg.credentials = resolve(value);
            else if (key == "data_dir")
                cfg.data_dir = resolve(value);
            else if (key == "token_ttl") {
                const auto s = parse_i64(value, "token_ttl");
                if (s <= 0)
                    throw ArgumentError("token_ttl must be positive");
                cfg.token_ttl = std::chrono::seconds(s);
            } else
                throw ArgumentError("unknown key '" + key + "'");
        } catch (const ArgumentError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return cfg;
}

ServiceConfig load_service_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_service_config(ss.str(), path.parent_path());
}

SessionServer::SessionServer(const ServiceConfig& cfg)
    : SessionServer(cfg, std::make_unique<Authenticator>(load_credentials(cfg.credentials), cfg.token_ttl))
{
}

SessionServer::SessionServer(const ServiceConfig& cfg, std::unique_ptr<Authenticator> auth)
    : cfg_(cfg), auth_(std::move(auth)), store_(std::make_unique<SessionStore>(cfg.data_dir)),
      http_(std::make_unique<httplib::Server>())
{
    routes();
}

SessionServer::~SessionServer() { stop(); }

int SessionServer::bind()
{
    if (port_ >= 0)
        return port_;
    if (cfg_.port == 0)
        port_ = http_->bind_to_any_port(cfg_.host);
    else
        port_ = http_->bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
    if (port_ < 0)
        throw IoError("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port));
    return port_;
}

void SessionServer::run()
{
    bind();
    http_->listen_after_bind();
}

int SessionServer::start()
{
    const int p = bind();
    thread_ = std::thread([this] { http_->listen_after_bind(); });
    http_->wait_until_ready();
    return p;
}

void SessionServer::stop()
{
    stopping_ = true;
    store_->notify_all();
    http_->stop();
    if (thread_.joinable())
        thread_.join();
}

void SessionServer::routes()
{
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;
    const auto guarded = [this](bool needs_auth, Handler h) {
        return [this, needs_auth, h](const httplib::Request& req, httplib::Response& res) {
            try {
                if (needs_auth) {
                    const auto header = req.get_header_value("Authorization");
                    if (header.rfind("Bearer ", 0) != 0)
                        throw AuthError("missing bearer token");
                    auth_->check(header.substr(7));
                }
                h(req, res);
            } catch (const Error& e) {
                send_error(res, status_of(e), e.name(), e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, "Error", e.what());
            }
        };
    };
    auto& s = *http_;

    s.Post("/api/login", guarded(false, [this](const auto& req, auto& res) {
        const json body = parse_body(req);
        const auto token = auth_->login(field<std::string>(body, "user"), field<std::string>(body, "secret"));
        res.set_content(json{{"token", token}, {"expires_in", auth_->ttl().count()}}.dump(), "application/json");
    }));
    s.Post("/api/logout", guarded(true, [this](const auto& req, auto& res) {
        auth_->revoke(req.get_header_value("Authorization").substr(7));
        res.status = 204;
    }));

    s.Get("/api/patients", guarded(true, [this](const auto&, auto& res) {
        json out = json::array();
        for (const auto& c : store_->patients())
            out.push_back(card_json(c));
        res.set_content(out.dump(), "application/json");
    }));
    s.Post("/api/patients", guarded(true, [this](const auto& req, auto& res) {
        const json body = parse_body(req);
        PatientCard c;
        c.patient_id = field<std::string>(body, "patient_id");
        c.display_name = field<std::string>(body, "display_name");
        c.age = field<int>(body, "age");
        if (body.contains("notes"))
            c.notes = field<std::string>(body, "notes");
        store_->create_patient(c);
        res.status = 201;
        res.set_content(card_json(c).dump(), "application/json");
    }));
    s.Get("/api/patients/:id", guarded(true, [this](const auto& req, auto& res) {
        res.set_content(card_json(store_->patient(req.path_params.at("id"))).dump(), "application/json");
    }));

    s.Get("/api/sessions", guarded(true, [this](const auto&, auto& res) {
        json out = json::array();
        for (const auto& info : store_->sessions())
            out.push_back(session_json(info));
        res.set_content(out.dump(), "application/json");
    }));
    s.Post("/api/sessions", guarded(true, [this](const auto& req, auto& res) {
        const json body = parse_body(req);
        const auto t0 = body.contains("t0_ms") ? field<std::int64_t>(body, "t0_ms") : epoch_ms();
        const auto info = store_->open_session(field<std::string>(body, "patient_id"), t0);
        res.status = 201;
        res.set_content(session_json(info).dump(), "application/json");
    }));
    s.Get("/api/sessions/:id", guarded(true, [this](const auto& req, auto& res) {
        res.set_content(session_json(store_->session(req.path_params.at("id"))).dump(), "application/json");
    }));

    s.Post("/api/sessions/:id/frames", guarded(true, [this](const auto& req, auto& res) {
        const auto frames = decode_frame_lines(req.body);
        const auto n = store_->ingest_frames(req.path_params.at("id"), frames);
        res.set_content(json{{"stored", n}}.dump(), "application/json");
    }));
    s.Post("/api/sessions/:id/activities", guarded(true, [this](const auto& req, auto& res) {
        const auto& id = req.path_params.at("id");
        std::vector<ActivityNote> notes;
        if (req.get_header_value("Content-Type").rfind("application/json", 0) == 0) {
            const json body = parse_body(req);
            notes.push_back({field<std::int64_t>(body, "dt_ms"), field<std::string>(body, "text")});
        } else {
            notes = decode_activity_lines(req.body);
        }
        if (notes.empty())
            throw ValidationError("no activity in request");
        std::size_t n = 0;
        for (const auto& a : notes)
            n = store_->register_activity(id, a);
        res.set_content(json{{"stored", n}}.dump(), "application/json");
    }));

    s.Get("/api/sessions/:id/export", guarded(true, [this](const auto& req, auto& res) {
        std::optional<TimeRange> range;
        const bool has_from = req.has_param("from"), has_to = req.has_param("to");
        if (has_from != has_to)
            throw ArgumentError("export needs both from and to, or neither");
        if (has_from)
            range = TimeRange{parse_i64(req.get_param_value("from"), "from"),
                              parse_i64(req.get_param_value("to"), "to")};
        res.set_content(store_->export_session(req.path_params.at("id"), range), "text/plain; charset=utf-8");
    }));

    s.Get("/api/sessions/:id/live", guarded(true, [this](const auto& req, auto& res) {
        const std::string id = req.path_params.at("id");
        const EfsDocument head = store_->record(id);
        struct Cursor
        {
            bool header_sent = false;
            std::size_t frames = 0, activities = 0;
        };
        auto cur = std::make_shared<Cursor>();
        if (req.has_param("frame"))
            cur->frames = static_cast<std::size_t>(std::max<std::int64_t>(0, parse_i64(req.get_param_value("frame"), "frame")));
        if (req.has_param("activity"))
            cur->activities =
                static_cast<std::size_t>(std::max<std::int64_t>(0, parse_i64(req.get_param_value("activity"), "activity")));
        const std::string preamble = encode_header(head.session_id, head.t0_ms, std::nullopt) + encode_card(head.card);
        res.set_chunked_content_provider("text/plain; charset=utf-8", [this, id, cur, preamble](std::size_t,
                                                                                             httplib::DataSink& sink) {
            if (stopping_) {
                sink.done();
                return true;
            }
            if (!cur->header_sent) {
                cur->header_sent = true;
                return sink.write(preamble.data(), preamble.size());
            }
            const auto chunk = store_->wait_for_updates(id, cur->frames, cur->activities, std::chrono::milliseconds(200));
            std::string out;
            for (const auto& f : chunk.frames)
                out += encode_frame(f);
            for (const auto& a : chunk.activities)
                out += encode_activity(a);
            cur->frames = chunk.frame_cursor;
            cur->activities = chunk.activity_cursor;
            if (out.empty())
                return sink.is_writable();
            return sink.write(out.data(), out.size());
        });
    }));
}

} // namespace resmo
