#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "resmo/errors.hpp"
#include "resmo/server.hpp"
#include "session_fixtures.hpp"

using namespace resmo;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("resmo_server_" + name + "_" + std::to_string(getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

struct Harness
{
    fs::path dir;
    std::unique_ptr<SessionServer> server;
    std::unique_ptr<httplib::Client> client;
    std::string token;

    explicit Harness(const std::string& name, std::chrono::seconds ttl = std::chrono::seconds(3600))
        : dir(fresh_dir(name))
    {
        std::ofstream(dir / "credentials.txt") << "# clinicians\n"
                                               << make_credential_line("doctor", "s3cret pass", 1000) << '\n';
        std::ofstream(dir / "server.conf") << "listen = 127.0.0.1\nport = 0\ncredentials = credentials.txt\n"
                                           << "data_dir = data\ntoken_ttl = " << ttl.count() << '\n';
        start();
    }

    void start()
    {
        server = std::make_unique<SessionServer>(load_service_config(dir / "server.conf"));
        const int port = server->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(5, 0);
    }

    void restart()
    {
        client.reset();
        server.reset();
        start();
    }

    std::string login(const std::string& user = "doctor", const std::string& secret = "s3cret pass")
    {
        const auto r = client->Post("/api/login", json{{"user", user}, {"secret", secret}}.dump(), "application/json");
        REQUIRE(r);
        if (r->status != 200)
            return {};
        return json::parse(r->body).at("token").get<std::string>();
    }

    httplib::Headers auth() const { return {{"Authorization", "Bearer " + token}}; }

    httplib::Result get(const std::string& path) { return client->Get(path, auth()); }
    httplib::Result post(const std::string& path, const std::string& body, const std::string& type)
    {
        return client->Post(path, auth(), body, type);
    }
    httplib::Result post_json(const std::string& path, const json& body)
    {
        return post(path, body.dump(), "application/json");
    }
};

std::string frame_lines(const std::vector<EmotionFrame>& fs)
{
    std::string s;
    for (const auto& f : fs)
        s += encode_frame(f);
    return s;
}

} // namespace

TEST_CASE("config parsing")
{
    const auto cfg = parse_service_config("# service\nlisten = 0.0.0.0\nport = 9000 # trailing\n"
                                          "credentials = creds.txt\ndata_dir = /var/resmo\ntoken_ttl = 60\n",
                                          "/etc/resmo");
    CHECK(cfg.host == "0.0.0.0");
    CHECK(cfg.port == 9000);
    CHECK(cfg.credentials == fs::path("/etc/resmo/creds.txt"));
    CHECK(cfg.data_dir == fs::path("/var/resmo"));
    CHECK(cfg.token_ttl == std::chrono::seconds(60));
    CHECK_THROWS_WITH_AS(parse_service_config("a = 1\n"), doctest::Contains("line 1"), ConfigError);
    CHECK_THROWS_AS(parse_service_config("port = 70000\n"), ConfigError);
    CHECK_THROWS_AS(parse_service_config("port = x\n"), ConfigError);
    CHECK_THROWS_AS(parse_service_config("listen\n"), ConfigError);
    CHECK_THROWS_AS(parse_service_config("token_ttl = 0\n"), ConfigError);
    CHECK_THROWS_AS(load_service_config("/nonexistent/server.conf"), IoError);
}

TEST_CASE("credential lines and hashing")
{
    const auto line = make_credential_line("ana", "pw", 1000);
    const auto creds = parse_credentials(line + "\n");
    REQUIRE(creds.count("ana"));
    const auto& c = creds.at("ana");
    CHECK(c.iterations == 1000);
    CHECK(hash_secret("pw", c.salt_hex, 1000) == c.hash_hex);
    CHECK(hash_secret("pw2", c.salt_hex, 1000) != c.hash_hex);
    // RFC 7914 PBKDF2-HMAC-SHA256 vector: P="passwd", S="salt", c=1
    CHECK(hash_secret("passwd", "73616c74", 1).substr(0, 32) == "55ac046e56e3089fec1691c22544b605");
    CHECK(make_credential_line("ana", "pw", 1000) != line); // fresh salt
    CHECK_THROWS_AS(parse_credentials("ana:zz:1:00\n"), DecodeError);
    CHECK_THROWS_AS(parse_credentials(line + "\n" + line + "\n"), DecodeError);
    CHECK_THROWS_AS(make_credential_line("a:b", "pw"), ArgumentError);
    CHECK_THROWS_AS(load_credentials("/nonexistent/creds"), IoError);
}

TEST_CASE("authenticator tokens, expiry and revocation")
{
    auto now = Authenticator::Clock::now();
    Authenticator auth(parse_credentials(make_credential_line("ana", "pw", 1000)), std::chrono::seconds(60),
                       [&] { return now; });
    CHECK_THROWS_AS(auth.login("ana", "wrong"), AuthError);
    CHECK_THROWS_AS(auth.login("bob", "pw"), AuthError);
    const auto t = auth.login("ana", "pw");
    CHECK(t.size() == 64);
    CHECK(auth.check(t) == "ana");
    now += std::chrono::seconds(59);
    CHECK(auth.check(t) == "ana");
    now += std::chrono::seconds(1);
    CHECK_THROWS_WITH_AS(auth.check(t), "token expired", AuthError);
    const auto t2 = auth.login("ana", "pw");
    CHECK(t2 != t);
    auth.revoke(t2);
    CHECK_THROWS_AS(auth.check(t2), AuthError);
    CHECK_THROWS_AS(Authenticator({}, std::chrono::seconds(0)), ConfigError);
}

TEST_CASE("every route except login needs a valid token")
{
    Harness h("auth");
    for (const auto* path : {"/api/patients", "/api/sessions", "/api/patients/x", "/api/sessions/s1/export"}) {
        const auto r = h.client->Get(path);
        REQUIRE(r);
        CHECK(r->status == 401);
        CHECK(json::parse(r->body).at("error") == "AuthError");
    }
    CHECK(h.login("doctor", "wrong").empty());
    CHECK(h.login("nobody", "s3cret pass").empty());
    h.token = h.login();
    REQUIRE_FALSE(h.token.empty());
    CHECK(h.get("/api/patients")->status == 200);
    CHECK(h.post("/api/logout", "", "text/plain")->status == 204);
    CHECK(h.get("/api/patients")->status == 401);
    const auto bad = h.client->Post("/api/login", "not json", "application/json");
    CHECK(bad->status == 400);
}

TEST_CASE("scripted client replay: ingest, export and filter")
{
    Harness h("replay");
    h.token = h.login();
    const auto doc = fixture::canonical_session();

    const auto pc = h.post_json("/api/patients", {{"patient_id", doc.card.patient_id},
                                                  {"display_name", doc.card.display_name},
                                                  {"age", doc.card.age},
                                                  {"notes", doc.card.notes}});
    REQUIRE(pc->status == 201);
    CHECK(h.post_json("/api/patients", {{"patient_id", doc.card.patient_id}, {"display_name", "x"}, {"age", 1}})
              ->status == 409);
    CHECK(h.post_json("/api/patients", {{"patient_id", "p2"}, {"age", 1}})->status == 400);
    const auto got = json::parse(h.get("/api/patients/" + doc.card.patient_id)->body);
    CHECK(got.at("display_name") == doc.card.display_name);
    CHECK(got.at("notes") == doc.card.notes);
    CHECK(h.get("/api/patients/nobody")->status == 404);

    const auto sr = h.post_json("/api/sessions", {{"patient_id", doc.card.patient_id}, {"t0_ms", doc.t0_ms}});
    REQUIRE(sr->status == 201);
    const std::string sid = json::parse(sr->body).at("session_id");
    CHECK(sid == doc.session_id);
    CHECK(h.post_json("/api/sessions", {{"patient_id", "nobody"}})->status == 404);

    // replay: six batches of ten frames with the activities in between
    std::size_t a = 0;
    for (int b = 0; b < 6; ++b) {
        const std::vector<EmotionFrame> batch(doc.frames.begin() + b * 10, doc.frames.begin() + (b + 1) * 10);
        const auto r = h.post("/api/sessions/" + sid + "/frames", frame_lines(batch), "text/plain");
        REQUIRE(r->status == 200);
        CHECK(json::parse(r->body).at("stored") == (b + 1) * 10);
        while (a < doc.activities.size() && doc.activities[a].dt_ms < batch.back().dt_ms + 1000) {
            const auto& note = doc.activities[a++];
            const auto ar = a % 2 ? h.post_json("/api/sessions/" + sid + "/activities",
                                                {{"dt_ms", note.dt_ms}, {"text", note.text}})
                                  : h.post("/api/sessions/" + sid + "/activities", encode_activity(note), "text/plain");
            CHECK(ar->status == 200);
        }
    }

    const auto full = h.get("/api/sessions/" + sid + "/export");
    REQUIRE(full->status == 200);
    CHECK(full->body == encode_session(doc));
    for (const auto& [from, to] : std::vector<std::pair<int, int>>{{0, 59000}, {10000, 30000}, {27000, 27000}, {90000, 99000}}) {
        const auto r = h.get("/api/sessions/" + sid + "/export?from=" + std::to_string(from) + "&to=" + std::to_string(to));
        REQUIRE(r->status == 200);
        CHECK(r->body == encode_session(filter_range(doc, {from, to})));
    }
    CHECK(h.get("/api/sessions/" + sid + "/export?from=5&to=1")->status == 400);
    CHECK(h.get("/api/sessions/" + sid + "/export?from=5")->status == 400);
    CHECK(h.get("/api/sessions/s999999/export")->status == 404);

    const auto bad = h.post("/api/sessions/" + sid + "/frames", "F|70000|100,0,0,0,0,0,0\nF|69000|100,0,0,0,0,0,0\n",
                            "text/plain");
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body).at("error") == "DecodeError");
    CHECK(json::parse(bad->body).at("message").get<std::string>().find("line 2") != std::string::npos);
    const auto early = h.post("/api/sessions/" + sid + "/frames", "F|100|100,0,0,0,0,0,0\n", "text/plain");
    CHECK(early->status == 400);
    CHECK(json::parse(early->body).at("error") == "ValidationError");

    const auto info = json::parse(h.get("/api/sessions/" + sid)->body);
    CHECK(info.at("frames") == 60);
    CHECK(info.at("activities") == 3);

    // data and sessions survive a restart; the old token does not
    h.restart();
    CHECK(h.get("/api/patients")->status == 401);
    h.token = h.login();
    CHECK(h.get("/api/sessions/" + sid + "/export")->body == encode_session(doc));
}

TEST_CASE("live stream pushes frames in order as they arrive")
{
    Harness h("live");
    h.token = h.login();
    h.post_json("/api/patients", {{"patient_id", "p1"}, {"display_name", "Ana"}, {"age", 30}});
    const std::string sid =
        json::parse(h.post_json("/api/sessions", {{"patient_id", "p1"}, {"t0_ms", 1000}})->body).at("session_id");
    const auto before = fixture::canonical_frames(20, 3);
    h.post("/api/sessions/" + sid + "/frames", frame_lines({before.begin(), before.begin() + 5}), "text/plain");

    std::string received;
    std::atomic<bool> header_seen{false};
    std::thread listener([&] {
        httplib::Client c("127.0.0.1", h.server->port());
        c.set_read_timeout(5, 0);
        c.Get("/api/sessions/" + sid + "/live", h.auth(), [&](const char* data, std::size_t n) {
            received.append(data, n);
            header_seen = true;
            return std::count(received.begin(), received.end(), '\n') < 2 + 20 + 1;
        });
    });
    while (!header_seen)
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    for (int b = 1; b < 4; ++b) {
        h.post("/api/sessions/" + sid + "/frames", frame_lines({before.begin() + b * 5, before.begin() + (b + 1) * 5}),
               "text/plain");
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    h.post("/api/sessions/" + sid + "/activities", "A|19000|closing remarks\n", "text/plain");
    listener.join();

    EfsDocument expected;
    expected.session_id = sid;
    expected.t0_ms = 1000;
    expected.card = {"p1", "Ana", 30, ""};
    expected.frames = before;
    expected.activities = {{19000, "closing remarks"}};
    CHECK(decode_session(received) == expected);

    const auto unauth = httplib::Client("127.0.0.1", h.server->port()).Get("/api/sessions/" + sid + "/live");
    CHECK(unauth->status == 401);
}

TEST_CASE("server refuses a missing credential file")
{
    const auto dir = fresh_dir("nocreds");
    ServiceConfig cfg;
    cfg.credentials = dir / "missing.txt";
    cfg.data_dir = dir / "data";
    CHECK_THROWS_AS(SessionServer{cfg}, IoError);
}
