#include <doctest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "resmo/errors.hpp"
#include "resmo/session_store.hpp"
#include "session_fixtures.hpp"

using namespace resmo;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("resmo_store_" + name + "_" + std::to_string(getpid()));
    fs::remove_all(p);
    return p;
}

EmotionFrame frame(std::int64_t dt, int hot = 0)
{
    EmotionFrame f{dt, {}};
    f.probs[static_cast<std::size_t>(hot % 7)] = 100;
    return f;
}

std::vector<EmotionFrame> frames(std::int64_t from, int n)
{
    std::vector<EmotionFrame> out;
    for (int i = 0; i < n; ++i)
        out.push_back(frame(from + i * 100, i));
    return out;
}

} // namespace

TEST_CASE("patients are unique and persist")
{
    const auto dir = fresh_dir("patients");
    {
        SessionStore s(dir);
        s.create_patient(fixture::canonical_card());
        s.create_patient({"p2", "Luis", 50, ""});
        CHECK_THROWS_AS(s.create_patient({"p2", "Other", 1, ""}), ConflictError);
        CHECK_THROWS_AS(s.create_patient({"bad id", "X", 1, ""}), ValidationError);
        CHECK_THROWS_AS(s.create_patient({"p3", "", 1, ""}), ValidationError);
        CHECK_THROWS_AS(s.patient("nope"), NotFoundError);
    }
    SessionStore s(dir);
    REQUIRE(s.patients().size() == 2);
    CHECK(s.patient("p0001") == fixture::canonical_card());
}

TEST_CASE("batches append in order and ties keep arrival order")
{
    const auto dir = fresh_dir("order");
    SessionStore s(dir);
    s.create_patient({"p1", "Ana", 30, ""});
    const auto info = s.open_session("p1", 1000);
    CHECK(info.session_id == "s000001");
    CHECK(s.ingest_frames(info.session_id, frames(0, 10)) == 10);
    auto second = frames(900, 10);
    second[0].probs = {0, 0, 0, 0, 0, 0, 100}; // same dt as the last stored frame
    CHECK(s.ingest_frames(info.session_id, second) == 20);
    const auto rec = s.record(info.session_id);
    REQUIRE(rec.frames.size() == 20);
    CHECK(rec.frames[9].dt_ms == 900);
    CHECK(rec.frames[10].dt_ms == 900);
    CHECK(rec.frames[9].probs[2] == 100);
    CHECK(rec.frames[10].probs[6] == 100);
    CHECK(std::is_sorted(rec.frames.begin(), rec.frames.end(),
                         [](const auto& a, const auto& b) { return a.dt_ms < b.dt_ms; }));
    CHECK(s.ingest_frames(info.session_id, {}) == 20);
}

TEST_CASE("rejections name the offending index and store nothing")
{
    const auto dir = fresh_dir("reject");
    SessionStore s(dir);
    s.create_patient({"p1", "Ana", 30, ""});
    const auto id = s.open_session("p1", 0).session_id;
    auto batch = frames(0, 5);
    batch[3].dt_ms = 50;
    try {
        s.ingest_frames(id, batch);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("frame 3") != std::string::npos);
    }
    batch = frames(0, 3);
    batch[1].probs[0] = 99;
    CHECK_THROWS_WITH_AS(s.ingest_frames(id, batch), doctest::Contains("frame 1"), ValidationError);
    s.ingest_frames(id, frames(1000, 2));
    CHECK_THROWS_WITH_AS(s.ingest_frames(id, frames(500, 1)), doctest::Contains("frame 0"), ValidationError);
    CHECK(s.session(id).frames == 2);
    CHECK_THROWS_AS(s.ingest_frames("s999999", frames(0, 1)), NotFoundError);
    CHECK_THROWS_AS(s.register_activity("s999999", {0, "x"}), NotFoundError);
    CHECK_THROWS_AS(s.register_activity(id, {0, ""}), ValidationError);
    CHECK_THROWS_AS(s.open_session("nobody", 0), NotFoundError);
    CHECK_THROWS_AS(s.export_session("s999999"), NotFoundError);
}

TEST_CASE("export filters by range and full export equals the record")
{
    const auto dir = fresh_dir("export");
    SessionStore s(dir);
    const auto doc = fixture::canonical_session();
    s.create_patient(doc.card);
    const auto id = s.open_session(doc.card.patient_id, doc.t0_ms).session_id;
    s.ingest_frames(id, std::vector<EmotionFrame>(doc.frames.begin(), doc.frames.begin() + 30));
    for (const auto& a : doc.activities)
        s.register_activity(id, a);
    s.ingest_frames(id, std::vector<EmotionFrame>(doc.frames.begin() + 30, doc.frames.end()));

    CHECK(s.export_session(id) == encode_session(doc));
    CHECK(s.export_session(id, TimeRange{10000, 30000}) == encode_session(filter_range(doc, {10000, 30000})));
    CHECK(decode_session(s.export_session(id, TimeRange{10000, 30000})).frames.size() == 21);
    CHECK(s.export_session(id, TimeRange{70000, 80000}) ==
          "EFS1 s000001 1767225600000 70000 80000\n" + encode_card(doc.card));
    CHECK_THROWS_AS(s.export_session(id, TimeRange{5, 1}), ArgumentError);
}

TEST_CASE("state survives reopening and ids continue")
{
    const auto dir = fresh_dir("reopen");
    std::string text;
    {
        SessionStore s(dir);
        s.create_patient({"p1", "Ana", 30, "n"});
        const auto id = s.open_session("p1", 5).session_id;
        s.ingest_frames(id, frames(0, 7));
        s.register_activity(id, {300, "talked"});
        text = s.export_session(id);
    }
    SessionStore s(dir);
    CHECK(s.export_session("s000001") == text);
    CHECK(s.open_session("p1", 6).session_id == "s000002");
    CHECK(s.sessions().size() == 2);
}

TEST_CASE("a torn trailing line is cut on open")
{
    const auto dir = fresh_dir("torn");
    {
        SessionStore s(dir);
        s.create_patient({"p1", "Ana", 30, ""});
        s.ingest_frames(s.open_session("p1", 0).session_id, frames(0, 3));
    }
    {
        std::ofstream out(dir / "sessions" / "s000001.efs", std::ios::app | std::ios::binary);
        out << "F|400|0,0,10";
        std::ofstream p(dir / "patients.efs", std::ios::app | std::ios::binary);
        p << "P|p9|Half";
    }
    // a session whose card never reached the disk was never acknowledged
    std::ofstream(dir / "sessions" / "s000002.efs", std::ios::binary) << "EFS1 s000002 0\n";
    SessionStore s(dir);
    CHECK(s.record("s000001").frames.size() == 3);
    CHECK(s.patients().size() == 1);
    CHECK(s.sessions().size() == 1);
    CHECK_FALSE(fs::exists(dir / "sessions" / "s000002.efs"));
    CHECK(s.ingest_frames("s000001", frames(400, 1)) == 4);
    SessionStore again(dir);
    CHECK(again.record("s000001").frames.size() == 4);
}

TEST_CASE("acknowledged frames survive SIGKILL")
{
    const auto dir = fresh_dir("kill");
    {
        SessionStore s(dir);
        s.create_patient({"p1", "Ana", 30, ""});
        s.open_session("p1", 0);
    }
    int fds[2];
    REQUIRE(pipe(fds) == 0);
    const pid_t pid = fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
        close(fds[0]);
        SessionStore s(dir);
        for (std::int64_t i = 0;; ++i) {
            const auto n = static_cast<std::uint32_t>(s.ingest_frames("s000001", {frame(i * 10, static_cast<int>(i))}));
            if (write(fds[1], &n, sizeof n) != sizeof n)
                _exit(1);
        }
    }
    close(fds[1]);
    std::uint32_t acked = 0, n = 0;
    while (acked < 300 && read(fds[0], &n, sizeof n) == sizeof n)
        acked = n;
    kill(pid, SIGKILL);
    int status = 0;
    waitpid(pid, &status, 0);
    // drain acks sent before the kill landed
    while (read(fds[0], &n, sizeof n) == sizeof n)
        acked = n;
    close(fds[0]);
    CHECK(WIFSIGNALED(status));
    REQUIRE(acked >= 300);

    SessionStore s(dir);
    const auto rec = s.record("s000001");
    CHECK(rec.frames.size() >= acked);
    CHECK(rec.frames.size() <= acked + 1);
    for (std::size_t i = 0; i < rec.frames.size(); ++i)
        CHECK(rec.frames[i] == frame(static_cast<std::int64_t>(i) * 10, static_cast<int>(i)));
}

TEST_CASE("readers see a consistent prefix while writers append")
{
    const auto dir = fresh_dir("concurrent");
    SessionStore s(dir);
    s.create_patient({"p1", "Ana", 30, ""});
    std::vector<std::string> ids;
    for (int i = 0; i < 3; ++i)
        ids.push_back(s.open_session("p1", i).session_id);
    std::vector<std::thread> writers;
    for (const auto& id : ids)
        writers.emplace_back([&s, id] {
            for (int b = 0; b < 20; ++b)
                s.ingest_frames(id, frames(b * 1000, 5));
        });
    bool consistent = true;
    std::thread reader([&] {
        for (int r = 0; r < 200; ++r)
            for (const auto& id : ids) {
                const auto rec = s.record(id);
                consistent = consistent && rec.frames.size() % 5 == 0;
                for (std::size_t i = 0; i < rec.frames.size(); ++i)
                    consistent = consistent && rec.frames[i] == frames(static_cast<std::int64_t>(i / 5) * 1000, 5)[i % 5];
            }
    });
    for (auto& t : writers)
        t.join();
    reader.join();
    CHECK(consistent);
    for (const auto& id : ids)
        CHECK(s.session(id).frames == 100);
}

TEST_CASE("waiting readers wake on new frames")
{
    const auto dir = fresh_dir("wait");
    SessionStore s(dir);
    s.create_patient({"p1", "Ana", 30, ""});
    const auto id = s.open_session("p1", 0).session_id;
    auto empty = s.wait_for_updates(id, 0, 0, std::chrono::milliseconds(20));
    CHECK(empty.frames.empty());
    std::thread writer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        s.ingest_frames(id, frames(0, 2));
        s.register_activity(id, {10, "hello"});
    });
    std::size_t fc = 0, ac = 0;
    std::vector<EmotionFrame> got;
    while (fc < 2 || ac < 1) {
        const auto c = s.wait_for_updates(id, fc, ac, std::chrono::seconds(5));
        got.insert(got.end(), c.frames.begin(), c.frames.end());
        fc = c.frame_cursor;
        ac = c.activity_cursor;
    }
    writer.join();
    CHECK(got == frames(0, 2));
}
