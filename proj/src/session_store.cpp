#include "resmo/session_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "resmo/errors.hpp"

namespace resmo {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void throw_errno(const std::string& what)
{
    throw IoError(what + ": " + std::strerror(errno));
}

void write_all(int fd, std::string_view data, const std::string& what)
{
    while (!data.empty()) {
        const ssize_t n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw_errno(what);
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
    if (::fsync(fd) != 0)
        throw_errno(what);
}

void sync_directory(const fs::path& dir)
{
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
    if (fd < 0)
        throw_errno("open " + dir.string());
    ::fsync(fd);
    ::close(fd);
}

int open_append(const fs::path& p, bool exclusive)
{
    const int flags = O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC | (exclusive ? O_EXCL : 0);
    const int fd = ::open(p.c_str(), flags, 0644);
    if (fd < 0)
        throw_errno("open " + p.string());
    return fd;
}

// reads a log and cuts off a partial last line left by a crash
std::string read_and_repair(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    const std::size_t keep = complete_prefix(text);
    if (keep != text.size()) {
        fs::resize_file(p, keep);
        text.resize(keep);
    }
    return text;
}

} // namespace

std::size_t complete_prefix(std::string_view text)
{
    const auto nl = text.rfind('\n');
    return nl == std::string_view::npos ? 0 : nl + 1;
}

struct SessionStore::Session
{
    std::mutex write_mutex;
    mutable std::shared_mutex data_mutex;
    mutable std::condition_variable_any changed;
    EfsDocument doc;
    int fd = -1;

    ~Session()
    {
        if (fd >= 0)
            ::close(fd);
    }
};

SessionStore::SessionStore(fs::path dir) : dir_(std::move(dir))
{
    std::error_code ec;
    fs::create_directories(dir_ / "sessions", ec);
    if (ec)
        throw IoError("cannot create " + (dir_ / "sessions").string() + ": " + ec.message());
    load();
    patients_fd_ = open_append(dir_ / "patients.efs", false);
}

SessionStore::~SessionStore()
{
    notify_all();
    if (patients_fd_ >= 0)
        ::close(patients_fd_);
}

void SessionStore::load()
{
    const auto pfile = dir_ / "patients.efs";
    if (fs::exists(pfile)) {
        const std::string text = read_and_repair(pfile);
        std::istringstream in(text);
        std::string line;
        std::size_t ln = 0;
        while (std::getline(in, line)) {
            ++ln;
            if (line.empty())
                continue;
            PatientCard c;
            try {
                c = decode_card(line, ln);
            } catch (const DecodeError& e) {
                throw IoError(pfile.string() + ": " + e.what());
            }
            patients_[c.patient_id] = c;
        }
    }
    for (const auto& entry : fs::directory_iterator(dir_ / "sessions"))
        if (entry.is_regular_file() && entry.path().extension() == ".efs")
            load_session(entry.path());
}

void SessionStore::load_session(const fs::path& file)
{
    const std::string text = read_and_repair(file);
    if (std::count(text.begin(), text.end(), '\n') < 2) {
        // crash before the header and card reached the disk; never acked
        fs::remove(file);
        return;
    }
    auto s = std::make_unique<Session>();
    try {
        s->doc = decode_session(text);
    } catch (const DecodeError& e) {
        throw IoError(file.string() + ": " + e.what());
    }
    if (s->doc.session_id != file.stem().string())
        throw IoError(file.string() + ": header names session " + s->doc.session_id);
    s->fd = open_append(file, false);
    const std::string& id = s->doc.session_id;
    if (id.size() > 1 && id[0] == 's') {
        std::uint64_t n = 0;
        if (std::from_chars(id.data() + 1, id.data() + id.size(), n).ec == std::errc{})
            next_session_ = std::max(next_session_, n + 1);
    }
    sessions_[id] = std::move(s);
}

void SessionStore::create_patient(const PatientCard& card)
{
    validate_card(card);
    std::lock_guard create(create_mutex_);
    {
        std::shared_lock lock(mutex_);
        if (patients_.count(card.patient_id))
            throw ConflictError("patient " + card.patient_id + " already exists");
    }
    write_all(patients_fd_, encode_card(card), "append patients.efs");
    std::unique_lock lock(mutex_);
    patients_[card.patient_id] = card;
}

std::vector<PatientCard> SessionStore::patients() const
{
    std::shared_lock lock(mutex_);
    std::vector<PatientCard> out;
    for (const auto& [id, c] : patients_)
        out.push_back(c);
    return out;
}

PatientCard SessionStore::patient(const std::string& id) const
{
    std::shared_lock lock(mutex_);
    const auto it = patients_.find(id);
    if (it == patients_.end())
        throw NotFoundError("no patient " + id);
    return it->second;
}

SessionInfo SessionStore::open_session(const std::string& patient_id, std::int64_t t0_ms)
{
    if (t0_ms < 0)
        throw ValidationError("session start " + std::to_string(t0_ms) + " is negative");
    const PatientCard card = patient(patient_id);
    std::lock_guard create(create_mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(next_session_));
    const std::string id = buf;
    const auto file = dir_ / "sessions" / (id + ".efs");

    auto s = std::make_unique<Session>();
    s->doc.session_id = id;
    s->doc.t0_ms = t0_ms;
    s->doc.card = card;
    s->fd = open_append(file, true);
    write_all(s->fd, encode_header(id, t0_ms, std::nullopt) + encode_card(card), "create " + file.string());
    sync_directory(file.parent_path());

    std::unique_lock lock(mutex_);
    ++next_session_;
    sessions_[id] = std::move(s);
    return {id, patient_id, t0_ms, 0, 0};
}

SessionStore::Session& SessionStore::find(const std::string& session_id) const
{
    std::shared_lock lock(mutex_);
    const auto it = sessions_.find(session_id);
    if (it == sessions_.end())
        throw NotFoundError("no session " + session_id);
    return *it->second;
}

std::vector<SessionInfo> SessionStore::sessions() const
{
    std::vector<std::string> ids;
    {
        std::shared_lock lock(mutex_);
        for (const auto& [id, s] : sessions_)
            ids.push_back(id);
    }
    std::vector<SessionInfo> out;
    for (const auto& id : ids)
        out.push_back(session(id));
    return out;
}

SessionInfo SessionStore::session(const std::string& session_id) const
{
    const Session& s = find(session_id);
    std::shared_lock lock(s.data_mutex);
    return {s.doc.session_id, s.doc.card.patient_id, s.doc.t0_ms, s.doc.frames.size(), s.doc.activities.size()};
}

std::size_t SessionStore::ingest_frames(const std::string& session_id, const std::vector<EmotionFrame>& batch)
{
    Session& s = find(session_id);
    std::lock_guard writer(s.write_mutex);
    std::int64_t last = -1;
    {
        std::shared_lock lock(s.data_mutex);
        if (!s.doc.frames.empty())
            last = s.doc.frames.back().dt_ms;
    }
    std::string lines;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        try {
            validate_frame(batch[i]);
        } catch (const ValidationError& e) {
            throw ValidationError("frame " + std::to_string(i) + ": " + e.what());
        }
        if (batch[i].dt_ms < last)
            throw ValidationError("frame " + std::to_string(i) + ": dt " + std::to_string(batch[i].dt_ms) +
                                  " precedes " + std::to_string(last));
        last = batch[i].dt_ms;
        lines += encode_frame(batch[i]);
    }
    if (!lines.empty())
        write_all(s.fd, lines, "append session " + session_id);
    std::size_t count;
    {
        std::unique_lock lock(s.data_mutex);
        s.doc.frames.insert(s.doc.frames.end(), batch.begin(), batch.end());
        count = s.doc.frames.size();
    }
    s.changed.notify_all();
    return count;
}

std::size_t SessionStore::register_activity(const std::string& session_id, const ActivityNote& note)
{
    if (note.text.empty())
        throw ValidationError("activity text is empty");
    if (note.dt_ms < 0)
        throw ValidationError("activity dt " + std::to_string(note.dt_ms) + " is negative");
    Session& s = find(session_id);
    std::lock_guard writer(s.write_mutex);
    {
        std::shared_lock lock(s.data_mutex);
        if (!s.doc.activities.empty() && note.dt_ms < s.doc.activities.back().dt_ms)
            throw ValidationError("activity dt " + std::to_string(note.dt_ms) + " precedes " +
                                  std::to_string(s.doc.activities.back().dt_ms));
    }
    write_all(s.fd, encode_activity(note), "append session " + session_id);
    std::size_t count;
    {
        std::unique_lock lock(s.data_mutex);
        s.doc.activities.push_back(note);
        count = s.doc.activities.size();
    }
    s.changed.notify_all();
    return count;
}

EfsDocument SessionStore::record(const std::string& session_id) const
{
    const Session& s = find(session_id);
    std::shared_lock lock(s.data_mutex);
    return s.doc;
}

std::string SessionStore::export_session(const std::string& session_id, std::optional<TimeRange> range) const
{
    const EfsDocument doc = record(session_id);
    return encode_session(range ? filter_range(doc, *range) : doc);
}

LiveChunk SessionStore::wait_for_updates(const std::string& session_id, std::size_t frame_cursor,
                                         std::size_t activity_cursor, std::chrono::milliseconds timeout) const
{
    const Session& s = find(session_id);
    std::shared_lock lock(s.data_mutex);
    s.changed.wait_for(lock, timeout, [&] {
        return s.doc.frames.size() > frame_cursor || s.doc.activities.size() > activity_cursor;
    });
    LiveChunk c;
    const auto& f = s.doc.frames;
    const auto& a = s.doc.activities;
    if (frame_cursor < f.size())
        c.frames.assign(f.begin() + static_cast<std::ptrdiff_t>(frame_cursor), f.end());
    if (activity_cursor < a.size())
        c.activities.assign(a.begin() + static_cast<std::ptrdiff_t>(activity_cursor), a.end());
    c.frame_cursor = std::max(frame_cursor, f.size());
    c.activity_cursor = std::max(activity_cursor, a.size());
    return c;
}

void SessionStore::notify_all() const
{
    std::shared_lock lock(mutex_);
    for (const auto& [id, s] : sessions_)
        s->changed.notify_all();
}

} // namespace resmo
