#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "resmo/efs.hpp"

namespace resmo {

struct SessionInfo
{
    std::string session_id;
    std::string patient_id;
    std::int64_t t0_ms = 0;
    std::size_t frames = 0;
    std::size_t activities = 0;
};

/// New lines of a session past a reader's cursor.
struct LiveChunk
{
    std::vector<EmotionFrame> frames;
    std::vector<ActivityNote> activities;
    std::size_t frame_cursor = 0;
    std::size_t activity_cursor = 0;
};

/// Patients and sessions persisted as append-only EFS/1 text under one
/// directory:
///   patients.efs        one P-line per patient
///   sessions/<id>.efs   header, P-line, then F and A lines as they arrive
/// Every write is fsynced before the call returns. On open, a trailing
/// partial line left by a crash is cut off.
class SessionStore
{
public:
    explicit SessionStore(std::filesystem::path dir);
    ~SessionStore();
    SessionStore(const SessionStore&) = delete;
    SessionStore& operator=(const SessionStore&) = delete;

    const std::filesystem::path& directory() const noexcept { return dir_; }

    /// Throws ConflictError on a duplicate id and ValidationError on a bad card.
    void create_patient(const PatientCard& card);
    std::vector<PatientCard> patients() const;
    /// Throws NotFoundError.
    PatientCard patient(const std::string& id) const;

    /// Opens a session for a known patient. The id is generated.
    SessionInfo open_session(const std::string& patient_id, std::int64_t t0_ms);
    std::vector<SessionInfo> sessions() const;
    SessionInfo session(const std::string& session_id) const;

    /// Appends a time-ordered batch; returns the stored frame count. Throws
    /// ValidationError naming the first offending index when the batch is
    /// out of order or starts before the last stored frame.
    std::size_t ingest_frames(const std::string& session_id, const std::vector<EmotionFrame>& batch);
    std::size_t register_activity(const std::string& session_id, const ActivityNote& note);

    /// Whole record without a range in the header.
    EfsDocument record(const std::string& session_id) const;
    std::string export_session(const std::string& session_id, std::optional<TimeRange> range = std::nullopt) const;

    /// Entries past the cursors, waiting up to `timeout` when there are none.
    LiveChunk wait_for_updates(const std::string& session_id, std::size_t frame_cursor, std::size_t activity_cursor,
                               std::chrono::milliseconds timeout) const;
    /// Wakes every waiter (used at shutdown).
    void notify_all() const;

private:
    struct Session;

    Session& find(const std::string& session_id) const;
    void load();
    void load_session(const std::filesystem::path& file);

    std::filesystem::path dir_;
    int patients_fd_ = -1;
    mutable std::shared_mutex mutex_;
    std::mutex create_mutex_;
    std::map<std::string, PatientCard> patients_;
    std::map<std::string, std::unique_ptr<Session>> sessions_;
    std::uint64_t next_session_ = 1;
};

/// Returns the length of `text` up to and including its last LF.
std::size_t complete_prefix(std::string_view text);

} // namespace resmo
