#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "resmo/graph.hpp"
#include "resmo/vision.hpp"
#include "resmo/weights.hpp"

namespace resmo {

/// One full recognition per call.
using Runner = std::function<void()>;

struct RunStats
{
    double mean_seconds = 0.0;
    Index samples = 0;
    double total_seconds = 0.0; ///< sum of sample latencies
};

struct RteMeasurement
{
    double rte_seconds = 0.0; ///< mean over every sample of every run
    Index rte_samples = 0;
    std::vector<RunStats> runs;
    double run_duration_seconds = 0.0;
};

/// Invokes `runner` repeatedly for `duration` in each of `runs` runs, timing
/// every call on the steady clock. Throws MeasurementError when a run
/// completes no call and ArgumentError on non-positive arguments.
RteMeasurement measure_rte(const Runner& runner, int runs = 5,
                           std::chrono::duration<double> duration = std::chrono::seconds(10));

struct MemoryReading
{
    double rss_mb = 0.0;
    double hwm_mb = 0.0;
};

/// Current VmRSS/VmHWM of this process in MB (10^6 bytes), or nullopt when
/// the platform does not expose them.
std::optional<MemoryReading> read_memory();

struct MmuMeasurement
{
    bool supported = false;
    double baseline_mb = 0.0;
    double peak_mb = 0.0; ///< peak resident set while the work ran
    Index readings = 0;

    double delta_mb() const { return peak_mb - baseline_mb; }
};

/// Runs `work` on the calling thread while a second thread samples the
/// resident set every `period`. The kernel high-water mark is reset first
/// when the platform allows it and folded into the peak.
MmuMeasurement measure_mmu(const std::function<void()>& work,
                           std::chrono::duration<double> period = std::chrono::milliseconds(1));

struct ProfileReport
{
    RteMeasurement rte;
    MmuMeasurement mmu;
    std::string environment;

    /// Human-readable block: run count, duration, per-run means and samples.
    std::string format() const;
};

struct ProfileConfig
{
    int runs = 5;
    std::chrono::duration<double> duration = std::chrono::seconds(10);
    std::chrono::duration<double> sample_period = std::chrono::milliseconds(1);
};

/// RTE and MMU over the same runs.
ProfileReport profile(const Runner& runner, const ProfileConfig& cfg = {});

/// Host, CPU, build and timer resolution in one line.
std::string environment_note();

/// Runner performing preprocessing (resize to the model input), a forward
/// pass and argmax, cycling through `frames`. The predicted classes are
/// written to `last_prediction` when given.
Runner make_model_runner(const ModelGraph& g, const WeightStore& w, std::vector<Image> frames,
                         Index* last_prediction = nullptr);

} // namespace resmo
