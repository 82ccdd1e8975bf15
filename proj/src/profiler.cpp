#include "resmo/profiler.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include "resmo/network.hpp"
#include "resmo/trainer.hpp"

namespace resmo {

namespace {

using Clock = std::chrono::steady_clock;

double kb_to_mb(long kb) { return static_cast<double>(kb) * 1024.0 / 1e6; }

void reset_high_water_mark()
{
    std::ofstream out("/proc/self/clear_refs");
    if (out)
        out << "5";
}

std::string cpu_model()
{
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line))
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos)
                return line.substr(line.find_first_not_of(' ', colon + 1));
        }
    return "unknown cpu";
}

} // namespace

RteMeasurement measure_rte(const Runner& runner, int runs, std::chrono::duration<double> duration)
{
    if (!runner)
        throw ArgumentError("measure_rte: no runner");
    if (runs < 1)
        throw ArgumentError("measure_rte: runs must be >= 1, got " + std::to_string(runs));
    if (duration.count() <= 0)
        throw ArgumentError("measure_rte: duration must be positive");

    RteMeasurement m;
    m.run_duration_seconds = duration.count();
    double grand_total = 0.0;
    for (int r = 0; r < runs; ++r) {
        RunStats s;
        const auto start = Clock::now();
        const auto deadline = start + std::chrono::duration_cast<Clock::duration>(duration);
        for (;;) {
            const auto t0 = Clock::now();
            if (t0 >= deadline)
                break;
            runner();
            const auto t1 = Clock::now();
            s.total_seconds += std::chrono::duration<double>(t1 - t0).count();
            ++s.samples;
        }
        if (s.samples == 0)
            throw MeasurementError("run " + std::to_string(r + 1) + " completed no recognition");
        s.mean_seconds = s.total_seconds / static_cast<double>(s.samples);
        grand_total += s.total_seconds;
        m.rte_samples += s.samples;
        m.runs.push_back(s);
    }
    m.rte_seconds = grand_total / static_cast<double>(m.rte_samples);
    return m;
}

std::optional<MemoryReading> read_memory()
{
    std::ifstream in("/proc/self/status");
    if (!in)
        return std::nullopt;
    long rss = -1, hwm = -1;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("VmRSS:", 0) == 0)
            rss = std::stol(line.substr(6));
        else if (line.rfind("VmHWM:", 0) == 0)
            hwm = std::stol(line.substr(6));
    }
    if (rss < 0 || hwm < 0)
        return std::nullopt;
    return MemoryReading{kb_to_mb(rss), kb_to_mb(hwm)};
}

MmuMeasurement measure_mmu(const std::function<void()>& work, std::chrono::duration<double> period)
{
    if (period.count() <= 0)
        throw ArgumentError("measure_mmu: sampling period must be positive");
    MmuMeasurement m;
    const auto base = read_memory();
    if (!base) {
        work();
        return m;
    }
    m.supported = true;
    m.baseline_mb = base->rss_mb;
    reset_high_water_mark();
    const auto after_reset = read_memory();
    const bool hwm_reset = after_reset && after_reset->hwm_mb <= after_reset->rss_mb;

    std::atomic<bool> done{false};
    double sampled_peak = base->rss_mb;
    Index readings = 1;
    std::thread sampler([&] {
        const auto step = std::chrono::duration_cast<Clock::duration>(period);
        while (!done.load(std::memory_order_acquire)) {
            if (const auto r = read_memory()) {
                sampled_peak = std::max(sampled_peak, r->rss_mb);
                ++readings;
            }
            std::this_thread::sleep_for(step);
        }
    });
    try {
        work();
    } catch (...) {
        done = true;
        sampler.join();
        throw;
    }
    done.store(true, std::memory_order_release);
    sampler.join();

    m.peak_mb = sampled_peak;
    m.readings = readings;
    if (const auto end = read_memory()) {
        m.peak_mb = std::max(m.peak_mb, end->rss_mb);
        if (hwm_reset)
            m.peak_mb = std::max(m.peak_mb, end->hwm_mb);
        ++m.readings;
    }
    return m;
}

ProfileReport profile(const Runner& runner, const ProfileConfig& cfg)
{
    ProfileReport rep;
    rep.environment = environment_note();
    rep.mmu = measure_mmu([&] { rep.rte = measure_rte(runner, cfg.runs, cfg.duration); }, cfg.sample_period);
    return rep;
}

std::string environment_note()
{
    std::ostringstream os;
    utsname u{};
    if (uname(&u) == 0)
        os << u.sysname << ' ' << u.release << ' ' << u.machine;
    else
        os << "unknown os";
    os << "; " << cpu_model() << "; " << std::thread::hardware_concurrency() << " hw threads";
#if defined(__clang__)
    os << "; clang " << __clang_major__ << '.' << __clang_minor__;
#elif defined(__GNUC__)
    os << "; gcc " << __GNUC__ << '.' << __GNUC_MINOR__;
#endif
#ifdef NDEBUG
    os << " release";
#else
    os << " debug";
#endif
    const double tick = static_cast<double>(Clock::period::num) / static_cast<double>(Clock::period::den);
    char buf[64];
    std::snprintf(buf, sizeof buf, "; steady_clock tick %.0e s", tick);
    os << buf;
    return os.str();
}

std::string ProfileReport::format() const
{
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "runs: %zu x %.3f s\n", rte.runs.size(), rte.run_duration_seconds);
    os << buf;
    for (std::size_t i = 0; i < rte.runs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "run %zu: mean %.6f s, %lld samples\n", i + 1, rte.runs[i].mean_seconds,
                      static_cast<long long>(rte.runs[i].samples));
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "rte: %.6f s over %lld samples\n", rte.rte_seconds,
                  static_cast<long long>(rte.rte_samples));
    os << buf;
    if (mmu.supported) {
        std::snprintf(buf, sizeof buf, "mmu: %.2f MB peak (baseline %.2f MB, %lld readings)\n", mmu.peak_mb,
                      mmu.baseline_mb, static_cast<long long>(mmu.readings));
        os << buf;
    } else {
        os << "mmu: unsupported on this platform\n";
    }
    os << "environment: " << environment << '\n';
    return os.str();
}

Runner make_model_runner(const ModelGraph& g, const WeightStore& w, std::vector<Image> frames, Index* last_prediction)
{
    if (frames.empty())
        throw ArgumentError("make_model_runner: no frames");
    validate_weights(g, w);
    const auto in = g.input_shape();
    if (in[0] != in[1] || in[2] != 3)
        throw DimensionError("make_model_runner: model input must be square RGB");
    struct State
    {
        ModelGraph g;
        WeightStore w;
        std::vector<Image> frames;
        std::size_t next = 0;
    };
    auto st = std::make_shared<State>(State{g, w, std::move(frames), 0});
    const Index side = in[0];
    return [st, side, last_prediction] {
        const Image& src = st->frames[st->next];
        st->next = (st->next + 1) % st->frames.size();
        const Tensor probs = forward_model(st->g, st->w, to_tensor(resize_bilinear(src, side)));
        const Index k = argmax(probs.data(), probs.size());
        if (last_prediction)
            *last_prediction = k;
    };
}

} // namespace resmo
