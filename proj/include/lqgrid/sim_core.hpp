#pragma once

// Deterministic discrete-event engine: virtual clock, ordered event queue and
// label-derived random streams.

#include <cstdint>
#include <functional>
#include <random>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lqgrid {

/// Virtual time in seconds.
using Seconds = double;

constexpr Seconds kMinute = 60.0;
constexpr Seconds kHour = 3600.0;
constexpr Seconds kDay = 86400.0;
constexpr Seconds kWeek = 7.0 * kDay;
constexpr Seconds kYear = 365.25 * kDay;

enum class EventKind {
    Tick,
    WorkerStart,
    WorkerEnd,
    TaskCompletion,
    ScenarioInjection,
    FactoryTick,
    SamplingTick,
};

std::string_view to_string(EventKind kind);

using EventHandle = std::uint64_t;

struct SimEvent {
    Seconds fire_time = 0.0;
    EventHandle sequence_no = 0;
    EventKind kind = EventKind::Tick;
    std::function<void()> action;
};

struct RunStats {
    std::uint64_t events_fired = 0;
    Seconds final_clock = 0.0;
};

class SchedulingError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Single-threaded event loop. Events fire in (fire_time, sequence_no) order;
/// sequence numbers are handed out in scheduling order, so simultaneous events
/// are delivered first-scheduled-first.
class Engine {
public:
    Engine() = default;
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    EventHandle schedule(Seconds fire_time, EventKind kind, std::function<void()> action);
    EventHandle schedule(Seconds fire_time, std::function<void()> action) {
        return schedule(fire_time, EventKind::Tick, std::move(action));
    }
    EventHandle schedule_after(Seconds delay, EventKind kind, std::function<void()> action) {
        return schedule(clock_ + delay, kind, std::move(action));
    }

    /// Delivers every event with fire_time <= t_end. The clock ends at t_end
    /// while events remain queued, otherwise at the last delivered event.
    RunStats run_until(Seconds t_end);

    Seconds now() const { return clock_; }
    std::size_t pending() const { return queue_.size(); }
    std::uint64_t events_fired() const { return fired_; }

private:
    struct Later {
        bool operator()(const SimEvent& a, const SimEvent& b) const {
            if (a.fire_time != b.fire_time) return a.fire_time > b.fire_time;
            return a.sequence_no > b.sequence_no;
        }
    };

    std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
    Seconds clock_ = 0.0;
    EventHandle next_seq_ = 0;
    std::uint64_t fired_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

/// Reproducible generator keyed by (root_seed, label). The bit source is
/// std::mt19937_64 (fully specified by the standard); variates are produced
/// here rather than by <random> distributions, whose algorithms are
/// implementation-defined.
class RandomStream {
public:
    RandomStream(std::uint64_t root_seed, std::string_view label);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform in (0, 1].
    double uniform_pos() { return 1.0 - uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    /// Gamma(shape, rate) by Marsaglia-Tsang.
    double gamma(double shape, double rate);
    double lognormal(double median, double sigma);
    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t root_seed() const { return root_seed_; }
    const std::string& label() const { return label_; }

private:
    std::uint64_t root_seed_;
    std::string label_;
    std::mt19937_64 bits_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lqgrid
