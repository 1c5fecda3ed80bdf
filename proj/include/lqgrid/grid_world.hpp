#pragma once

// Simulated grid fabric: computing elements with FIFO batch queues and
// wall-time limits, the pilot-job lifecycle, the task-duration model, and
// scenario failure injection.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lqgrid/sim_core.hpp"

namespace lqgrid {

// ---------------------------------------------------------------------------
// Task duration model
// ---------------------------------------------------------------------------

/// Shape and rate of the excess-time variable u = t/t0 - 1, whose density is
/// proportional to u^(3/2) exp(-3u).
constexpr double kExcessShape = 2.5;
constexpr double kExcessRate = 3.0;
/// E[t]/t0 = 1 + shape/rate = 11/6.
constexpr double kMeanDurationRatio = 1.0 + kExcessShape / kExcessRate;

/// Draws t = speed_factor * t0 * (1 + u), u ~ Gamma(5/2, rate 3).
Seconds sample_task_duration(Seconds t0, double speed_factor, RandomStream& rng);

/// Log-likelihood of the shifted-Gamma duration model at a given t0, up to
/// the t0-independent normalisation constant. -inf when t0 >= min(durations).
double duration_log_likelihood(std::span<const Seconds> durations, Seconds t0);

struct T0Fit {
    Seconds t0 = 0.0;
    /// Set when the maximiser sits within tolerance of either end of (0, min).
    bool at_boundary = false;
};

class FitError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

constexpr std::size_t kMinFitSamples = 30;

/// Maximum-likelihood t0 over (0, min(durations)); bisection on the score,
/// which is monotone because the log-likelihood is concave in 1/t0.
T0Fit fit_t0(std::span<const Seconds> durations);

struct T0Spec {
    Seconds t0 = 0.0;
    /// Optional second component (e.g. the short-time peak seen at low beta).
    Seconds alt_t0 = 0.0;
    double alt_weight = 0.0;

    Seconds mean_t0() const { return (1.0 - alt_weight) * t0 + alt_weight * alt_t0; }
};

class DurationModel {
public:
    DurationModel() = default;
    /// Throws std::invalid_argument unless every t0 is positive and the
    /// primary t0 is non-increasing in beta.
    explicit DurationModel(std::map<double, T0Spec> t0_by_beta);

    const T0Spec& spec(double beta) const;
    Seconds expected_duration(double beta) const { return kMeanDurationRatio * spec(beta).mean_t0(); }
    Seconds sample(double beta, double speed_factor, RandomStream& rng) const;
    const std::map<double, T0Spec>& table() const { return t0_by_beta_; }

private:
    std::map<double, T0Spec> t0_by_beta_;
};

// ---------------------------------------------------------------------------
// Computing elements and workers
// ---------------------------------------------------------------------------

struct TimeWindow {
    Seconds start = 0.0;
    Seconds end = 0.0;
    bool contains(Seconds t) const { return t >= start && t < end; }
};

struct CeSpec {
    std::string ce_id;
    int slot_count = 1;
    int queue_limit = 0;
    Seconds wall_time_limit = kDay;
    double speed_factor = 1.0;
    double invalid_rate = 0.0;
    /// Empty means always available.
    std::vector<TimeWindow> availability_windows;

    bool available_at(Seconds t) const;
};

enum class WorkerState { Submitted, Queued, Running, Invalid, Cancelled, Exited };

std::string_view to_string(WorkerState s);

/// Legal lifecycle edge: submitted -> queued -> {running, invalid} ->
/// {cancelled, exited}; queued workers may also be cancelled.
bool is_valid_transition(WorkerState from, WorkerState to);

using WorkerId = std::int64_t;

struct WorkerAgent {
    WorkerId worker_id = 0;
    std::string ce_id;
    WorkerState state = WorkerState::Submitted;
    Seconds submit_time = 0.0;
    Seconds start_time = 0.0;
    Seconds end_time = 0.0;
    std::optional<std::int64_t> cached_snapshot;
    int results_uploaded = 0;
    bool from_factory = false;

    bool live() const {
        return state == WorkerState::Queued || state == WorkerState::Running || state == WorkerState::Invalid;
    }
};

enum class SubmitOutcome { Queued, Rejected };

struct SubmitResult {
    SubmitOutcome outcome = SubmitOutcome::Rejected;
    std::optional<WorkerId> worker_id;
    std::string reason;
};

enum class EndReason { WallTime, CredentialExpiry, CeUnavailable, InvalidExit, IdleExit };

std::string_view to_string(EndReason r);

// ---------------------------------------------------------------------------
// Scenario events
// ---------------------------------------------------------------------------

struct CredentialExpiry {
    Seconds start = 0.0;
    Seconds duration = 0.0;
};
struct MasterOutage {
    Seconds start = 0.0;
    Seconds duration = 0.0;
};
struct LowRegime {
    Seconds start = 0.0;
    Seconds duration = 0.0;
    double capacity_fraction = 1.0;
};
using ScenarioEvent = std::variant<CredentialExpiry, MasterOutage, LowRegime>;

/// Receives every lifecycle transition. Callbacks run inside engine events.
class GridObserver {
public:
    virtual ~GridObserver() = default;
    virtual void on_worker_queued(const WorkerAgent& w, Seconds now) = 0;
    virtual void on_submit_failed(const std::string& ce_id, const std::string& reason, bool from_factory,
                                  Seconds now) = 0;
    virtual void on_worker_started(WorkerAgent& w, Seconds now) = 0;
    virtual void on_worker_invalid(const WorkerAgent& w, Seconds now) = 0;
    /// Called after the worker reached a terminal state and freed its slot.
    virtual void on_worker_ended(const WorkerAgent& w, WorkerState previous, EndReason reason,
                                 Seconds now) = 0;
    virtual void on_master_outage(bool begins, Seconds now) = 0;
    virtual void on_scenario_event(const std::string& note, Seconds now) = 0;
};

struct GridConfig {
    /// How long an invalid worker occupies its slot before the job exits.
    Seconds invalid_lifetime = 10.0 * kMinute;
};

class UnknownCeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class GridWorld {
public:
    GridWorld(Engine& engine, std::vector<CeSpec> catalog, GridConfig config, RandomStream failures,
              GridObserver& observer);
    GridWorld(const GridWorld&) = delete;
    GridWorld& operator=(const GridWorld&) = delete;

    SubmitResult submit_worker(const std::string& ce_id, Seconds now, bool from_factory = false);

    /// Schedules the start/end transitions of a scenario event on the engine.
    void inject_scenario_event(const ScenarioEvent& event);

    /// Terminates a live worker (running, invalid or still queued).
    void end_worker(WorkerId id, WorkerState final_state, EndReason reason, Seconds now);

    const WorkerAgent& worker(WorkerId id) const { return workers_.at(static_cast<std::size_t>(id)); }
    WorkerAgent& worker(WorkerId id) { return workers_.at(static_cast<std::size_t>(id)); }
    const std::deque<WorkerAgent>& workers() const { return workers_; }

    const std::vector<CeSpec>& catalog() const { return catalog_; }
    bool has_ce(const std::string& ce_id) const { return index_.count(ce_id) != 0; }

    int running(const std::string& ce_id) const;
    int queued(const std::string& ce_id) const;
    int effective_slots(const std::string& ce_id) const;
    int running_total() const { return running_total_; }
    int queued_total() const { return queued_total_; }
    int peak_running() const { return peak_running_; }
    bool credentials_expired() const { return credential_depth_ > 0; }
    double capacity_fraction() const;

private:
    struct CeState {
        CeSpec spec;
        int running = 0;
        std::deque<WorkerId> queue;
    };

    CeState& ce(const std::string& ce_id);
    const CeState& ce(const std::string& ce_id) const;
    int effective_slots(const CeState& c) const;
    void try_start(CeState& c, Seconds now);
    void start_worker(CeState& c, WorkerId id, Seconds now);
    void kill_all(EndReason reason, Seconds now);
    void kill_on_ce(CeState& c, EndReason reason, Seconds now);
    void transition(WorkerAgent& w, WorkerState to);

    Engine& engine_;
    std::vector<CeSpec> catalog_;
    GridConfig config_;
    RandomStream failures_;
    GridObserver& observer_;
    std::vector<CeState> ces_;
    std::map<std::string, std::size_t> index_;
    std::deque<WorkerAgent> workers_;
    int running_total_ = 0;
    int queued_total_ = 0;
    int peak_running_ = 0;
    int credential_depth_ = 0;
    int outage_depth_ = 0;
    std::multiset<double> low_fractions_;
};

}  // namespace lqgrid
