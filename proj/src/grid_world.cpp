#include "lqgrid/grid_world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace lqgrid {

Seconds sample_task_duration(Seconds t0, double speed_factor, RandomStream& rng) {
    if (!(t0 > 0.0)) throw std::invalid_argument("sample_task_duration: t0 must be positive");
    if (!(speed_factor > 0.0)) throw std::invalid_argument("sample_task_duration: speed_factor must be positive");
    double u = rng.gamma(kExcessShape, kExcessRate);
    // A zero excess would put the sample on the support boundary.
    while (!(u > 0.0)) u = rng.gamma(kExcessShape, kExcessRate);
    return speed_factor * t0 * (1.0 + u);
}

double duration_log_likelihood(std::span<const Seconds> durations, Seconds t0) {
    if (!(t0 > 0.0)) return -std::numeric_limits<double>::infinity();
    double ll = 0.0;
    const double log_t0 = std::log(t0);
    for (Seconds t : durations) {
        const double u = t / t0 - 1.0;
        if (!(u > 0.0)) return -std::numeric_limits<double>::infinity();
        ll += -log_t0 + (kExcessShape - 1.0) * std::log(u) - kExcessRate * u;
    }
    return ll;
}

T0Fit fit_t0(std::span<const Seconds> durations) {
    if (durations.size() < kMinFitSamples) {
        std::ostringstream msg;
        msg << "fit_t0: need at least " << kMinFitSamples << " durations, got " << durations.size();
        throw FitError(msg.str());
    }
    double t_min = std::numeric_limits<double>::infinity();
    double t_sum = 0.0;
    for (Seconds t : durations) {
        if (!(t > 0.0) || !std::isfinite(t)) throw FitError("fit_t0: durations must be positive and finite");
        t_min = std::min(t_min, t);
        t_sum += t;
    }
    const double n = static_cast<double>(durations.size());

    // d(LL)/d(1/t0); strictly decreasing in 1/t0, positive as t0 -> min.
    auto score = [&](double t0) {
        const double s = 1.0 / t0;
        double acc = n / s - kExcessRate * t_sum;
        for (Seconds t : durations) acc += (kExcessShape - 1.0) * t / (t * s - 1.0);
        return acc;
    };

    const double tol = 1e-6 * t_min;
    double lo = 0.0;    // score < 0 side
    double hi = t_min;  // score > 0 side
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (score(mid) > 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    T0Fit fit;
    fit.t0 = 0.5 * (lo + hi);
    fit.at_boundary = (t_min - fit.t0) <= 2.0 * tol || fit.t0 <= 2.0 * tol;
    return fit;
}

DurationModel::DurationModel(std::map<double, T0Spec> t0_by_beta) : t0_by_beta_(std::move(t0_by_beta)) {
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& [beta, spec] : t0_by_beta_) {
        std::ostringstream where;
        where << "t0 for beta=" << beta;
        if (!(spec.t0 > 0.0)) throw std::invalid_argument(where.str() + " must be positive");
        if (spec.alt_weight < 0.0 || spec.alt_weight > 1.0)
            throw std::invalid_argument(where.str() + ": secondary weight must be in [0,1]");
        if (spec.alt_weight > 0.0 && !(spec.alt_t0 > 0.0))
            throw std::invalid_argument(where.str() + ": secondary t0 must be positive");
        if (spec.t0 > prev) throw std::invalid_argument(where.str() + " increases with beta");
        prev = spec.t0;
    }
}

const T0Spec& DurationModel::spec(double beta) const {
    auto it = t0_by_beta_.find(beta);
    if (it == t0_by_beta_.end()) {
        std::ostringstream msg;
        msg << "no t0 registered for beta=" << beta;
        throw std::out_of_range(msg.str());
    }
    return it->second;
}

Seconds DurationModel::sample(double beta, double speed_factor, RandomStream& rng) const {
    const T0Spec& s = spec(beta);
    Seconds t0 = s.t0;
    if (s.alt_weight > 0.0 && rng.uniform() < s.alt_weight) t0 = s.alt_t0;
    return sample_task_duration(t0, speed_factor, rng);
}

bool CeSpec::available_at(Seconds t) const {
    if (availability_windows.empty()) return true;
    return std::any_of(availability_windows.begin(), availability_windows.end(),
                       [t](const TimeWindow& w) { return w.contains(t); });
}

std::string_view to_string(WorkerState s) {
    switch (s) {
        case WorkerState::Submitted: return "submitted";
        case WorkerState::Queued: return "queued";
        case WorkerState::Running: return "running";
        case WorkerState::Invalid: return "invalid";
        case WorkerState::Cancelled: return "cancelled";
        case WorkerState::Exited: return "exited";
    }
    return "unknown";
}

std::string_view to_string(EndReason r) {
    switch (r) {
        case EndReason::WallTime: return "wall_time";
        case EndReason::CredentialExpiry: return "credential_expiry";
        case EndReason::CeUnavailable: return "ce_unavailable";
        case EndReason::InvalidExit: return "invalid_exit";
        case EndReason::IdleExit: return "idle_exit";
    }
    return "unknown";
}

bool is_valid_transition(WorkerState from, WorkerState to) {
    switch (from) {
        case WorkerState::Submitted: return to == WorkerState::Queued;
        case WorkerState::Queued:
            return to == WorkerState::Running || to == WorkerState::Invalid || to == WorkerState::Cancelled;
        case WorkerState::Running:
        case WorkerState::Invalid: return to == WorkerState::Cancelled || to == WorkerState::Exited;
        case WorkerState::Cancelled:
        case WorkerState::Exited: return false;
    }
    return false;
}

GridWorld::GridWorld(Engine& engine, std::vector<CeSpec> catalog, GridConfig config, RandomStream failures,
                     GridObserver& observer)
    : engine_(engine), catalog_(std::move(catalog)), config_(config), failures_(std::move(failures)),
      observer_(observer) {
    ces_.reserve(catalog_.size());
    for (const CeSpec& spec : catalog_) {
        if (spec.ce_id.empty()) throw std::invalid_argument("computing element with empty id");
        if (spec.slot_count <= 0) throw std::invalid_argument("ce " + spec.ce_id + ": slot_count must be positive");
        if (spec.queue_limit < 0) throw std::invalid_argument("ce " + spec.ce_id + ": queue_limit must be >= 0");
        if (!(spec.wall_time_limit > 0.0))
            throw std::invalid_argument("ce " + spec.ce_id + ": wall_time_limit must be positive");
        if (!(spec.speed_factor > 0.0))
            throw std::invalid_argument("ce " + spec.ce_id + ": speed_factor must be positive");
        if (spec.invalid_rate < 0.0 || spec.invalid_rate > 1.0)
            throw std::invalid_argument("ce " + spec.ce_id + ": invalid_rate must be in [0,1]");
        if (!index_.emplace(spec.ce_id, ces_.size()).second)
            throw std::invalid_argument("duplicate computing element id " + spec.ce_id);
        ces_.push_back(CeState{spec, 0, {}});
    }
    // Jobs on a CE die when its availability window closes.
    for (std::size_t i = 0; i < ces_.size(); ++i) {
        for (const TimeWindow& w : ces_[i].spec.availability_windows) {
            if (w.end < w.start) throw std::invalid_argument("ce " + ces_[i].spec.ce_id + ": window ends before start");
            engine_.schedule(w.end, EventKind::ScenarioInjection, [this, i] {
                CeState& c = ces_[i];
                if (!c.spec.available_at(engine_.now())) kill_on_ce(c, EndReason::CeUnavailable, engine_.now());
            });
            engine_.schedule(w.start, EventKind::ScenarioInjection, [this, i] { try_start(ces_[i], engine_.now()); });
        }
    }
}

GridWorld::CeState& GridWorld::ce(const std::string& ce_id) {
    auto it = index_.find(ce_id);
    if (it == index_.end()) throw UnknownCeError("unknown computing element '" + ce_id + "'");
    return ces_[it->second];
}

const GridWorld::CeState& GridWorld::ce(const std::string& ce_id) const {
    auto it = index_.find(ce_id);
    if (it == index_.end()) throw UnknownCeError("unknown computing element '" + ce_id + "'");
    return ces_[it->second];
}

double GridWorld::capacity_fraction() const { return low_fractions_.empty() ? 1.0 : *low_fractions_.begin(); }

int GridWorld::effective_slots(const CeState& c) const {
    if (low_fractions_.empty()) return c.spec.slot_count;
    return static_cast<int>(std::floor(c.spec.slot_count * capacity_fraction()));
}

int GridWorld::running(const std::string& ce_id) const { return ce(ce_id).running; }
int GridWorld::queued(const std::string& ce_id) const { return static_cast<int>(ce(ce_id).queue.size()); }
int GridWorld::effective_slots(const std::string& ce_id) const { return effective_slots(ce(ce_id)); }

void GridWorld::transition(WorkerAgent& w, WorkerState to) {
    if (!is_valid_transition(w.state, to)) {
        std::ostringstream msg;
        msg << "illegal worker transition " << to_string(w.state) << " -> " << to_string(to) << " for worker "
            << w.worker_id;
        throw std::logic_error(msg.str());
    }
    w.state = to;
}

SubmitResult GridWorld::submit_worker(const std::string& ce_id, Seconds now, bool from_factory) {
    CeState& c = ce(ce_id);
    SubmitResult result;
    if (credential_depth_ > 0) {
        result.reason = "credential_expired";
    } else if (!c.spec.available_at(now)) {
        result.reason = "ce_unavailable";
    } else if (c.running >= effective_slots(c) && static_cast<int>(c.queue.size()) >= c.spec.queue_limit) {
        result.reason = "queue_full";
    }
    if (!result.reason.empty()) {
        observer_.on_submit_failed(ce_id, result.reason, from_factory, now);
        return result;
    }

    WorkerAgent w;
    w.worker_id = static_cast<WorkerId>(workers_.size());
    w.ce_id = ce_id;
    w.submit_time = now;
    w.from_factory = from_factory;
    workers_.push_back(std::move(w));
    WorkerAgent& stored = workers_.back();
    transition(stored, WorkerState::Queued);
    c.queue.push_back(stored.worker_id);
    ++queued_total_;
    observer_.on_worker_queued(stored, now);

    result.outcome = SubmitOutcome::Queued;
    result.worker_id = stored.worker_id;
    try_start(c, now);
    return result;
}

void GridWorld::try_start(CeState& c, Seconds now) {
    if (credential_depth_ > 0 || !c.spec.available_at(now)) return;
    while (!c.queue.empty() && c.running < effective_slots(c)) {
        const WorkerId id = c.queue.front();
        c.queue.pop_front();
        --queued_total_;
        start_worker(c, id, now);
    }
}

void GridWorld::start_worker(CeState& c, WorkerId id, Seconds now) {
    WorkerAgent& w = worker(id);
    ++c.running;
    ++running_total_;
    w.start_time = now;
    if (failures_.bernoulli(c.spec.invalid_rate)) {
        transition(w, WorkerState::Invalid);
        observer_.on_worker_invalid(w, now);
        engine_.schedule(now + config_.invalid_lifetime, EventKind::WorkerEnd, [this, id] {
            if (worker(id).state == WorkerState::Invalid)
                end_worker(id, WorkerState::Exited, EndReason::InvalidExit, engine_.now());
        });
        return;
    }
    transition(w, WorkerState::Running);
    peak_running_ = std::max(peak_running_, running_total_);
    observer_.on_worker_started(w, now);
    engine_.schedule(now + c.spec.wall_time_limit, EventKind::WorkerEnd, [this, id] {
        if (worker(id).state == WorkerState::Running)
            end_worker(id, WorkerState::Cancelled, EndReason::WallTime, engine_.now());
    });
}

void GridWorld::end_worker(WorkerId id, WorkerState final_state, EndReason reason, Seconds now) {
    WorkerAgent& w = worker(id);
    if (!w.live()) return;
    CeState& c = ce(w.ce_id);
    const WorkerState previous = w.state;
    transition(w, final_state);
    w.end_time = now;
    if (previous == WorkerState::Queued) {
        auto it = std::find(c.queue.begin(), c.queue.end(), id);
        if (it != c.queue.end()) {
            c.queue.erase(it);
            --queued_total_;
        }
    } else {
        --c.running;
        --running_total_;
    }
    observer_.on_worker_ended(w, previous, reason, now);
    try_start(c, now);
}

void GridWorld::kill_on_ce(CeState& c, EndReason reason, Seconds now) {
    std::vector<WorkerId> victims(c.queue.begin(), c.queue.end());
    for (const WorkerAgent& w : workers_) {
        if (w.ce_id == c.spec.ce_id && (w.state == WorkerState::Running || w.state == WorkerState::Invalid))
            victims.push_back(w.worker_id);
    }
    std::sort(victims.begin(), victims.end());
    for (WorkerId id : victims) end_worker(id, WorkerState::Cancelled, reason, now);
}

void GridWorld::kill_all(EndReason reason, Seconds now) {
    std::vector<WorkerId> victims;
    for (const WorkerAgent& w : workers_)
        if (w.live()) victims.push_back(w.worker_id);
    for (WorkerId id : victims) {
        // Ending one worker may start a queued one on the same CE; re-check.
        if (worker(id).live()) end_worker(id, WorkerState::Cancelled, reason, now);
    }
}

void GridWorld::inject_scenario_event(const ScenarioEvent& event) {
    if (const auto* e = std::get_if<CredentialExpiry>(&event)) {
        const CredentialExpiry ev = *e;
        engine_.schedule(ev.start, EventKind::ScenarioInjection, [this, ev] {
            ++credential_depth_;
            std::ostringstream note;
            note << "credential_expiry_begin duration=" << std::llround(ev.duration);
            observer_.on_scenario_event(note.str(), engine_.now());
            kill_all(EndReason::CredentialExpiry, engine_.now());
        });
        engine_.schedule(ev.start + ev.duration, EventKind::ScenarioInjection, [this] {
            --credential_depth_;
            observer_.on_scenario_event("credential_expiry_end", engine_.now());
        });
    } else if (const auto* o = std::get_if<MasterOutage>(&event)) {
        if (!(o->duration > 0.0)) return;
        const MasterOutage ev = *o;
        engine_.schedule(ev.start, EventKind::ScenarioInjection, [this] {
            if (outage_depth_++ == 0) {
                observer_.on_scenario_event("master_outage_begin", engine_.now());
                observer_.on_master_outage(true, engine_.now());
            }
        });
        engine_.schedule(ev.start + ev.duration, EventKind::ScenarioInjection, [this] {
            if (--outage_depth_ == 0) {
                observer_.on_scenario_event("master_outage_end", engine_.now());
                observer_.on_master_outage(false, engine_.now());
            }
        });
    } else if (const auto* l = std::get_if<LowRegime>(&event)) {
        const LowRegime ev = *l;
        if (ev.capacity_fraction < 0.0 || ev.capacity_fraction > 1.0)
            throw std::invalid_argument("low_regime capacity_fraction must be in [0,1]");
        engine_.schedule(ev.start, EventKind::ScenarioInjection, [this, ev] {
            low_fractions_.insert(ev.capacity_fraction);
            std::ostringstream note;
            note << "low_regime_begin capacity_fraction=" << ev.capacity_fraction;
            observer_.on_scenario_event(note.str(), engine_.now());
        });
        engine_.schedule(ev.start + ev.duration, EventKind::ScenarioInjection, [this, ev] {
            low_fractions_.erase(low_fractions_.find(ev.capacity_fraction));
            observer_.on_scenario_event("low_regime_end", engine_.now());
            for (CeState& c : ces_) try_start(c, engine_.now());
        });
    }
}

}  // namespace lqgrid
