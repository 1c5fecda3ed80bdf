#include "lqgrid/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>

#include "lqgrid/agent_factory.hpp"
#include "lqgrid/grid_world.hpp"
#include "lqgrid/master.hpp"

namespace lqgrid {

namespace {

std::int64_t whole_seconds(Seconds t) { return std::llround(t); }

std::map<double, int> replica_counts(const Scenario& sc) {
    std::map<double, int> out;
    for (const BetaSpec& b : sc.betas) out[b.beta] = b.replicas;
    return out;
}

std::vector<double> beta_order(const Scenario& sc) {
    std::vector<double> out;
    for (const BetaSpec& b : sc.betas) out.push_back(b.beta);
    return out;
}

std::map<double, T0Spec> t0_table(const Scenario& sc) {
    std::map<double, T0Spec> out;
    for (const BetaSpec& b : sc.betas) out[b.beta] = b.t0;
    return out;
}

std::vector<std::string> catalog_ids(const Scenario& sc) {
    std::vector<std::string> out;
    for (const CeSpec& c : sc.catalog) out.push_back(c.ce_id);
    return out;
}

}  // namespace

struct Simulation::Impl final : GridObserver {
    struct Runtime {
        std::optional<Task> task;
        Seconds task_duration = 0.0;
        std::uint64_t token = 0;
        bool idle = false;
    };

    const Scenario sc;
    JournalWriter journal;
    Engine engine;
    DurationModel durations;
    Master master;
    std::optional<AgentFactory> factory;
    std::optional<GridWorld> world;
    RandomStream duration_rng;
    RandomStream manual_rng;
    std::map<std::string, double> speed_of;

    std::vector<Runtime> rt;
    std::set<WorkerId> idle;
    std::vector<WorkerId> deferred_uploads;
    bool outage = false;
    Seconds outage_start = 0.0;
    bool ran = false;

    RunSummary summary;
    double cpu_seconds = 0.0;

    Impl(const Scenario& scenario, std::ostream& out)
        : sc(scenario),
          journal(out),
          durations(t0_table(scenario)),
          master(register_snapshots(beta_order(scenario), replica_counts(scenario),
                                    RandomStream(scenario.root_seed, "registry").next_u64()),
                 scenario.policy,
                 MasterConfig{scenario.granularity, scenario.lease_timeout_factor, scenario.snapshot_size_bytes},
                 [this](double beta) { return durations.expected_duration(beta); }),
          duration_rng(scenario.root_seed, "durations"),
          manual_rng(scenario.root_seed, "manual") {
        for (const CeSpec& c : sc.catalog) speed_of[c.ce_id] = c.speed_factor;
        world.emplace(engine, sc.catalog, GridConfig{sc.invalid_lifetime}, RandomStream(sc.root_seed, "failures"),
                      *this);
        if (sc.factory) factory.emplace(*sc.factory, catalog_ids(sc), RandomStream(sc.root_seed, "factory"));
        summary.name = sc.name;
        summary.seed = sc.root_seed;
        summary.horizon_hours = sc.horizon / kHour;
        summary.replicas = static_cast<std::int64_t>(master.registry().size());
    }

    Runtime& runtime(WorkerId id) {
        if (static_cast<std::size_t>(id) >= rt.size()) rt.resize(static_cast<std::size_t>(id) + 1);
        return rt[static_cast<std::size_t>(id)];
    }

    void emit(JournalKind kind, Seconds now, std::optional<WorkerId> worker, std::optional<std::string> ce,
              std::optional<std::string> note = std::nullopt) {
        JournalEvent ev;
        ev.time = whole_seconds(now);
        ev.kind = kind;
        ev.worker_id = worker;
        ev.ce_id = std::move(ce);
        ev.note = std::move(note);
        journal.append(ev);
    }

    void emit_task(JournalKind kind, Seconds now, const WorkerAgent& w, const Task& t,
                   std::optional<std::int64_t> maturity_after, std::optional<std::int64_t> duration,
                   std::optional<std::string> note = std::nullopt) {
        JournalEvent ev;
        ev.time = whole_seconds(now);
        ev.kind = kind;
        ev.worker_id = w.worker_id;
        ev.ce_id = w.ce_id;
        ev.snapshot_id = t.snapshot_id;
        ev.beta = t.beta;
        ev.maturity_after = maturity_after;
        ev.duration = duration;
        ev.note = std::move(note);
        journal.append(ev);
    }

    // --- GridObserver -------------------------------------------------------

    void on_worker_queued(const WorkerAgent& w, Seconds now) override {
        ++summary.workers_submitted;
        runtime(w.worker_id);
        emit(JournalKind::WorkerSubmitted, now, w.worker_id, w.ce_id, w.from_factory ? "factory" : "manual");
        emit(JournalKind::WorkerQueued, now, w.worker_id, w.ce_id);
        if (w.from_factory && factory) factory->record_outcome(w.ce_id, JobOutcome::Queued, now);
    }

    void on_submit_failed(const std::string& ce_id, const std::string& reason, bool from_factory,
                          Seconds now) override {
        ++summary.submit_failures;
        emit(JournalKind::SubmitFailed, now, std::nullopt, ce_id, reason);
        if (from_factory && factory) factory->record_outcome(ce_id, JobOutcome::SubmitFail, now);
    }

    void on_worker_started(WorkerAgent& w, Seconds now) override {
        ++summary.workers_started;
        emit(JournalKind::WorkerStarted, now, w.worker_id, w.ce_id);
        if (w.from_factory && factory) factory->record_outcome(w.ce_id, JobOutcome::Started, now);
        request_task(w.worker_id, now);
    }

    void on_worker_invalid(const WorkerAgent& w, Seconds now) override {
        ++summary.invalid_workers;
        emit(JournalKind::WorkerInvalid, now, w.worker_id, w.ce_id);
        if (w.from_factory && factory) factory->record_outcome(w.ce_id, JobOutcome::Invalid, now);
    }

    void on_worker_ended(const WorkerAgent& w, WorkerState previous, EndReason reason, Seconds now) override {
        Runtime& r = runtime(w.worker_id);
        r.task.reset();  // in-flight iterations are lost; the lease runs out on its own
        r.idle = false;
        ++r.token;
        idle.erase(w.worker_id);
        if (previous == WorkerState::Running) cpu_seconds += now - w.start_time;
        const JournalKind kind =
            w.state == WorkerState::Exited ? JournalKind::WorkerExited : JournalKind::WorkerCancelled;
        emit(kind, now, w.worker_id, w.ce_id, std::string(to_string(reason)));

        if (!w.from_factory || !factory) return;
        switch (previous) {
            case WorkerState::Queued: factory->record_outcome(w.ce_id, JobOutcome::CancelledQueued, now); break;
            case WorkerState::Running: {
                bool clean = reason == EndReason::IdleExit ||
                             (reason == EndReason::WallTime && w.results_uploaded > 0);
                factory->record_outcome(w.ce_id, clean ? JobOutcome::CleanFinish : JobOutcome::Cancelled, now);
                break;
            }
            default: break;  // invalid jobs were booked as terminal when they started
        }
    }

    void on_master_outage(bool begins, Seconds now) override {
        if (begins) {
            outage = true;
            outage_start = now;
            return;
        }
        outage = false;
        master.extend_leases(now - outage_start);
        std::vector<WorkerId> pending;
        pending.swap(deferred_uploads);
        for (WorkerId id : pending)
            if (world->worker(id).state == WorkerState::Running && runtime(id).task) upload(id, now);
        serve_idle(now);
    }

    void on_scenario_event(const std::string& note, Seconds now) override {
        emit(JournalKind::ScenarioEvent, now, std::nullopt, std::nullopt, note);
    }

    // --- task flow ----------------------------------------------------------

    void go_idle(WorkerId id, Seconds now) {
        Runtime& r = runtime(id);
        r.idle = true;
        const std::uint64_t token = ++r.token;
        idle.insert(id);
        engine.schedule(now + sc.idle_timeout, EventKind::WorkerEnd, [this, id, token] {
            Runtime& rr = runtime(id);
            if (rr.idle && rr.token == token && world->worker(id).state == WorkerState::Running)
                world->end_worker(id, WorkerState::Exited, EndReason::IdleExit, engine.now());
        });
    }

    void request_task(WorkerId id, Seconds now) {
        const WorkerAgent& w = world->worker(id);
        if (w.state != WorkerState::Running) return;
        if (outage) {
            go_idle(id, now);
            return;
        }
        std::optional<Task> task = master.assign_task(id, w.cached_snapshot, now);
        if (!task) {
            go_idle(id, now);
            return;
        }
        start_task(id, *task, now);
    }

    void start_task(WorkerId id, const Task& task, Seconds now) {
        const WorkerAgent& w = world->worker(id);
        Runtime& r = runtime(id);
        r.idle = false;
        idle.erase(id);
        const std::uint64_t token = ++r.token;
        const Seconds d = std::max<Seconds>(1.0, std::round(durations.sample(task.beta, speed_of.at(w.ce_id), duration_rng)));
        r.task = task;
        r.task_duration = d;
        if (!task.cache_hit) {
            ++summary.downloads;
            summary.transfer_bytes += sc.snapshot_size_bytes;
        }
        emit_task(JournalKind::TaskAssigned, now, w, task, std::nullopt, std::nullopt,
                  task.cache_hit ? "cache_hit" : "download");
        engine.schedule(now + d, EventKind::TaskCompletion, [this, id, token] { task_finished(id, token); });
    }

    void task_finished(WorkerId id, std::uint64_t token) {
        Runtime& r = runtime(id);
        if (r.token != token || !r.task || world->worker(id).state != WorkerState::Running) return;
        if (outage) {
            deferred_uploads.push_back(id);
            return;
        }
        upload(id, engine.now());
    }

    void upload(WorkerId id, Seconds now) {
        Runtime& r = runtime(id);
        WorkerAgent& w = world->worker(id);
        const Task task = *r.task;
        r.task.reset();
        const UploadResult res = master.complete_task(task, now);
        const auto d = whole_seconds(r.task_duration);
        if (res.status == UploadStatus::Accepted) {
            ++summary.uploads;
            summary.transfer_bytes += sc.snapshot_size_bytes;
            w.cached_snapshot = task.snapshot_id;
            ++w.results_uploaded;
            emit_task(JournalKind::TaskUploaded, now, w, task, res.maturity_after, d);
        } else {
            ++summary.stale_uploads;
            emit_task(JournalKind::StaleUpload, now, w, task, res.maturity_after, d);
        }
        request_task(id, now);
    }

    void serve_idle(Seconds now) {
        while (!idle.empty() && master.unleased_count() > 0) {
            const WorkerId id = *idle.begin();
            idle.erase(idle.begin());
            runtime(id).idle = false;
            request_task(id, now);
        }
    }

    // --- periodic drivers ---------------------------------------------------

    void reclaim_tick() {
        const Seconds now = engine.now();
        if (!outage) {
            master.reclaim_expired_leases(now);
            serve_idle(now);
        }
        if (now + sc.reclaim_interval <= sc.horizon)
            engine.schedule(now + sc.reclaim_interval, EventKind::Tick, [this] { reclaim_tick(); });
    }

    void factory_tick() {
        const Seconds now = engine.now();
        const int pool = world->running_total() + world->queued_total();
        factory->maintain_pool(now, pool, [this, now](const std::string& ce_id) {
            world->submit_worker(ce_id, now, true);
        });
        const Seconds next = now + factory->config().tick_interval;
        if (next <= sc.horizon) engine.schedule(next, EventKind::FactoryTick, [this] { factory_tick(); });
    }

    void manual_batch(int count) {
        const Seconds now = engine.now();
        for (int i = 0; i < count; ++i) {
            const std::string& ce_id = sc.catalog[manual_rng.below(sc.catalog.size())].ce_id;
            ++summary.manual_submissions;
            world->submit_worker(ce_id, now, false);
        }
    }

    RunSummary run() {
        if (ran) throw std::logic_error("Simulation::run called twice");
        ran = true;
        if (sc.horizon > 0.0) {
            for (const ScenarioEvent& ev : sc.events) world->inject_scenario_event(ev);
            if (factory) {
                for (const FactoryPhase& p : sc.factory_phases) {
                    const int target = p.target;
                    engine.schedule(p.start, EventKind::FactoryTick, [this, target] {
                        factory->set_target(target);
                        emit(JournalKind::ScenarioEvent, engine.now(), std::nullopt, std::nullopt,
                             "factory_target=" + std::to_string(target));
                    });
                }
                engine.schedule(0.0, EventKind::FactoryTick, [this] { factory_tick(); });
            }
            for (const ManualBatch& b : sc.manual_batches) {
                const int count = b.count;
                engine.schedule(b.time, EventKind::ScenarioInjection, [this, count] { manual_batch(count); });
            }
            engine.schedule(sc.reclaim_interval, EventKind::Tick, [this] { reclaim_tick(); });
            engine.run_until(sc.horizon);

            for (const WorkerAgent& w : world->workers())
                if (w.state == WorkerState::Running) cpu_seconds += sc.horizon - w.start_time;
            emit(JournalKind::ScenarioEvent, sc.horizon, std::nullopt, std::nullopt, "horizon");
        }

        summary.iterations = master.total_maturity();
        summary.peak_running = world->peak_running();
        summary.cpu_years = cpu_seconds / kYear;
        summary.mean_running = sc.horizon > 0.0 ? cpu_seconds / sc.horizon : 0.0;
        const std::vector<RegistryRecord> reg = registry();
        const IterationSplit split = useful_iterations(reg, sc.k_rand);
        summary.useful_iterations = split.useful;
        summary.wasted_iterations = split.wasted;
        if (factory) {
            summary.factory_submissions = factory->submissions();
            summary.generic_submissions = factory->generic_submissions();
        }
        return summary;
    }

    std::vector<RegistryRecord> registry() const {
        std::vector<RegistryRecord> out;
        out.reserve(master.registry().size());
        for (const SnapshotReplica& r : master.registry())
            out.push_back({r.snapshot_id, r.beta, r.seed, r.maturity});
        return out;
    }
};

Simulation::Simulation(const Scenario& scenario, std::ostream& journal)
    : impl_((scenario.validate(), std::make_unique<Impl>(scenario, journal))) {}

Simulation::~Simulation() = default;

RunSummary Simulation::run() { return impl_->run(); }

std::vector<RegistryRecord> Simulation::registry() const { return impl_->registry(); }

std::string Simulation::factory_dump() const {
    if (!impl_->factory) return {};
    return impl_->factory->dump(impl_->sc.horizon);
}

void write_summary_csv(std::ostream& out, const RunSummary& s) {
    char buf[64];
    auto real = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.6f", x);
        return std::string(buf);
    };
    out << "metric,value\n";
    out << "name," << s.name << '\n';
    out << "seed," << s.seed << '\n';
    out << "horizon_hours," << real(s.horizon_hours) << '\n';
    out << "replicas," << s.replicas << '\n';
    out << "iterations," << s.iterations << '\n';
    out << "uploads," << s.uploads << '\n';
    out << "stale_uploads," << s.stale_uploads << '\n';
    out << "downloads," << s.downloads << '\n';
    out << "workers_submitted," << s.workers_submitted << '\n';
    out << "workers_started," << s.workers_started << '\n';
    out << "invalid_workers," << s.invalid_workers << '\n';
    out << "submit_failures," << s.submit_failures << '\n';
    out << "peak_running," << s.peak_running << '\n';
    out << "mean_running," << real(s.mean_running) << '\n';
    out << "cpu_years," << real(s.cpu_years) << '\n';
    out << "transfer_bytes," << s.transfer_bytes << '\n';
    out << "transfer_tb," << real(s.transfer_tb()) << '\n';
    out << "useful_iterations," << s.useful_iterations << '\n';
    out << "wasted_iterations," << s.wasted_iterations << '\n';
    out << "factory_submissions," << s.factory_submissions << '\n';
    out << "generic_submissions," << s.generic_submissions << '\n';
    out << "manual_submissions," << s.manual_submissions << '\n';
    out << "f_scale," << (s.f_scale ? real(*s.f_scale) : std::string("")) << '\n';
}

namespace {

class StagedFiles {
public:
    explicit StagedFiles(std::filesystem::path dir) : dir_(std::move(dir)) {}
    ~StagedFiles() {
        if (committed_) return;
        std::error_code ec;
        for (const auto& p : staged_) std::filesystem::remove(p, ec);
    }

    std::filesystem::path stage(const std::string& name) {
        staged_.push_back(dir_ / (name + ".partial"));
        finals_.push_back(dir_ / name);
        return staged_.back();
    }

    std::vector<std::filesystem::path> commit() {
        for (std::size_t i = 0; i < staged_.size(); ++i) std::filesystem::rename(staged_[i], finals_[i]);
        committed_ = true;
        return finals_;
    }

private:
    std::filesystem::path dir_;
    std::vector<std::filesystem::path> staged_;
    std::vector<std::filesystem::path> finals_;
    bool committed_ = false;
};

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    return out;
}

void close_checked(std::ofstream& out, const std::filesystem::path& p) {
    out.close();
    if (!out) throw std::runtime_error("failed writing '" + p.string() + "'");
}

}  // namespace

RunOutputs run_scenario(const Scenario& scenario, const std::filesystem::path& out_dir) {
    scenario.validate();
    std::filesystem::create_directories(out_dir);
    StagedFiles files(out_dir);
    RunOutputs result;

    const auto journal_path = files.stage("journal.tsv");
    std::vector<RegistryRecord> registry;
    std::string factory_dump;
    {
        std::ofstream journal = open_out(journal_path);
        Simulation sim(scenario, journal);
        result.summary = sim.run();
        registry = sim.registry();
        factory_dump = sim.factory_dump();
        close_checked(journal, journal_path);
    }

    const std::vector<JournalEvent> events = read_journal_file(journal_path.string());
    const std::vector<HourlyPoint> series = hourly_series(events, scenario.granularity);
    if (scenario.fscale_window)
        result.summary.f_scale = f_scale(series, scenario.fscale_window->first, scenario.fscale_window->second);

    auto write = [&](const std::string& name, auto&& body) {
        const auto p = files.stage(name);
        std::ofstream out = open_out(p);
        body(out);
        close_checked(out, p);
    };
    write("registry.tsv", [&](std::ostream& o) { o << format_registry(registry); });
    write("hourly.csv", [&](std::ostream& o) { write_hourly_csv(o, series); });
    std::optional<BetaRange> region;
    if (scenario.policy.sensitive_region)
        region = BetaRange{scenario.policy.sensitive_region->lo, scenario.policy.sensitive_region->hi};
    write("maturity.csv", [&](std::ostream& o) { write_maturity_csv(o, maturity_histogram(registry, region)); });
    write("percentiles.csv", [&](std::ostream& o) { write_percentiles_csv(o, duration_percentiles(events)); });
    if (scenario.factory) write("factory.tsv", [&](std::ostream& o) { o << factory_dump; });
    write("summary.csv", [&](std::ostream& o) { write_summary_csv(o, result.summary); });

    result.files = files.commit();
    return result;
}

}  // namespace lqgrid
