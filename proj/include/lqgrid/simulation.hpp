#pragma once

// Wires engine, grid, master, factory and journal together for one scenario.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lqgrid/journal.hpp"
#include "lqgrid/scenario.hpp"

namespace lqgrid {

struct RunSummary {
    std::string name;
    std::uint64_t seed = 0;
    double horizon_hours = 0.0;
    std::int64_t replicas = 0;
    std::int64_t iterations = 0;
    std::int64_t uploads = 0;
    std::int64_t stale_uploads = 0;
    std::int64_t downloads = 0;
    std::int64_t workers_submitted = 0;
    /// Workers that reached the running state (N_CPU).
    std::int64_t workers_started = 0;
    std::int64_t invalid_workers = 0;
    std::int64_t submit_failures = 0;
    std::int64_t peak_running = 0;
    double mean_running = 0.0;
    double cpu_years = 0.0;
    std::int64_t transfer_bytes = 0;
    std::int64_t useful_iterations = 0;
    std::int64_t wasted_iterations = 0;
    std::int64_t factory_submissions = 0;
    std::int64_t generic_submissions = 0;
    std::int64_t manual_submissions = 0;
    std::optional<double> f_scale;

    double transfer_tb() const { return static_cast<double>(transfer_bytes) / 1e12; }
};

void write_summary_csv(std::ostream& out, const RunSummary& s);

class Simulation {
public:
    /// The journal is streamed to `journal` while the simulation runs. The
    /// scenario is copied.
    Simulation(const Scenario& scenario, std::ostream& journal);
    ~Simulation();
    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    /// Runs to the horizon; may be called once.
    RunSummary run();

    std::vector<RegistryRecord> registry() const;
    /// Empty when the scenario has no factory.
    std::string factory_dump() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct RunOutputs {
    RunSummary summary;
    std::vector<std::filesystem::path> files;
};

/// Runs the scenario and writes journal.tsv, registry.tsv, hourly.csv,
/// maturity.csv, percentiles.csv, summary.csv (and factory.tsv when a factory
/// is configured) into out_dir. Nothing is left behind when it throws.
RunOutputs run_scenario(const Scenario& scenario, const std::filesystem::path& out_dir);

}  // namespace lqgrid
