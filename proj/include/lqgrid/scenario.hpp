#pragma once

// Scenario configuration: an INI-style text file with [scenario], repeated
// [beta], repeated [ce], optional [factory] / [manual], and repeated [event]
// sections. Durations accept s, m, h, d and w suffixes.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lqgrid/agent_factory.hpp"
#include "lqgrid/grid_world.hpp"
#include "lqgrid/master.hpp"

namespace lqgrid {

/// Validation or syntax failure; the message names the offending field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// "90", "90s", "15m", "1.5h", "2d", "9w" -> seconds.
Seconds parse_duration(const std::string& text);

struct BetaSpec {
    double beta = 0.0;
    int replicas = 1;
    T0Spec t0;
};

struct FactoryPhase {
    Seconds start = 0.0;
    int target = 0;
};

struct ManualBatch {
    Seconds time = 0.0;
    int count = 0;
};

struct Scenario {
    std::string name = "scenario";
    Seconds horizon = 0.0;
    std::uint64_t root_seed = 1;
    std::vector<BetaSpec> betas;
    SchedulingPolicy policy;
    int granularity = 3;
    std::int64_t k_rand = 400;
    std::int64_t snapshot_size_bytes = 10'000'000;
    double lease_timeout_factor = 2.0;
    /// A running worker that finds no task exits after this long.
    Seconds idle_timeout = 10.0 * kMinute;
    Seconds reclaim_interval = 5.0 * kMinute;
    Seconds invalid_lifetime = 10.0 * kMinute;
    /// Per-CE speed factors not given explicitly are drawn log-normally.
    double speed_median = 1.0;
    double speed_sigma = 0.0;
    std::vector<CeSpec> catalog;

    std::optional<FactoryConfig> factory;
    /// Target changes; the factory submits nothing before the first phase.
    std::vector<FactoryPhase> factory_phases;
    std::vector<ManualBatch> manual_batches;
    std::vector<ScenarioEvent> events;

    /// Optional [first, end) hour window for the f_scale summary line.
    std::optional<std::pair<std::int64_t, std::int64_t>> fscale_window;

    std::size_t replica_total() const;
    /// Throws ConfigError naming the first violated field.
    void validate() const;
};

/// Parses and validates. Random per-CE attributes (ranges, speeds) are drawn
/// from the "catalog" stream of root_seed, so seed overrides must be applied
/// through this function's argument rather than afterwards.
Scenario parse_scenario(std::istream& in, std::optional<std::uint64_t> seed_override = std::nullopt);
Scenario load_scenario(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace lqgrid
