#pragma once

// Automated worker provisioning: keep the pool at a target size by choosing
// computing elements with probability proportional to a recency-weighted
// fitness, plus a generic slot that sends work to random sites for discovery.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lqgrid/sim_core.hpp"

namespace lqgrid {

/// Per-CE job statistics. Live jobs (queued, running) count with weight one;
/// terminal jobs are stored as decayed sums valid at last_update.
struct CEStats {
    std::string ce_id;
    int queued = 0;
    int running_r = 0;
    double terminal_n = 0.0;
    double terminal_c = 0.0;
    Seconds last_update = 0.0;

    double decay_factor(Seconds now, Seconds half_life) const;
    double weighted_total_n(Seconds now, Seconds half_life) const;
    double weighted_clean_c(Seconds now, Seconds half_life) const;
};

/// (r + c) / n with decayed c and n; 0 when n is zero.
double fitness(const CEStats& stats, Seconds now, Seconds half_life);

struct SelectionProbabilities {
    std::map<std::string, double> per_ce;
    double generic = 1.0;
};

/// P(CE_i) = f_i / (1 + sum f), P(generic) = 1 / (1 + sum f).
SelectionProbabilities selection_probabilities(std::span<const CEStats> all_stats, Seconds now, Seconds half_life);

struct CeChoice {
    std::string ce_id;
    bool via_generic = false;
};

/// Draws a CE by fitness; the generic slot resolves to a uniform pick from the
/// full catalog, known or not. Throws std::invalid_argument on an empty catalog.
CeChoice choose_ce(std::span<const CEStats> all_stats, std::span<const std::string> catalog, RandomStream& rng,
                   Seconds now, Seconds half_life);

enum class JobOutcome { Queued, Started, CleanFinish, Cancelled, CancelledQueued, Invalid, SubmitFail };

std::string_view to_string(JobOutcome o);

struct FactoryConfig {
    int target_pool = 1;
    Seconds tick_interval = 5.0 * kMinute;
    Seconds half_life = kDay;
    int max_submissions_per_tick = 50;
    /// Per-CE cap on our jobs waiting in the batch queue.
    int q_max = 2;
    /// Draws per submission before giving up on a saturated pick.
    int max_redraws = 8;
};

class AgentFactory {
public:
    using Submit = std::function<void(const std::string& ce_id)>;

    AgentFactory(FactoryConfig config, std::vector<std::string> catalog, RandomStream rng);

    /// Submits min(max_submissions_per_tick, target - pool) workers through
    /// `submit`, which is expected to report outcomes back synchronously.
    /// Returns the CE chosen for each submission.
    std::vector<std::string> maintain_pool(Seconds now, int pool_observation, const Submit& submit);

    /// Updates the statistics for ce_id; an unknown id is registered.
    const CEStats& record_outcome(const std::string& ce_id, JobOutcome outcome, Seconds now);

    double fitness_of(const std::string& ce_id, Seconds now) const;
    SelectionProbabilities probabilities(Seconds now) const;
    std::vector<CEStats> stats_snapshot() const;
    bool knows(const std::string& ce_id) const { return stats_.count(ce_id) != 0; }

    void set_target(int target) { config_.target_pool = target; }
    const FactoryConfig& config() const { return config_; }
    std::int64_t submissions() const { return submissions_; }
    std::int64_t generic_submissions() const { return generic_submissions_; }

    /// One line per known CE: ce_id, decayed n, decayed c, r, fitness.
    std::string dump(Seconds now) const;

private:
    FactoryConfig config_;
    std::vector<std::string> catalog_;
    RandomStream rng_;
    std::map<std::string, CEStats> stats_;
    std::int64_t submissions_ = 0;
    std::int64_t generic_submissions_ = 0;
};

}  // namespace lqgrid
