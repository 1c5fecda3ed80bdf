#include "lqgrid/agent_factory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace lqgrid {

double CEStats::decay_factor(Seconds now, Seconds half_life) const {
    const Seconds age = std::max(0.0, now - last_update);
    if (!(half_life > 0.0)) return age > 0.0 ? 0.0 : 1.0;
    return std::exp2(-age / half_life);
}

double CEStats::weighted_total_n(Seconds now, Seconds half_life) const {
    return queued + running_r + terminal_n * decay_factor(now, half_life);
}

double CEStats::weighted_clean_c(Seconds now, Seconds half_life) const {
    return terminal_c * decay_factor(now, half_life);
}

double fitness(const CEStats& stats, Seconds now, Seconds half_life) {
    const double n = stats.weighted_total_n(now, half_life);
    if (!(n > 0.0)) return 0.0;
    const double f = (stats.running_r + stats.weighted_clean_c(now, half_life)) / n;
    return std::clamp(f, 0.0, 1.0);
}

SelectionProbabilities selection_probabilities(std::span<const CEStats> all_stats, Seconds now, Seconds half_life) {
    std::vector<double> f;
    f.reserve(all_stats.size());
    double total = 1.0;
    for (const CEStats& s : all_stats) {
        f.push_back(fitness(s, now, half_life));
        total += f.back();
    }
    SelectionProbabilities p;
    for (std::size_t i = 0; i < all_stats.size(); ++i) p.per_ce[all_stats[i].ce_id] = f[i] / total;
    p.generic = 1.0 / total;
    return p;
}

CeChoice choose_ce(std::span<const CEStats> all_stats, std::span<const std::string> catalog, RandomStream& rng,
                   Seconds now, Seconds half_life) {
    if (catalog.empty()) throw std::invalid_argument("choose_ce: empty computing element catalog");
    double total = 1.0;
    std::vector<double> f;
    f.reserve(all_stats.size());
    for (const CEStats& s : all_stats) {
        f.push_back(fitness(s, now, half_life));
        total += f.back();
    }
    // Walk the cumulative fitness; whatever is left over is the generic slot.
    const double x = rng.uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < all_stats.size(); ++i) {
        acc += f[i];
        if (f[i] > 0.0 && x < acc) return CeChoice{all_stats[i].ce_id, false};
    }
    return CeChoice{catalog[rng.below(catalog.size())], true};
}

std::string_view to_string(JobOutcome o) {
    switch (o) {
        case JobOutcome::Queued: return "queued";
        case JobOutcome::Started: return "started";
        case JobOutcome::CleanFinish: return "clean_finish";
        case JobOutcome::Cancelled: return "cancelled";
        case JobOutcome::CancelledQueued: return "cancelled_queued";
        case JobOutcome::Invalid: return "invalid";
        case JobOutcome::SubmitFail: return "submit_fail";
    }
    return "unknown";
}

AgentFactory::AgentFactory(FactoryConfig config, std::vector<std::string> catalog, RandomStream rng)
    : config_(config), catalog_(std::move(catalog)), rng_(std::move(rng)) {
    if (config_.target_pool < 0) throw std::invalid_argument("factory target_pool must be >= 0");
    if (!(config_.tick_interval > 0.0)) throw std::invalid_argument("factory tick_interval must be positive");
    if (!(config_.half_life > 0.0)) throw std::invalid_argument("factory half_life must be positive");
    if (config_.max_submissions_per_tick < 1)
        throw std::invalid_argument("factory max_submissions_per_tick must be >= 1");
    if (config_.q_max < 1) throw std::invalid_argument("factory q_max must be >= 1");
}

std::vector<CEStats> AgentFactory::stats_snapshot() const {
    std::vector<CEStats> out;
    out.reserve(stats_.size());
    for (const auto& [id, s] : stats_) out.push_back(s);
    return out;
}

std::vector<std::string> AgentFactory::maintain_pool(Seconds now, int pool_observation, const Submit& submit) {
    std::vector<std::string> chosen;
    const int deficit = config_.target_pool - pool_observation;
    if (deficit <= 0 || catalog_.empty()) return chosen;
    const int wanted = std::min(deficit, config_.max_submissions_per_tick);
    for (int k = 0; k < wanted; ++k) {
        const std::vector<CEStats> snapshot = stats_snapshot();
        std::optional<CeChoice> pick;
        for (int attempt = 0; attempt < config_.max_redraws; ++attempt) {
            CeChoice c = choose_ce(snapshot, catalog_, rng_, now, config_.half_life);
            auto it = stats_.find(c.ce_id);
            if (it != stats_.end() && it->second.queued >= config_.q_max) continue;
            pick = std::move(c);
            break;
        }
        if (!pick) continue;
        ++submissions_;
        if (pick->via_generic) ++generic_submissions_;
        chosen.push_back(pick->ce_id);
        if (submit) submit(pick->ce_id);
    }
    return chosen;
}

const CEStats& AgentFactory::record_outcome(const std::string& ce_id, JobOutcome outcome, Seconds now) {
    auto [it, inserted] = stats_.try_emplace(ce_id);
    CEStats& s = it->second;
    if (inserted) {
        s.ce_id = ce_id;
        s.last_update = now;
    }
    const double d = s.decay_factor(now, config_.half_life);
    s.terminal_n *= d;
    s.terminal_c *= d;
    s.last_update = std::max(s.last_update, now);

    auto take = [](int& counter) { counter = std::max(0, counter - 1); };
    switch (outcome) {
        case JobOutcome::Queued: ++s.queued; break;
        case JobOutcome::Started:
            take(s.queued);
            ++s.running_r;
            break;
        case JobOutcome::CleanFinish:
            take(s.running_r);
            s.terminal_n += 1.0;
            s.terminal_c += 1.0;
            break;
        case JobOutcome::Cancelled:
            take(s.running_r);
            s.terminal_n += 1.0;
            break;
        case JobOutcome::CancelledQueued:
        case JobOutcome::Invalid:
            take(s.queued);
            s.terminal_n += 1.0;
            break;
        case JobOutcome::SubmitFail: s.terminal_n += 1.0; break;
    }
    return s;
}

double AgentFactory::fitness_of(const std::string& ce_id, Seconds now) const {
    auto it = stats_.find(ce_id);
    if (it == stats_.end()) return 0.0;
    return fitness(it->second, now, config_.half_life);
}

SelectionProbabilities AgentFactory::probabilities(Seconds now) const {
    const std::vector<CEStats> snapshot = stats_snapshot();
    return selection_probabilities(snapshot, now, config_.half_life);
}

std::string AgentFactory::dump(Seconds now) const {
    std::string out;
    char buf[256];
    for (const auto& [id, s] : stats_) {
        std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%d\t%.6f\n", s.weighted_total_n(now, config_.half_life),
                      s.weighted_clean_c(now, config_.half_life), s.running_r, fitness(s, now, config_.half_life));
        out += id;
        out += buf;
    }
    return out;
}

}  // namespace lqgrid
