#include "lqgrid/master.hpp"

#include <algorithm>
#include <sstream>

namespace lqgrid {

void SchedulingPolicy::validate() const {
    if (kind == PolicyKind::SensitiveRegion) {
        if (!sensitive_region) throw std::invalid_argument("sensitive_region policy requires a region");
        if (sensitive_region->lo > sensitive_region->hi)
            throw std::invalid_argument("sensitive region lower bound exceeds upper bound");
    } else if (sensitive_region) {
        throw std::invalid_argument("maturity policy takes no sensitive region");
    }
}

namespace {

Ordering by_key(auto a, auto b) {
    if (a < b) return Ordering::AFirst;
    if (b < a) return Ordering::BFirst;
    return Ordering::Equal;
}

}  // namespace

Ordering compare_priority(const SnapshotReplica& a, const SnapshotReplica& b, const SchedulingPolicy& policy) {
    Ordering primary = Ordering::Equal;
    if (policy.kind == PolicyKind::SensitiveRegion && policy.sensitive_region) {
        const bool a_in = policy.sensitive_region->contains(a.beta);
        const bool b_in = policy.sensitive_region->contains(b.beta);
        if (a_in && !b_in) return Ordering::AFirst;
        if (b_in && !a_in) return Ordering::BFirst;
        primary = a_in ? by_key(a.beta, b.beta) : by_key(a.maturity, b.maturity);
    } else {
        primary = by_key(a.maturity, b.maturity);
    }
    if (primary != Ordering::Equal) return primary;
    if (Ordering o = by_key(a.seed, b.seed); o != Ordering::Equal) return o;
    return by_key(a.snapshot_id, b.snapshot_id);
}

std::vector<SnapshotReplica> register_snapshots(std::span<const double> betas,
                                                const std::map<double, int>& replicas_per_beta,
                                                std::uint64_t seed_base) {
    std::set<double> seen;
    std::vector<SnapshotReplica> registry;
    for (double beta : betas) {
        std::ostringstream where;
        where.precision(6);
        where << std::fixed << "beta=" << beta;
        if (!seen.insert(beta).second) throw RegistryError("duplicate " + where.str());
        auto it = replicas_per_beta.find(beta);
        if (it == replicas_per_beta.end()) throw RegistryError("no replica count for " + where.str());
        if (it->second < 1) throw RegistryError("replica count for " + where.str() + " must be >= 1");
        for (int i = 0; i < it->second; ++i) {
            SnapshotReplica r;
            r.snapshot_id = static_cast<SnapshotId>(registry.size());
            r.beta = beta;
            r.seed = splitmix64(seed_base + static_cast<std::uint64_t>(r.snapshot_id));
            registry.push_back(r);
        }
    }
    return registry;
}

bool Master::PriorityLess::operator()(SnapshotId a, SnapshotId b) const {
    return compare_priority(master->registry_[static_cast<std::size_t>(a)],
                            master->registry_[static_cast<std::size_t>(b)], master->policy_) == Ordering::AFirst;
}

Master::Master(std::vector<SnapshotReplica> registry, SchedulingPolicy policy, MasterConfig config,
               ExpectedDuration expected_duration)
    : registry_(std::move(registry)), policy_(std::move(policy)), config_(config),
      expected_duration_(std::move(expected_duration)), available_(PriorityLess{this}) {
    policy_.validate();
    if (config_.granularity < 1) throw std::invalid_argument("granularity must be >= 1");
    if (!(config_.lease_timeout_factor > 0.0)) throw std::invalid_argument("lease_timeout_factor must be positive");
    for (std::size_t i = 0; i < registry_.size(); ++i) {
        SnapshotReplica& r = registry_[i];
        if (r.snapshot_id != static_cast<SnapshotId>(i))
            throw RegistryError("registry must be indexed by snapshot_id");
        total_maturity_ += r.maturity;
        if (r.lease) {
            expiries_.emplace(r.lease->expiry, r.snapshot_id);
            next_task_id_ = std::max(next_task_id_, r.lease->task_id + 1);
        } else {
            available_.insert(r.snapshot_id);
        }
    }
}

void Master::lease(SnapshotReplica& r, WorkerId worker, std::int64_t task_id, Seconds now) {
    available_.erase(r.snapshot_id);
    const Seconds expiry = now + lease_timeout(r.beta);
    r.lease = Lease{worker, expiry, task_id};
    expiries_.emplace(expiry, r.snapshot_id);
}

void Master::release(SnapshotReplica& r) {
    if (!r.lease) return;
    expiries_.erase({r.lease->expiry, r.snapshot_id});
    r.lease.reset();
    available_.insert(r.snapshot_id);
}

std::optional<Task> Master::assign_task(WorkerId worker, std::optional<SnapshotId> cached, Seconds now) {
    SnapshotReplica* chosen = nullptr;
    bool cache_hit = false;
    if (cached && *cached >= 0 && static_cast<std::size_t>(*cached) < registry_.size()) {
        SnapshotReplica& c = registry_[static_cast<std::size_t>(*cached)];
        if (!c.lease) {
            chosen = &c;
            cache_hit = true;
        }
    }
    if (!chosen) {
        if (available_.empty()) return std::nullopt;
        chosen = &registry_[static_cast<std::size_t>(*available_.begin())];
    }
    Task t;
    t.task_id = next_task_id_++;
    t.snapshot_id = chosen->snapshot_id;
    t.beta = chosen->beta;
    t.maturity_at_assign = chosen->maturity;
    t.iterations = config_.granularity;
    t.assigned_worker = worker;
    t.assign_time = now;
    t.cache_hit = cache_hit;
    lease(*chosen, worker, t.task_id, now);
    return t;
}

UploadResult Master::complete_task(const Task& task, Seconds now) {
    SnapshotReplica& r = registry_.at(static_cast<std::size_t>(task.snapshot_id));
    const bool holds = r.lease && r.lease->worker_id == task.assigned_worker && r.lease->task_id == task.task_id;
    if (!holds || r.lease->expiry < now) {
        ++stale_uploads_;
        if (holds) release(r);
        return UploadResult{UploadStatus::Stale, r.maturity};
    }
    r.maturity += task.iterations;
    total_maturity_ += task.iterations;
    ++accepted_uploads_;
    release(r);
    return UploadResult{UploadStatus::Accepted, r.maturity};
}

int Master::reclaim_expired_leases(Seconds now) {
    int count = 0;
    while (!expiries_.empty() && expiries_.begin()->first < now) {
        const SnapshotId id = expiries_.begin()->second;
        release(registry_[static_cast<std::size_t>(id)]);
        ++count;
    }
    return count;
}

void Master::extend_leases(Seconds dt) {
    std::set<std::pair<Seconds, SnapshotId>> shifted;
    for (const auto& [expiry, id] : expiries_) {
        registry_[static_cast<std::size_t>(id)].lease->expiry = expiry + dt;
        shifted.emplace(expiry + dt, id);
    }
    expiries_ = std::move(shifted);
}

}  // namespace lqgrid
