#pragma once

// Snapshot registry, lease-based task assignment with cache affinity, and the
// maturity / sensitive-region scheduling orders.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

#include "lqgrid/grid_world.hpp"
#include "lqgrid/sim_core.hpp"

namespace lqgrid {

using SnapshotId = std::int64_t;

struct Lease {
    WorkerId worker_id = 0;
    Seconds expiry = 0.0;
    std::int64_t task_id = 0;
};

struct SnapshotReplica {
    SnapshotId snapshot_id = 0;
    double beta = 0.0;
    std::uint64_t seed = 0;
    std::int64_t maturity = 0;
    std::optional<Lease> lease;
};

struct BetaInterval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double beta) const { return beta >= lo && beta <= hi; }
};

enum class PolicyKind { Maturity, SensitiveRegion };

struct SchedulingPolicy {
    PolicyKind kind = PolicyKind::Maturity;
    std::optional<BetaInterval> sensitive_region;

    static SchedulingPolicy maturity() { return {}; }
    static SchedulingPolicy sensitive(BetaInterval region) { return {PolicyKind::SensitiveRegion, region}; }
    /// Throws std::invalid_argument if the region is missing, superfluous or inverted.
    void validate() const;
};

enum class Ordering { AFirst, BFirst, Equal };

/// Scheduling order between two replicas. Maturity policy: fewer iterations
/// first. Sensitive-region policy: replicas inside the region precede those
/// outside; inside, smaller beta first; outside, fewer iterations first.
/// Remaining ties fall to (seed, snapshot_id) ascending.
Ordering compare_priority(const SnapshotReplica& a, const SnapshotReplica& b, const SchedulingPolicy& policy);

struct Task {
    std::int64_t task_id = 0;
    SnapshotId snapshot_id = 0;
    double beta = 0.0;
    std::int64_t maturity_at_assign = 0;
    int iterations = 3;
    WorkerId assigned_worker = 0;
    Seconds assign_time = 0.0;
    /// The worker already held this snapshot, so no download was needed.
    bool cache_hit = false;
};

struct MasterConfig {
    int granularity = 3;
    /// Lease length as a multiple of the expected task duration at the replica's beta.
    double lease_timeout_factor = 2.0;
    std::int64_t snapshot_size_bytes = 10'000'000;
};

enum class UploadStatus { Accepted, Stale };

struct UploadResult {
    UploadStatus status = UploadStatus::Accepted;
    std::int64_t maturity_after = 0;
};

class RegistryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Builds the replica set: ids follow (beta order as given, replica index);
/// seeds are splitmix64(seed_base + id), distinct because splitmix64 is a
/// bijection.
std::vector<SnapshotReplica> register_snapshots(std::span<const double> betas,
                                                const std::map<double, int>& replicas_per_beta,
                                                std::uint64_t seed_base);

class Master {
public:
    using ExpectedDuration = std::function<Seconds(double beta)>;

    Master(std::vector<SnapshotReplica> registry, SchedulingPolicy policy, MasterConfig config,
           ExpectedDuration expected_duration);
    Master(const Master&) = delete;
    Master& operator=(const Master&) = delete;

    /// Affinity first: a worker whose cached snapshot is unleased keeps it.
    /// Otherwise the highest-priority unleased replica; none if all are leased.
    std::optional<Task> assign_task(WorkerId worker, std::optional<SnapshotId> cached, Seconds now);

    /// Applies an upload. A lease that expired or moved makes the upload stale;
    /// stale results are discarded and the replica is left untouched.
    UploadResult complete_task(const Task& task, Seconds now);

    /// Clears every lease with expiry < now; returns how many were cleared.
    int reclaim_expired_leases(Seconds now);

    /// Pushes every live lease expiry back by dt (master clock frozen during outages).
    void extend_leases(Seconds dt);

    const std::vector<SnapshotReplica>& registry() const { return registry_; }
    const SnapshotReplica& replica(SnapshotId id) const { return registry_.at(static_cast<std::size_t>(id)); }
    const SchedulingPolicy& policy() const { return policy_; }
    const MasterConfig& config() const { return config_; }
    std::size_t unleased_count() const { return available_.size(); }
    std::size_t leased_count() const { return registry_.size() - available_.size(); }
    std::int64_t total_maturity() const { return total_maturity_; }
    std::int64_t accepted_uploads() const { return accepted_uploads_; }
    std::int64_t stale_uploads() const { return stale_uploads_; }
    Seconds lease_timeout(double beta) const { return config_.lease_timeout_factor * expected_duration_(beta); }

private:
    struct PriorityLess {
        const Master* master;
        bool operator()(SnapshotId a, SnapshotId b) const;
    };

    void lease(SnapshotReplica& r, WorkerId worker, std::int64_t task_id, Seconds now);
    void release(SnapshotReplica& r);

    std::vector<SnapshotReplica> registry_;
    SchedulingPolicy policy_;
    MasterConfig config_;
    ExpectedDuration expected_duration_;
    std::set<SnapshotId, PriorityLess> available_;
    std::set<std::pair<Seconds, SnapshotId>> expiries_;
    std::int64_t next_task_id_ = 0;
    std::int64_t total_maturity_ = 0;
    std::int64_t accepted_uploads_ = 0;
    std::int64_t stale_uploads_ = 0;
};

}  // namespace lqgrid
