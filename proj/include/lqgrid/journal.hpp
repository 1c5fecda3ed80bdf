#pragma once

// Append-only production journal, registry dumps, and every metric derived
// from them: hourly series, active/invalid classification, f_scale, useful
// iterations, per-beta maturity totals and duration percentiles.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lqgrid {

enum class JournalKind {
    WorkerSubmitted,
    WorkerQueued,
    WorkerStarted,
    WorkerInvalid,
    WorkerCancelled,
    WorkerExited,
    TaskAssigned,
    TaskUploaded,
    StaleUpload,
    SubmitFailed,
    ScenarioEvent,
};

std::string_view to_string(JournalKind kind);
std::optional<JournalKind> journal_kind_from_string(std::string_view text);

struct JournalEvent {
    std::int64_t time = 0;
    JournalKind kind = JournalKind::ScenarioEvent;
    std::optional<std::int64_t> worker_id;
    std::optional<std::string> ce_id;
    std::optional<std::int64_t> snapshot_id;
    std::optional<double> beta;
    std::optional<std::int64_t> maturity_after;
    std::optional<std::int64_t> duration;
    std::optional<std::string> note;

    bool operator==(const JournalEvent&) const = default;
};

/// Parse failure carrying the 1-based line number.
class JournalError : public std::runtime_error {
public:
    JournalError(std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

constexpr std::size_t kJournalFields = 9;

/// One tab-separated line without the trailing newline. Absent fields are
/// written as "-", betas with six decimals.
std::string format_event(const JournalEvent& ev);
JournalEvent parse_event_line(std::string_view line, std::size_t line_no);
std::vector<JournalEvent> parse_journal(std::istream& in);
std::vector<JournalEvent> read_journal_file(const std::string& path);

class JournalWriter {
public:
    explicit JournalWriter(std::ostream& out) : out_(&out) {}
    /// Throws std::logic_error when ev.time precedes the previous event.
    void append(const JournalEvent& ev);
    std::size_t count() const { return count_; }

private:
    std::ostream* out_;
    std::int64_t last_time_ = INT64_MIN;
    std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Registry dump
// ---------------------------------------------------------------------------

struct RegistryRecord {
    std::int64_t snapshot_id = 0;
    double beta = 0.0;
    std::uint64_t seed = 0;
    std::int64_t maturity = 0;

    bool operator==(const RegistryRecord&) const = default;
};

/// snapshot_id, beta (6 decimals), seed, maturity; tab-separated, sorted by id.
std::string format_registry(std::span<const RegistryRecord> records);
std::vector<RegistryRecord> parse_registry(std::istream& in);
std::vector<RegistryRecord> read_registry_file(const std::string& path);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

constexpr std::int64_t kSecondsPerHour = 3600;

struct WorkerClass {
    std::set<std::int64_t> active_hours;
    bool started = false;
    bool invalid = false;
    int uploads = 0;
};

/// Active in hour h: executing, during h, a task that was later uploaded.
/// Invalid: started but never uploaded anything.
std::map<std::int64_t, WorkerClass> classify_workers(std::span<const JournalEvent> journal);

struct HourlyPoint {
    std::int64_t hour_index = 0;
    std::int64_t active_workers = 0;
    std::int64_t invalid_workers = 0;
    std::int64_t added_workers = 0;
    std::int64_t uploads = 0;
    std::int64_t iterations_done = 0;
    std::int64_t cumulative_iterations = 0;
};

/// Hours 0 .. ceil(last event / 1h) - 1.
std::vector<HourlyPoint> hourly_series(std::span<const JournalEvent> journal, int granularity = 3);

/// Mean active workers over mean uploads per hour in [first_hour, end_hour);
/// absent when the window is empty, out of range, or produced no uploads.
std::optional<double> f_scale(std::span<const HourlyPoint> series, std::int64_t first_hour, std::int64_t end_hour);

struct IterationSplit {
    std::int64_t useful = 0;
    std::int64_t wasted = 0;
};

/// Per replica: wasted = min(maturity, k_rand), useful = the remainder.
IterationSplit useful_iterations(std::span<const RegistryRecord> registry, std::int64_t k_rand);

struct BetaTotal {
    double beta = 0.0;
    std::int64_t total_iterations = 0;
    std::int64_t replicas = 0;
    bool sensitive = false;
};

struct BetaRange {
    double lo = 0.0;
    double hi = 0.0;
};

std::vector<BetaTotal> maturity_histogram(std::span<const RegistryRecord> registry,
                                          std::optional<BetaRange> sensitive_region = std::nullopt);

struct PercentileRow {
    double beta = 0.0;
    std::int64_t p25 = 0;
    std::int64_t p50 = 0;
    std::int64_t p75 = 0;
    std::size_t count = 0;
};

struct PercentileReport {
    std::vector<PercentileRow> rows;
    /// One entry per beta skipped for having fewer than four uploads.
    std::vector<std::string> warnings;
};

constexpr std::size_t kMinPercentileSamples = 4;

/// Nearest-rank percentile of a sorted sample: element ceil(p/100 * n), 1-based.
std::int64_t nearest_rank(std::span<const std::int64_t> sorted, double p);

PercentileReport duration_percentiles(std::span<const JournalEvent> journal);

/// Upload durations grouped by beta.
std::map<double, std::vector<std::int64_t>> durations_by_beta(std::span<const JournalEvent> journal);

/// Sarle's bimodality coefficient; values above kBimodalThreshold suggest
/// more than one mode.
double bimodality_coefficient(std::span<const double> sample);
constexpr double kBimodalThreshold = 5.0 / 9.0;

/// Bimodality coefficient of log durations. Task durations are multiplicative
/// (speed times t0 times a Gamma factor), so two t0 components separate
/// cleanly in log space while a single component stays unimodal there.
double duration_bimodality(std::span<const std::int64_t> durations);

// ---------------------------------------------------------------------------
// CSV reports (comma-separated, single header line, LF endings)
// ---------------------------------------------------------------------------

void write_hourly_csv(std::ostream& out, std::span<const HourlyPoint> series);
void write_maturity_csv(std::ostream& out, std::span<const BetaTotal> totals);
void write_percentiles_csv(std::ostream& out, const PercentileReport& report);

}  // namespace lqgrid
