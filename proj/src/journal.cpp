#include "lqgrid/journal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace lqgrid {

namespace {

constexpr std::string_view kAbsent = "-";

constexpr std::pair<JournalKind, std::string_view> kKindNames[] = {
    {JournalKind::WorkerSubmitted, "WORKER_SUBMITTED"},
    {JournalKind::WorkerQueued, "WORKER_QUEUED"},
    {JournalKind::WorkerStarted, "WORKER_STARTED"},
    {JournalKind::WorkerInvalid, "WORKER_INVALID"},
    {JournalKind::WorkerCancelled, "WORKER_CANCELLED"},
    {JournalKind::WorkerExited, "WORKER_EXITED"},
    {JournalKind::TaskAssigned, "TASK_ASSIGNED"},
    {JournalKind::TaskUploaded, "TASK_UPLOADED"},
    {JournalKind::StaleUpload, "STALE_UPLOAD"},
    {JournalKind::SubmitFailed, "SUBMIT_FAILED"},
    {JournalKind::ScenarioEvent, "SCENARIO_EVENT"},
};

std::string format_beta(double beta) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", beta);
    return buf;
}

// Tabs and line breaks would corrupt the record structure.
std::string sanitize(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return out;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no, std::string_view name) {
    T value{};
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (field.empty() || ec != std::errc{} || ptr != last)
        throw JournalError(line_no, "invalid " + std::string(name) + " '" + std::string(field) + "'");
    return value;
}

template <typename T>
std::optional<T> parse_optional(std::string_view field, std::size_t line_no, std::string_view name) {
    if (field == kAbsent) return std::nullopt;
    return parse_number<T>(field, line_no, name);
}

std::optional<std::string> parse_optional_text(std::string_view field) {
    if (field == kAbsent) return std::nullopt;
    return std::string(field);
}

template <typename T>
void put(std::string& out, const std::optional<T>& v) {
    out += '\t';
    if (v) out += std::to_string(*v);
    else out += kAbsent;
}

void put_text(std::string& out, const std::optional<std::string>& v) {
    out += '\t';
    if (v) out += sanitize(*v);
    else out += kAbsent;
}

std::int64_t hour_of(std::int64_t t) {
    return t >= 0 ? t / kSecondsPerHour : -((-t + kSecondsPerHour - 1) / kSecondsPerHour);
}

// Hours overlapped by [a, b]; an instantaneous interval touches the hour containing a.
std::pair<std::int64_t, std::int64_t> hour_span(std::int64_t a, std::int64_t b) {
    const std::int64_t first = hour_of(a);
    if (b <= a) return {first, first + 1};
    const std::int64_t last_excl = hour_of(b - 1) + 1;
    return {first, last_excl};
}

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

}  // namespace

std::string_view to_string(JournalKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "UNKNOWN";
}

std::optional<JournalKind> journal_kind_from_string(std::string_view text) {
    for (const auto& [k, name] : kKindNames)
        if (name == text) return k;
    return std::nullopt;
}

JournalError::JournalError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::string format_event(const JournalEvent& ev) {
    std::string out = std::to_string(ev.time);
    out += '\t';
    out += to_string(ev.kind);
    put(out, ev.worker_id);
    put_text(out, ev.ce_id);
    put(out, ev.snapshot_id);
    out += '\t';
    out += ev.beta ? format_beta(*ev.beta) : std::string(kAbsent);
    put(out, ev.maturity_after);
    put(out, ev.duration);
    put_text(out, ev.note);
    return out;
}

JournalEvent parse_event_line(std::string_view line, std::size_t line_no) {
    const auto f = split_tabs(line);
    if (f.size() != kJournalFields)
        throw JournalError(line_no, "expected " + std::to_string(kJournalFields) + " tab-separated fields, got " +
                                        std::to_string(f.size()));
    JournalEvent ev;
    ev.time = parse_number<std::int64_t>(f[0], line_no, "time");
    const auto kind = journal_kind_from_string(f[1]);
    if (!kind) throw JournalError(line_no, "unknown event kind '" + std::string(f[1]) + "'");
    ev.kind = *kind;
    ev.worker_id = parse_optional<std::int64_t>(f[2], line_no, "worker_id");
    ev.ce_id = parse_optional_text(f[3]);
    ev.snapshot_id = parse_optional<std::int64_t>(f[4], line_no, "snapshot_id");
    ev.beta = parse_optional<double>(f[5], line_no, "beta");
    ev.maturity_after = parse_optional<std::int64_t>(f[6], line_no, "maturity_after");
    ev.duration = parse_optional<std::int64_t>(f[7], line_no, "duration");
    ev.note = parse_optional_text(f[8]);
    if (ev.kind == JournalKind::TaskUploaded &&
        !(ev.snapshot_id && ev.beta && ev.maturity_after && ev.duration))
        throw JournalError(line_no, "TASK_UPLOADED requires snapshot_id, beta, maturity_after and duration");
    return ev;
}

std::vector<JournalEvent> parse_journal(std::istream& in) {
    std::vector<JournalEvent> events;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(std::move(line));
        if (line.empty()) continue;
        JournalEvent ev = parse_event_line(line, line_no);
        if (!events.empty() && ev.time < events.back().time)
            throw JournalError(line_no, "time regression: " + std::to_string(ev.time) + " after " +
                                            std::to_string(events.back().time));
        events.push_back(std::move(ev));
    }
    return events;
}

std::vector<JournalEvent> read_journal_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open journal '" + path + "'");
    return parse_journal(in);
}

void JournalWriter::append(const JournalEvent& ev) {
    if (ev.time < last_time_)
        throw std::logic_error("journal append out of order: " + std::to_string(ev.time) + " after " +
                               std::to_string(last_time_));
    last_time_ = ev.time;
    *out_ << format_event(ev) << '\n';
    ++count_;
}

// ---------------------------------------------------------------------------

std::string format_registry(std::span<const RegistryRecord> records) {
    std::vector<RegistryRecord> sorted(records.begin(), records.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const RegistryRecord& a, const RegistryRecord& b) { return a.snapshot_id < b.snapshot_id; });
    std::string out;
    for (const RegistryRecord& r : sorted) {
        out += std::to_string(r.snapshot_id);
        out += '\t';
        out += format_beta(r.beta);
        out += '\t';
        out += std::to_string(r.seed);
        out += '\t';
        out += std::to_string(r.maturity);
        out += '\n';
    }
    return out;
}

std::vector<RegistryRecord> parse_registry(std::istream& in) {
    std::vector<RegistryRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(std::move(line));
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        if (f.size() != 4)
            throw JournalError(line_no, "registry record needs 4 fields, got " + std::to_string(f.size()));
        RegistryRecord r;
        r.snapshot_id = parse_number<std::int64_t>(f[0], line_no, "snapshot_id");
        r.beta = parse_number<double>(f[1], line_no, "beta");
        r.seed = parse_number<std::uint64_t>(f[2], line_no, "seed");
        r.maturity = parse_number<std::int64_t>(f[3], line_no, "maturity");
        if (r.maturity < 0) throw JournalError(line_no, "negative maturity");
        if (!out.empty() && r.snapshot_id <= out.back().snapshot_id)
            throw JournalError(line_no, "registry not sorted by snapshot_id");
        out.push_back(r);
    }
    return out;
}

std::vector<RegistryRecord> read_registry_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open registry '" + path + "'");
    return parse_registry(in);
}

// ---------------------------------------------------------------------------

std::map<std::int64_t, WorkerClass> classify_workers(std::span<const JournalEvent> journal) {
    std::map<std::int64_t, WorkerClass> out;
    std::map<std::int64_t, std::int64_t> assigned_at;
    for (const JournalEvent& ev : journal) {
        if (!ev.worker_id) continue;
        const std::int64_t w = *ev.worker_id;
        switch (ev.kind) {
            case JournalKind::WorkerStarted:
            case JournalKind::WorkerInvalid: out[w].started = true; break;
            case JournalKind::TaskAssigned: assigned_at[w] = ev.time; break;
            case JournalKind::TaskUploaded: {
                WorkerClass& c = out[w];
                ++c.uploads;
                const std::int64_t d = ev.duration.value_or(0);
                auto it = assigned_at.find(w);
                const std::int64_t a = it != assigned_at.end() ? it->second : ev.time - d;
                if (it != assigned_at.end()) assigned_at.erase(it);
                const auto [h0, h1] = hour_span(a, a + d);
                for (std::int64_t h = h0; h < h1; ++h) c.active_hours.insert(h);
                break;
            }
            case JournalKind::StaleUpload: assigned_at.erase(w); break;
            default: out.try_emplace(w); break;
        }
    }
    for (auto& [w, c] : out) c.invalid = c.started && c.uploads == 0;
    return out;
}

std::vector<HourlyPoint> hourly_series(std::span<const JournalEvent> journal, int granularity) {
    if (journal.empty()) return {};
    const std::int64_t last = std::max<std::int64_t>(0, journal.back().time);
    const std::int64_t n_hours = std::max<std::int64_t>(1, (last + kSecondsPerHour - 1) / kSecondsPerHour);
    std::vector<HourlyPoint> series(static_cast<std::size_t>(n_hours));
    for (std::int64_t h = 0; h < n_hours; ++h) series[static_cast<std::size_t>(h)].hour_index = h;
    auto bin = [&](std::int64_t t) -> HourlyPoint& {
        const std::int64_t h = std::clamp<std::int64_t>(hour_of(t), 0, n_hours - 1);
        return series[static_cast<std::size_t>(h)];
    };

    const auto classes = classify_workers(journal);
    for (const auto& [w, c] : classes)
        for (std::int64_t h : c.active_hours)
            if (h >= 0 && h < n_hours) ++series[static_cast<std::size_t>(h)].active_workers;

    std::map<std::int64_t, std::int64_t> invalid_since;
    auto close_invalid = [&](std::int64_t w, std::int64_t end) {
        auto it = invalid_since.find(w);
        if (it == invalid_since.end()) return;
        const auto [h0, h1] = hour_span(it->second, end);
        for (std::int64_t h = std::max<std::int64_t>(h0, 0); h < std::min(h1, n_hours); ++h)
            ++series[static_cast<std::size_t>(h)].invalid_workers;
        invalid_since.erase(it);
    };

    for (const JournalEvent& ev : journal) {
        switch (ev.kind) {
            case JournalKind::WorkerStarted:
            case JournalKind::WorkerInvalid:
                if (ev.kind == JournalKind::WorkerStarted) ++bin(ev.time).added_workers;
                if (ev.worker_id) {
                    auto it = classes.find(*ev.worker_id);
                    if (it != classes.end() && it->second.invalid) invalid_since.emplace(*ev.worker_id, ev.time);
                }
                break;
            case JournalKind::WorkerCancelled:
            case JournalKind::WorkerExited:
                if (ev.worker_id) close_invalid(*ev.worker_id, ev.time);
                break;
            case JournalKind::TaskUploaded: {
                HourlyPoint& p = bin(ev.time);
                ++p.uploads;
                p.iterations_done += granularity;
                break;
            }
            default: break;
        }
    }
    const std::int64_t horizon = n_hours * kSecondsPerHour;
    while (!invalid_since.empty()) close_invalid(invalid_since.begin()->first, horizon);

    std::int64_t cumulative = 0;
    for (HourlyPoint& p : series) {
        cumulative += p.iterations_done;
        p.cumulative_iterations = cumulative;
    }
    return series;
}

std::optional<double> f_scale(std::span<const HourlyPoint> series, std::int64_t first_hour, std::int64_t end_hour) {
    if (first_hour < 0 || end_hour > static_cast<std::int64_t>(series.size()) || first_hour >= end_hour)
        return std::nullopt;
    double active = 0.0;
    double uploads = 0.0;
    for (std::int64_t h = first_hour; h < end_hour; ++h) {
        active += static_cast<double>(series[static_cast<std::size_t>(h)].active_workers);
        uploads += static_cast<double>(series[static_cast<std::size_t>(h)].uploads);
    }
    if (uploads <= 0.0) return std::nullopt;
    return active / uploads;
}

IterationSplit useful_iterations(std::span<const RegistryRecord> registry, std::int64_t k_rand) {
    if (k_rand < 0) throw std::invalid_argument("K_rand must be >= 0");
    IterationSplit s;
    for (const RegistryRecord& r : registry) {
        s.wasted += std::min(r.maturity, k_rand);
        s.useful += std::max<std::int64_t>(0, r.maturity - k_rand);
    }
    return s;
}

std::vector<BetaTotal> maturity_histogram(std::span<const RegistryRecord> registry,
                                          std::optional<BetaRange> sensitive_region) {
    std::map<double, BetaTotal> by_beta;
    for (const RegistryRecord& r : registry) {
        BetaTotal& t = by_beta[r.beta];
        t.beta = r.beta;
        t.total_iterations += r.maturity;
        ++t.replicas;
    }
    std::vector<BetaTotal> out;
    out.reserve(by_beta.size());
    for (auto& [beta, t] : by_beta) {
        t.sensitive = sensitive_region && beta >= sensitive_region->lo && beta <= sensitive_region->hi;
        out.push_back(t);
    }
    return out;
}

std::int64_t nearest_rank(std::span<const std::int64_t> sorted, double p) {
    if (sorted.empty()) throw std::invalid_argument("nearest_rank of an empty sample");
    const double n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::int64_t>(std::ceil(p / 100.0 * n - 1e-9));
    rank = std::clamp<std::int64_t>(rank, 1, static_cast<std::int64_t>(sorted.size()));
    return sorted[static_cast<std::size_t>(rank - 1)];
}

std::map<double, std::vector<std::int64_t>> durations_by_beta(std::span<const JournalEvent> journal) {
    std::map<double, std::vector<std::int64_t>> out;
    for (const JournalEvent& ev : journal)
        if (ev.kind == JournalKind::TaskUploaded && ev.beta && ev.duration) out[*ev.beta].push_back(*ev.duration);
    return out;
}

PercentileReport duration_percentiles(std::span<const JournalEvent> journal) {
    PercentileReport report;
    for (auto& [beta, d] : durations_by_beta(journal)) {
        if (d.size() < kMinPercentileSamples) {
            report.warnings.push_back("beta=" + format_beta(beta) + " omitted: " + std::to_string(d.size()) +
                                      " uploads, need " + std::to_string(kMinPercentileSamples));
            continue;
        }
        std::sort(d.begin(), d.end());
        report.rows.push_back({beta, nearest_rank(d, 25), nearest_rank(d, 50), nearest_rank(d, 75), d.size()});
    }
    return report;
}

double bimodality_coefficient(std::span<const double> sample) {
    const std::size_t count = sample.size();
    if (count < 4) throw std::invalid_argument("bimodality coefficient needs at least 4 values");
    const double n = static_cast<double>(count);
    double mean = 0.0;
    for (double x : sample) mean += x;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double x : sample) {
        const double d = x - mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if (!(m2 > 0.0)) throw std::invalid_argument("bimodality coefficient of a constant sample");
    const double g = m3 / std::pow(m2, 1.5);
    const double k = m4 / (m2 * m2) - 3.0;
    const double skew = g * std::sqrt(n * (n - 1.0)) / (n - 2.0);
    const double kurt = ((n + 1.0) * k + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0));
    return (skew * skew + 1.0) / (kurt + 3.0 * (n - 1.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0)));
}

double duration_bimodality(std::span<const std::int64_t> durations) {
    std::vector<double> logs;
    logs.reserve(durations.size());
    for (std::int64_t d : durations) {
        if (d <= 0) throw std::invalid_argument("durations must be positive");
        logs.push_back(std::log(static_cast<double>(d)));
    }
    return bimodality_coefficient(logs);
}

// ---------------------------------------------------------------------------

void write_hourly_csv(std::ostream& out, std::span<const HourlyPoint> series) {
    out << "hour,active_workers,invalid_workers,added_workers,uploads,iterations_done,cumulative_iterations\n";
    for (const HourlyPoint& p : series)
        out << p.hour_index << ',' << p.active_workers << ',' << p.invalid_workers << ',' << p.added_workers << ','
            << p.uploads << ',' << p.iterations_done << ',' << p.cumulative_iterations << '\n';
}

void write_maturity_csv(std::ostream& out, std::span<const BetaTotal> totals) {
    out << "beta,total_iterations,replicas,sensitive\n";
    for (const BetaTotal& t : totals)
        out << format_beta(t.beta) << ',' << t.total_iterations << ',' << t.replicas << ',' << (t.sensitive ? 1 : 0)
            << '\n';
}

void write_percentiles_csv(std::ostream& out, const PercentileReport& report) {
    out << "beta,p25,p50,p75,count\n";
    for (const PercentileRow& r : report.rows)
        out << format_beta(r.beta) << ',' << r.p25 << ',' << r.p50 << ',' << r.p75 << ',' << r.count << '\n';
}

}  // namespace lqgrid
