#include "lqgrid/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>

namespace lqgrid {

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct Entry {
    std::string value;
    std::size_t line = 0;
};

struct Section {
    std::string name;
    std::size_t line = 0;
    int ordinal = 0;  // 1-based index among sections of the same name
    std::map<std::string, Entry> entries;
    mutable std::set<std::string> used;

    std::string where(const std::string& key) const {
        std::string w = "[" + name + "]";
        if (ordinal > 1 || name == "ce" || name == "beta" || name == "event") w += " #" + std::to_string(ordinal);
        w += " " + key;
        auto it = entries.find(key);
        w += " (line " + std::to_string(it != entries.end() ? it->second.line : line) + ")";
        return w;
    }

    const Entry* find(const std::string& key) const {
        auto it = entries.find(key);
        if (it == entries.end()) return nullptr;
        used.insert(key);
        return &it->second;
    }

    [[noreturn]] void fail(const std::string& key, const std::string& why) const {
        throw ConfigError(where(key) + ": " + why);
    }

    const std::string& require(const std::string& key) const {
        const Entry* e = find(key);
        if (!e) fail(key, "missing required field");
        return e->value;
    }

    void check_unused() const {
        for (const auto& [key, e] : entries)
            if (!used.count(key)) throw ConfigError(where(key) + ": unknown field");
    }
};

template <typename T>
bool parse_number(const std::string& text, T& out) {
    std::string_view s = text;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return !s.empty() && ec == std::errc{} && ptr == s.data() + s.size();
}

double get_real(const Section& s, const std::string& key, double fallback) {
    const Entry* e = s.find(key);
    if (!e) return fallback;
    double v = 0.0;
    if (!parse_number(e->value, v) || !std::isfinite(v)) s.fail(key, "expected a number, got '" + e->value + "'");
    return v;
}

std::int64_t get_int(const Section& s, const std::string& key, std::int64_t fallback) {
    const Entry* e = s.find(key);
    if (!e) return fallback;
    std::int64_t v = 0;
    if (!parse_number(e->value, v)) s.fail(key, "expected an integer, got '" + e->value + "'");
    return v;
}

Seconds duration_of(const Section& s, const std::string& key, const std::string& text) {
    try {
        return parse_duration(text);
    } catch (const ConfigError& ex) {
        s.fail(key, ex.what());
    }
}

Seconds get_duration(const Section& s, const std::string& key, Seconds fallback) {
    const Entry* e = s.find(key);
    if (!e) return fallback;
    return duration_of(s, key, e->value);
}

// "a..b" or a single value.
std::pair<std::string, std::string> split_range(const std::string& text) {
    const std::size_t pos = text.find("..");
    if (pos == std::string::npos) return {trim(text), trim(text)};
    return {trim(text.substr(0, pos)), trim(text.substr(pos + 2))};
}

std::vector<Section> read_sections(std::istream& in) {
    static const std::set<std::string> known = {"scenario", "beta", "ce", "factory", "manual", "event"};
    std::vector<Section> sections;
    std::map<std::string, int> counts;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        if (const std::size_t hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty() || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section header '" + line + "'");
            Section s;
            s.name = trim(line.substr(1, line.size() - 2));
            if (!known.count(s.name))
                throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + s.name + "]");
            s.line = line_no;
            s.ordinal = ++counts[s.name];
            if (s.ordinal > 1 && (s.name == "scenario" || s.name == "factory" || s.name == "manual"))
                throw ConfigError("line " + std::to_string(line_no) + ": section [" + s.name + "] repeated");
            sections.push_back(std::move(s));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got '" + line + "'");
        if (sections.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": key outside of any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        if (!sections.back().entries.emplace(key, Entry{value, line_no}).second)
            throw ConfigError(sections.back().where(key) + ": duplicate field");
    }
    return sections;
}

std::string format_index(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", i);
    return buf;
}

void parse_scenario_section(const Section& s, Scenario& sc) {
    if (const Entry* e = s.find("name")) sc.name = e->value;
    sc.horizon = duration_of(s, "horizon", s.require("horizon"));
    if (const Entry* e = s.find("seed")) {
        if (!parse_number(e->value, sc.root_seed)) s.fail("seed", "expected an unsigned integer");
    }
    sc.granularity = static_cast<int>(get_int(s, "granularity", sc.granularity));
    sc.k_rand = get_int(s, "k_rand", sc.k_rand);
    sc.snapshot_size_bytes = get_int(s, "snapshot_size_bytes", sc.snapshot_size_bytes);
    sc.lease_timeout_factor = get_real(s, "lease_timeout_factor", sc.lease_timeout_factor);
    sc.idle_timeout = get_duration(s, "idle_timeout", sc.idle_timeout);
    sc.reclaim_interval = get_duration(s, "reclaim_interval", sc.reclaim_interval);
    sc.invalid_lifetime = get_duration(s, "invalid_lifetime", sc.invalid_lifetime);
    sc.speed_median = get_real(s, "speed_median", sc.speed_median);
    sc.speed_sigma = get_real(s, "speed_sigma", sc.speed_sigma);

    const std::string policy = s.find("policy") ? s.find("policy")->value : "maturity";
    if (policy == "maturity") {
        sc.policy = SchedulingPolicy::maturity();
    } else if (policy == "sensitive_region") {
        sc.policy.kind = PolicyKind::SensitiveRegion;
    } else {
        s.fail("policy", "expected 'maturity' or 'sensitive_region', got '" + policy + "'");
    }
    if (const Entry* e = s.find("sensitive_region")) {
        const auto parts = split_list(e->value);
        BetaInterval r;
        if (parts.size() != 2 || !parse_number(parts[0], r.lo) || !parse_number(parts[1], r.hi))
            s.fail("sensitive_region", "expected 'lo, hi'");
        sc.policy.sensitive_region = r;
    }
    if (const Entry* e = s.find("fscale_window")) {
        const auto parts = split_list(e->value);
        std::int64_t a = 0, b = 0;
        if (parts.size() != 2 || !parse_number(parts[0], a) || !parse_number(parts[1], b))
            s.fail("fscale_window", "expected 'first_hour, end_hour'");
        sc.fscale_window = std::make_pair(a, b);
    }
}

void parse_beta_section(const Section& s, Scenario& sc) {
    std::vector<double> values;
    const Entry* single = s.find("value");
    const Entry* list = s.find("values");
    if (single && list) s.fail("values", "give either 'value' or 'values', not both");
    if (!single && !list) s.fail("value", "missing required field");
    for (const std::string& item : split_list(single ? single->value : list->value)) {
        double b = 0.0;
        if (!parse_number(item, b)) s.fail(single ? "value" : "values", "bad beta '" + item + "'");
        values.push_back(b);
    }
    if (values.empty()) s.fail("values", "empty beta list");

    auto per_beta = [&](const std::string& key, bool required) {
        std::vector<std::string> items;
        const Entry* e = s.find(key);
        if (!e) {
            if (required) s.fail(key, "missing required field");
            return items;
        }
        items = split_list(e->value);
        if (items.size() == 1) items.assign(values.size(), items[0]);
        if (items.size() != values.size())
            s.fail(key, "expected 1 or " + std::to_string(values.size()) + " entries, got " +
                            std::to_string(items.size()));
        return items;
    };
    const auto replicas = per_beta("replicas", true);
    const auto t0 = per_beta("t0", true);
    const auto alt_t0 = per_beta("alt_t0", false);
    const auto alt_weight = per_beta("alt_weight", false);
    for (std::size_t i = 0; i < values.size(); ++i) {
        BetaSpec b;
        b.beta = values[i];
        if (!parse_number(replicas[i], b.replicas)) s.fail("replicas", "bad replica count '" + replicas[i] + "'");
        b.t0.t0 = duration_of(s, "t0", t0[i]);
        if (!alt_t0.empty()) b.t0.alt_t0 = duration_of(s, "alt_t0", alt_t0[i]);
        if (!alt_weight.empty() && !parse_number(alt_weight[i], b.t0.alt_weight))
            s.fail("alt_weight", "bad weight '" + alt_weight[i] + "'");
        if (b.t0.alt_weight < 0.0 || b.t0.alt_weight > 1.0) s.fail("alt_weight", "must be in [0, 1]");
        if (b.t0.alt_weight > 0.0 && alt_t0.empty()) s.fail("alt_t0", "required when alt_weight > 0");
        sc.betas.push_back(b);
    }
}

void parse_ce_section(const Section& s, Scenario& sc, RandomStream& rng) {
    const std::string id = s.require("id");
    const std::int64_t count = get_int(s, "count", 0);
    if (count < 0) s.fail("count", "must be >= 0");

    const auto [slots_lo_text, slots_hi_text] = split_range(s.require("slots"));
    std::int64_t slots_lo = 0, slots_hi = 0;
    if (!parse_number(slots_lo_text, slots_lo) || !parse_number(slots_hi_text, slots_hi) || slots_hi < slots_lo)
        s.fail("slots", "expected an integer or 'lo..hi'");
    const auto [wall_lo_text, wall_hi_text] = split_range(s.find("wall_time") ? s.find("wall_time")->value : "24h");
    const Seconds wall_lo = duration_of(s, "wall_time", wall_lo_text);
    const Seconds wall_hi = duration_of(s, "wall_time", wall_hi_text);
    if (wall_hi < wall_lo) s.fail("wall_time", "range upper bound below lower bound");

    CeSpec base;
    base.queue_limit = static_cast<int>(get_int(s, "queue_limit", 0));
    base.invalid_rate = get_real(s, "invalid_rate", 0.0);
    const Entry* speed = s.find("speed");
    if (speed && !parse_number(speed->value, base.speed_factor)) s.fail("speed", "expected a number");
    if (const Entry* e = s.find("windows")) {
        for (const std::string& w : split_list(e->value)) {
            const std::size_t dash = w.find('-', 1);
            if (dash == std::string::npos) s.fail("windows", "expected 'start-end' intervals");
            TimeWindow tw{duration_of(s, "windows", trim(w.substr(0, dash))),
                          duration_of(s, "windows", trim(w.substr(dash + 1)))};
            if (tw.end < tw.start) s.fail("windows", "window '" + w + "' ends before it starts");
            base.availability_windows.push_back(tw);
        }
    }

    const std::int64_t n = count == 0 ? 1 : count;
    for (std::int64_t i = 0; i < n; ++i) {
        CeSpec c = base;
        c.ce_id = count == 0 ? id : id + "-" + format_index(static_cast<int>(i));
        c.slot_count = static_cast<int>(slots_lo + static_cast<std::int64_t>(
                                                       rng.below(static_cast<std::uint64_t>(slots_hi - slots_lo + 1))));
        c.wall_time_limit = std::round(wall_lo + (wall_hi - wall_lo) * rng.uniform());
        if (!speed) c.speed_factor = sc.speed_sigma > 0.0 ? rng.lognormal(sc.speed_median, sc.speed_sigma) : sc.speed_median;
        sc.catalog.push_back(std::move(c));
    }
}

std::vector<std::pair<Seconds, std::int64_t>> parse_schedule(const Section& s, const std::string& key) {
    std::vector<std::pair<Seconds, std::int64_t>> out;
    for (const std::string& item : split_list(s.require(key))) {
        const std::size_t colon = item.find(':');
        std::int64_t n = 0;
        if (colon == std::string::npos || !parse_number(trim(item.substr(colon + 1)), n))
            s.fail(key, "expected 'time:count' entries, got '" + item + "'");
        out.emplace_back(duration_of(s, key, trim(item.substr(0, colon))), n);
    }
    return out;
}

void parse_factory_section(const Section& s, Scenario& sc) {
    FactoryConfig f;
    f.tick_interval = get_duration(s, "tick", f.tick_interval);
    f.half_life = get_duration(s, "half_life", f.half_life);
    f.max_submissions_per_tick = static_cast<int>(get_int(s, "max_per_tick", f.max_submissions_per_tick));
    f.q_max = static_cast<int>(get_int(s, "q_max", f.q_max));
    f.max_redraws = static_cast<int>(get_int(s, "max_redraws", f.max_redraws));
    for (const auto& [t, n] : parse_schedule(s, "targets")) sc.factory_phases.push_back({t, static_cast<int>(n)});
    f.target_pool = 0;
    sc.factory = f;
}

void parse_manual_section(const Section& s, Scenario& sc) {
    if (s.find("batches")) {
        for (const auto& [t, n] : parse_schedule(s, "batches")) sc.manual_batches.push_back({t, static_cast<int>(n)});
    }
    if (const Entry* e = s.find("period")) {
        const Seconds period = duration_of(s, "period", e->value);
        if (!(period > 0.0)) s.fail("period", "must be positive");
        const std::int64_t count = get_int(s, "count", -1);
        if (count < 0) s.fail("count", "required with 'period' and must be >= 0");
        const Seconds start = get_duration(s, "start", 0.0);
        const Seconds stop = get_duration(s, "stop", sc.horizon);
        for (Seconds t = start; t < stop; t += period) sc.manual_batches.push_back({t, static_cast<int>(count)});
    }
    std::stable_sort(sc.manual_batches.begin(), sc.manual_batches.end(),
                     [](const ManualBatch& a, const ManualBatch& b) { return a.time < b.time; });
}

void parse_event_section(const Section& s, Scenario& sc) {
    const std::string type = s.require("type");
    const Seconds start = duration_of(s, "start", s.require("start"));
    const Seconds duration = duration_of(s, "duration", s.require("duration"));
    if (type == "credential_expiry") {
        sc.events.push_back(CredentialExpiry{start, duration});
    } else if (type == "master_outage") {
        sc.events.push_back(MasterOutage{start, duration});
    } else if (type == "low_regime") {
        sc.events.push_back(LowRegime{start, duration, get_real(s, "capacity_fraction", 0.5)});
    } else {
        s.fail("type", "expected credential_expiry, master_outage or low_regime, got '" + type + "'");
    }
}

}  // namespace

Seconds parse_duration(const std::string& text) {
    const std::string t = trim(text);
    if (t.empty()) throw ConfigError("empty duration");
    double scale = 1.0;
    std::string number = t;
    switch (t.back()) {
        case 's': scale = 1.0; break;
        case 'm': scale = kMinute; break;
        case 'h': scale = kHour; break;
        case 'd': scale = kDay; break;
        case 'w': scale = kWeek; break;
        default: scale = 0.0; break;
    }
    if (scale != 0.0) number = t.substr(0, t.size() - 1);
    else scale = 1.0;
    double v = 0.0;
    if (!parse_number(trim(number), v) || !std::isfinite(v)) throw ConfigError("bad duration '" + t + "'");
    return v * scale;
}

std::size_t Scenario::replica_total() const {
    std::size_t n = 0;
    for (const BetaSpec& b : betas) n += static_cast<std::size_t>(std::max(0, b.replicas));
    return n;
}

void Scenario::validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
    if (!(horizon >= 0.0)) fail("scenario.horizon", "must be >= 0");
    if (granularity < 1) fail("scenario.granularity", "must be >= 1");
    if (k_rand < 0) fail("scenario.k_rand", "must be >= 0");
    if (snapshot_size_bytes < 0) fail("scenario.snapshot_size_bytes", "must be >= 0");
    if (!(lease_timeout_factor > 0.0)) fail("scenario.lease_timeout_factor", "must be positive");
    if (!(idle_timeout > 0.0)) fail("scenario.idle_timeout", "must be positive");
    if (!(reclaim_interval > 0.0)) fail("scenario.reclaim_interval", "must be positive");
    if (!(invalid_lifetime > 0.0)) fail("scenario.invalid_lifetime", "must be positive");
    if (!(speed_median > 0.0)) fail("scenario.speed_median", "must be positive");
    if (speed_sigma < 0.0) fail("scenario.speed_sigma", "must be >= 0");
    try {
        policy.validate();
    } catch (const std::invalid_argument& ex) {
        fail("scenario.policy", ex.what());
    }

    if (betas.empty()) fail("beta", "at least one beta is required");
    std::map<double, T0Spec> table;
    for (const BetaSpec& b : betas) {
        char where[64];
        std::snprintf(where, sizeof where, "beta[%.6f]", b.beta);
        if (b.replicas < 1) fail(std::string(where) + ".replicas", "must be >= 1");
        if (!(b.t0.t0 > 0.0)) fail(std::string(where) + ".t0", "must be positive");
        if (b.t0.alt_weight > 0.0 && !(b.t0.alt_t0 > 0.0)) fail(std::string(where) + ".alt_t0", "must be positive");
        if (!table.emplace(b.beta, b.t0).second) fail(std::string(where) + ".value", "duplicate beta");
    }
    try {
        DurationModel model(table);
    } catch (const std::invalid_argument& ex) {
        fail("beta.t0", ex.what());
    }

    if (catalog.empty()) fail("ce", "at least one computing element is required");
    std::set<std::string> ids;
    for (const CeSpec& c : catalog) {
        const std::string where = "ce[" + c.ce_id + "]";
        if (!ids.insert(c.ce_id).second) fail(where + ".id", "duplicate id");
        if (c.slot_count < 1) fail(where + ".slots", "must be >= 1");
        if (c.queue_limit < 0) fail(where + ".queue_limit", "must be >= 0");
        if (!(c.wall_time_limit > 0.0)) fail(where + ".wall_time", "must be positive");
        if (!(c.speed_factor > 0.0)) fail(where + ".speed", "must be positive");
        if (c.invalid_rate < 0.0 || c.invalid_rate > 1.0) fail(where + ".invalid_rate", "must be in [0, 1]");
    }

    if (factory) {
        if (!(factory->tick_interval > 0.0)) fail("factory.tick", "must be positive");
        if (!(factory->half_life > 0.0)) fail("factory.half_life", "must be positive");
        if (factory->max_submissions_per_tick < 1) fail("factory.max_per_tick", "must be >= 1");
        if (factory->q_max < 1) fail("factory.q_max", "must be >= 1");
        if (factory->max_redraws < 1) fail("factory.max_redraws", "must be >= 1");
        if (factory_phases.empty()) fail("factory.targets", "at least one phase is required");
        Seconds prev = -1.0;
        for (const FactoryPhase& p : factory_phases) {
            if (p.start < 0.0 || p.start <= prev) fail("factory.targets", "phase times must be >= 0 and increasing");
            if (p.target < 0) fail("factory.targets", "targets must be >= 0");
            if (static_cast<std::size_t>(p.target) > replica_total())
                fail("factory.targets", "target " + std::to_string(p.target) + " exceeds the " +
                                            std::to_string(replica_total()) + " registered replicas");
            prev = p.start;
        }
    }
    for (const ManualBatch& b : manual_batches) {
        if (b.count < 0) fail("manual.batches", "counts must be >= 0");
        if (b.time < 0.0 || b.time > horizon) fail("manual.batches", "batch time outside [0, horizon]");
    }
    for (const ScenarioEvent& ev : events) {
        std::visit(
            [&](const auto& e) {
                if (e.start < 0.0 || !(e.duration >= 0.0) || e.start + e.duration > horizon)
                    fail("event", "interval must lie within [0, horizon]");
            },
            ev);
        if (const auto* l = std::get_if<LowRegime>(&ev))
            if (l->capacity_fraction < 0.0 || l->capacity_fraction > 1.0)
                fail("event.capacity_fraction", "must be in [0, 1]");
    }
    if (fscale_window && (fscale_window->first < 0 || fscale_window->second <= fscale_window->first))
        fail("scenario.fscale_window", "expected 0 <= first_hour < end_hour");
}

Scenario parse_scenario(std::istream& in, std::optional<std::uint64_t> seed_override) {
    const std::vector<Section> sections = read_sections(in);
    Scenario sc;
    auto it = std::find_if(sections.begin(), sections.end(), [](const Section& s) { return s.name == "scenario"; });
    if (it == sections.end()) throw ConfigError("[scenario]: missing section");
    parse_scenario_section(*it, sc);
    if (seed_override) sc.root_seed = *seed_override;

    RandomStream catalog_rng(sc.root_seed, "catalog");
    for (const Section& s : sections) {
        if (s.name == "beta") parse_beta_section(s, sc);
        else if (s.name == "ce") parse_ce_section(s, sc, catalog_rng);
        else if (s.name == "factory") parse_factory_section(s, sc);
        else if (s.name == "manual") parse_manual_section(s, sc);
        else if (s.name == "event") parse_event_section(s, sc);
        s.check_unused();
    }
    sc.validate();
    return sc;
}

Scenario load_scenario(const std::string& path, std::optional<std::uint64_t> seed_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file '" + path + "'");
    return parse_scenario(in, seed_override);
}

}  // namespace lqgrid
