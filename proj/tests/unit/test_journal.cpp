#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "lqgrid/grid_world.hpp"
#include "lqgrid/journal.hpp"

using namespace lqgrid;

namespace {

JournalEvent ev(std::int64_t t, JournalKind k, std::optional<std::int64_t> w) {
    JournalEvent e;
    e.time = t;
    e.kind = k;
    e.worker_id = w;
    return e;
}

JournalEvent started(std::int64_t t, std::int64_t w) { return ev(t, JournalKind::WorkerStarted, w); }

JournalEvent assigned(std::int64_t t, std::int64_t w, std::int64_t s) {
    JournalEvent e = ev(t, JournalKind::TaskAssigned, w);
    e.snapshot_id = s;
    e.beta = 5.18;
    return e;
}

JournalEvent uploaded(std::int64_t t, std::int64_t w, std::int64_t s, std::int64_t k, std::int64_t d,
                      double beta = 5.18) {
    JournalEvent e = ev(t, JournalKind::TaskUploaded, w);
    e.snapshot_id = s;
    e.beta = beta;
    e.maturity_after = k;
    e.duration = d;
    return e;
}

std::string random_text(RandomStream& rng) {
    static const char alphabet[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_=.: ";
    std::string s(1 + rng.below(12), 'x');
    for (char& c : s) c = alphabet[rng.below(sizeof alphabet - 1)];
    if (s == "-") s = "x";
    return s;
}

// Five workers over six hours; the expected table is enumerated by hand below.
std::vector<JournalEvent> five_worker_journal() {
    using K = JournalKind;
    return {
        started(0, 0),
        assigned(0, 0, 0),
        started(1800, 1),
        assigned(1800, 1, 1),
        ev(3600, K::WorkerInvalid, 2),
        ev(4200, K::WorkerExited, 2),
        uploaded(5400, 0, 0, 3, 5400),
        assigned(5400, 0, 0),
        started(7300, 3),
        assigned(7300, 3, 2),
        uploaded(9000, 1, 1, 3, 7200),
        assigned(9000, 1, 1),
        started(10800, 4),
        assigned(10800, 4, 3),
        uploaded(12600, 0, 0, 6, 7200),
        assigned(12600, 0, 0),
        ev(14400, K::WorkerCancelled, 0),
        uploaded(14400, 4, 3, 3, 3600),
        assigned(14400, 4, 3),
        ev(18000, K::WorkerCancelled, 3),
        uploaded(19800, 1, 1, 6, 10800),
        uploaded(21600, 4, 3, 6, 7200),
    };
}

}  // namespace

TEST_SUITE("journal") {

TEST_CASE("empty input parses to an empty list") {
    std::istringstream in("");
    CHECK(parse_journal(in).empty());
    CHECK(hourly_series({}).empty());
}

TEST_CASE("serialize then parse 10^4 random events") {
    RandomStream rng(10, "journal-test");
    std::vector<JournalEvent> events;
    std::int64_t t = 0;
    for (int i = 0; i < 10000; ++i) {
        t += static_cast<std::int64_t>(rng.below(100));
        JournalEvent e;
        e.time = t;
        e.kind = static_cast<JournalKind>(rng.below(11));
        auto maybe = [&] { return rng.uniform() < 0.7; };
        const bool upload = e.kind == JournalKind::TaskUploaded;
        if (maybe()) e.worker_id = static_cast<std::int64_t>(rng.below(100000));
        if (maybe()) e.ce_id = random_text(rng);
        if (upload || maybe()) e.snapshot_id = static_cast<std::int64_t>(rng.below(1450));
        if (upload || maybe()) e.beta = static_cast<double>(5000000 + rng.below(300000)) / 1e6;
        if (upload || maybe()) e.maturity_after = 3 * static_cast<std::int64_t>(rng.below(1000));
        if (upload || maybe()) e.duration = static_cast<std::int64_t>(rng.below(100000));
        if (maybe()) e.note = random_text(rng);
        events.push_back(e);
    }
    std::ostringstream out;
    JournalWriter writer(out);
    for (const JournalEvent& e : events) writer.append(e);
    CHECK(writer.count() == events.size());
    std::istringstream in(out.str());
    CHECK(parse_journal(in) == events);
}

TEST_CASE("format uses tabs, dashes and six-decimal betas") {
    CHECK(format_event(uploaded(7, 1, 2, 3, 4, 5.1815)) == "7\tTASK_UPLOADED\t1\t-\t2\t5.181500\t3\t4\t-");
}

TEST_CASE("malformed lines report their line number") {
    std::istringstream in("0\tWORKER_STARTED\t1\t-\t-\t-\t-\t-\t-\n5\tWORKER_STARTED\t2\n");
    try {
        parse_journal(in);
        FAIL("expected a parse error");
    } catch (const JournalError& e) {
        CHECK(e.line() == 2);
    }
    std::istringstream bad_kind("0\tNOPE\t1\t-\t-\t-\t-\t-\t-\n");
    CHECK_THROWS_AS(parse_journal(bad_kind), JournalError);
    std::istringstream bad_upload("0\tTASK_UPLOADED\t1\t-\t-\t-\t-\t-\t-\n");
    CHECK_THROWS_AS(parse_journal(bad_upload), JournalError);
}

TEST_CASE("time regressions are rejected by parser and writer") {
    std::istringstream in("10\tWORKER_STARTED\t1\t-\t-\t-\t-\t-\t-\n9\tWORKER_STARTED\t2\t-\t-\t-\t-\t-\t-\n");
    try {
        parse_journal(in);
        FAIL("expected a regression error");
    } catch (const JournalError& e) {
        CHECK(e.line() == 2);
    }
    std::ostringstream out;
    JournalWriter w(out);
    w.append(started(10, 1));
    CHECK_THROWS_AS(w.append(started(9, 2)), std::logic_error);
}

TEST_CASE("registry dump round trip and format") {
    const std::vector<RegistryRecord> recs{{1, 5.19, 99, 6}, {0, 5.1815, 7, 300}};
    const std::string text = format_registry(recs);
    CHECK(text == "0\t5.181500\t7\t300\n1\t5.190000\t99\t6\n");
    std::istringstream in(text);
    const auto back = parse_registry(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == recs[1]);
    CHECK(back[1] == recs[0]);
    std::istringstream bad("0\t5.18\t1\n");
    CHECK_THROWS_AS(parse_registry(bad), JournalError);
}

TEST_CASE("classification examples") {
    SUBCASE("a two-hour task that uploads is active in both hours") {
        const std::vector<JournalEvent> j{started(0, 1), assigned(0, 1, 0), uploaded(7200, 1, 0, 3, 7200)};
        const auto c = classify_workers(j).at(1);
        CHECK(c.active_hours == std::set<std::int64_t>{0, 1});
        CHECK_FALSE(c.invalid);
    }
    SUBCASE("a wall-time kill without any upload is invalid") {
        const std::vector<JournalEvent> j{started(0, 1), assigned(0, 1, 0),
                                          ev(86400, JournalKind::WorkerCancelled, 1)};
        const auto c = classify_workers(j).at(1);
        CHECK(c.invalid);
        CHECK(c.active_hours.empty());
    }
    SUBCASE("three uploads then a kill mid-task: active only during the uploaded tasks") {
        const std::vector<JournalEvent> j{
            started(0, 1),           assigned(0, 1, 0),      uploaded(3000, 1, 0, 3, 3000),
            assigned(3000, 1, 0),    uploaded(6000, 1, 0, 6, 3000), assigned(6000, 1, 0),
            uploaded(9000, 1, 0, 9, 3000), assigned(9000, 1, 0), ev(20000, JournalKind::WorkerCancelled, 1)};
        const auto c = classify_workers(j).at(1);
        CHECK(c.active_hours == std::set<std::int64_t>{0, 1, 2});
        CHECK(c.uploads == 3);
        CHECK_FALSE(c.invalid);
    }
}

TEST_CASE("single upload in hour 0") {
    const std::vector<JournalEvent> j{started(0, 1), assigned(0, 1, 0), uploaded(1800, 1, 0, 3, 1800)};
    const auto s = hourly_series(j);
    REQUIRE(s.size() == 1);
    CHECK(s[0].active_workers == 1);
    CHECK(s[0].iterations_done == 3);
    CHECK(s[0].added_workers == 1);
}

TEST_CASE("hand-enumerated five-worker, six-hour table") {
    const auto j = five_worker_journal();
    const auto s = hourly_series(j, 3);
    REQUIRE(s.size() == 6);
    const std::int64_t active[] = {2, 2, 2, 3, 2, 2};
    const std::int64_t invalid[] = {0, 1, 1, 1, 1, 0};
    const std::int64_t added[] = {2, 0, 1, 1, 0, 0};
    const std::int64_t uploads[] = {0, 1, 1, 1, 1, 2};
    const std::int64_t cumulative[] = {0, 3, 6, 9, 12, 18};
    for (std::size_t h = 0; h < 6; ++h) {
        CAPTURE(h);
        CHECK(s[h].hour_index == static_cast<std::int64_t>(h));
        CHECK(s[h].active_workers == active[h]);
        CHECK(s[h].invalid_workers == invalid[h]);
        CHECK(s[h].added_workers == added[h]);
        CHECK(s[h].uploads == uploads[h]);
        CHECK(s[h].iterations_done == 3 * uploads[h]);
        CHECK(s[h].cumulative_iterations == cumulative[h]);
    }
    const auto classes = classify_workers(j);
    for (const auto& [w, c] : classes)
        if (c.started) CHECK(c.invalid != !c.active_hours.empty());
    CHECK(classes.at(2).invalid);
    CHECK(classes.at(3).invalid);
    CHECK(*f_scale(s, 0, 6) == doctest::Approx(13.0 / 6.0));
    CHECK_FALSE(f_scale(s, 0, 1).has_value());  // no uploads
    CHECK_FALSE(f_scale(s, 3, 3).has_value());  // empty window
    CHECK_FALSE(f_scale(s, 0, 7).has_value());  // out of range
}

TEST_CASE("CSV reports") {
    const auto s = hourly_series(five_worker_journal(), 3);
    std::ostringstream out;
    write_hourly_csv(out, s);
    const std::string text = out.str();
    CHECK(text.rfind("hour,active_workers,invalid_workers,added_workers,uploads,iterations_done,"
                     "cumulative_iterations\n0,2,0,2,0,0,0\n",
                     0) == 0);
    CHECK(text.find('\r') == std::string::npos);
    CHECK(text.back() == '\n');
}

TEST_CASE("useful iteration split") {
    const std::vector<RegistryRecord> one{{0, 5.2, 1, 700}};
    CHECK(useful_iterations(one, 400).useful == 300);
    CHECK(useful_iterations(one, 400).wasted == 400);
    const std::vector<RegistryRecord> young{{0, 5.2, 1, 200}};
    CHECK(useful_iterations(young, 400).useful == 0);
    CHECK(useful_iterations(young, 400).wasted == 200);
    std::vector<RegistryRecord> many;
    for (int i = 0; i < 17; ++i) many.push_back({i, 5.2, 1, 42});
    CHECK(useful_iterations(many, 0).useful == 17 * 42);
    CHECK(useful_iterations(many, 0).wasted == 0);
    CHECK_THROWS(useful_iterations(many, -1));

    RandomStream rng(2, "split");
    std::vector<RegistryRecord> reg;
    std::int64_t total = 0;
    for (int i = 0; i < 500; ++i) {
        reg.push_back({i, 5.2, 1, 3 * static_cast<std::int64_t>(rng.below(400))});
        total += reg.back().maturity;
    }
    for (std::int64_t k : {0, 1, 300, 400, 500, 5000}) {
        const IterationSplit sp = useful_iterations(reg, k);
        CHECK(sp.useful + sp.wasted == total);
    }
}

TEST_CASE("maturity histogram") {
    const std::vector<RegistryRecord> reg{{0, 5.18, 1, 30}, {1, 5.18, 2, 12}, {2, 5.19, 3, 6}, {3, 5.2, 4, 0}};
    const auto h = maturity_histogram(reg, BetaRange{5.18, 5.19});
    REQUIRE(h.size() == 3);
    CHECK(h[0].total_iterations == 42);
    CHECK(h[0].replicas == 2);
    CHECK(h[0].sensitive);
    CHECK(h[1].sensitive);
    CHECK_FALSE(h[2].sensitive);
    const std::vector<RegistryRecord> single{{0, 5.2, 1, 9}, {1, 5.2, 1, 6}};
    const auto one = maturity_histogram(single);
    REQUIRE(one.size() == 1);
    CHECK(one[0].total_iterations == 15);
}

TEST_CASE("nearest-rank percentiles and under-populated betas") {
    const std::vector<std::int64_t> d{1, 2, 3, 4};
    CHECK(nearest_rank(d, 25) == 1);
    CHECK(nearest_rank(d, 50) == 2);
    CHECK(nearest_rank(d, 75) == 3);
    CHECK(nearest_rank(d, 100) == 4);

    std::vector<JournalEvent> j;
    for (std::int64_t i = 1; i <= 4; ++i) j.push_back(uploaded(10 * i, 1, 0, 3 * i, i, 5.18));
    for (std::int64_t i = 1; i <= 3; ++i) j.push_back(uploaded(100 + i, 2, 1, 3 * i, 7, 5.19));
    const PercentileReport r = duration_percentiles(j);
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].beta == 5.18);
    CHECK(r.rows[0].p25 == 1);
    CHECK(r.rows[0].p50 == 2);
    CHECK(r.rows[0].p75 == 3);
    CHECK(r.warnings.size() == 1);
}

TEST_CASE("medians follow a t0 that decreases with beta") {
    const std::vector<double> betas{5.17, 5.18, 5.19, 5.20, 5.21};
    const std::vector<double> t0s{9000, 7600, 7600, 6000, 4000};
    RandomStream rng(31, "durations");
    std::vector<JournalEvent> j;
    std::int64_t t = 0;
    for (int i = 0; i < 1000; ++i)
        for (std::size_t b = 0; b < betas.size(); ++b) {
            const auto d = std::llround(sample_task_duration(t0s[b], 1.0, rng));
            j.push_back(uploaded(t++, 1, 0, 3, d, betas[b]));
        }
    const PercentileReport r = duration_percentiles(j);
    REQUIRE(r.rows.size() == 5);
    for (std::size_t b = 1; b < r.rows.size(); ++b) CHECK(r.rows[b].p50 <= r.rows[b - 1].p50);
    for (const PercentileRow& row : r.rows) CHECK((row.p25 <= row.p50 && row.p50 <= row.p75));
}

TEST_CASE("two-component t0 mixture shows a second peak, a single component does not") {
    RandomStream rng(5, "durations");
    const DurationModel mixed(std::map<double, T0Spec>{{5.17, {4 * kHour, 1 * kHour, 0.3}}});
    const DurationModel plain(std::map<double, T0Spec>{{5.17, {4 * kHour}}});
    std::vector<std::int64_t> a, b;
    for (int i = 0; i < 20000; ++i) {
        a.push_back(std::max<std::int64_t>(1, std::llround(mixed.sample(5.17, 1.0, rng))));
        b.push_back(std::max<std::int64_t>(1, std::llround(plain.sample(5.17, 1.0, rng))));
    }
    CHECK(duration_bimodality(a) > kBimodalThreshold);
    CHECK(duration_bimodality(b) < kBimodalThreshold);
    std::vector<double> two;
    for (int i = 0; i < 1000; ++i) two.push_back(i % 2 ? 1.0 : -1.0);
    CHECK(bimodality_coefficient(two) > 0.99);
    const std::vector<double> normal = [] {
        RandomStream r(8, "bc");
        std::vector<double> v;
        for (int i = 0; i < 100000; ++i) v.push_back(r.normal());
        return v;
    }();
    CHECK(bimodality_coefficient(normal) == doctest::Approx(1.0 / 3.0).epsilon(0.02));
}

}
