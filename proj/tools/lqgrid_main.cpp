// lqgrid: run production-grid scenarios and analyse their outputs.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lqgrid/journal.hpp"
#include "lqgrid/observables.hpp"
#include "lqgrid/scenario.hpp"
#include "lqgrid/simulation.hpp"

namespace fs = std::filesystem;
using namespace lqgrid;

namespace {

std::string real(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

std::string real_or_empty(const std::optional<double>& x) { return x ? real(*x) : std::string(); }

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
    return out;
}

void check_format(const std::string& format) {
    if (format != "csv") throw std::runtime_error("unsupported --format '" + format + "' (only csv)");
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out_dir,
            const std::string& format) {
    check_format(format);
    const Scenario sc = load_scenario(config, seed);
    const RunOutputs out = run_scenario(sc, out_dir);
    write_summary_csv(std::cout, out.summary);
    return 0;
}

int cmd_validate(const std::string& config, std::optional<std::uint64_t> seed) {
    const Scenario sc = load_scenario(config, seed);
    std::cout << "ok " << sc.name << ": " << sc.betas.size() << " betas, " << sc.replica_total() << " replicas, "
              << sc.catalog.size() << " computing elements, horizon " << real(sc.horizon / kHour) << " h\n";
    return 0;
}

struct AnalyzeOptions {
    std::string journal;
    std::string registry;
    std::string out_dir = ".";
    std::string format = "csv";
    bool useful = false;
    std::int64_t k_rand = 400;
    int granularity = 3;
    std::vector<std::int64_t> fscale_window;
    std::vector<double> sensitive;
};

int cmd_analyze(const AnalyzeOptions& o) {
    check_format(o.format);
    if (o.useful && o.registry.empty()) throw std::runtime_error("--useful requires --registry");
    const std::vector<JournalEvent> events = read_journal_file(o.journal);
    std::optional<std::vector<RegistryRecord>> registry;
    if (!o.registry.empty()) registry = read_registry_file(o.registry);

    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    const std::vector<HourlyPoint> series = hourly_series(events, o.granularity);
    {
        std::ofstream out = open_out(dir / "hourly.csv");
        write_hourly_csv(out, series);
    }
    {
        std::int64_t first = 0, end = static_cast<std::int64_t>(series.size());
        if (o.fscale_window.size() == 2) {
            first = o.fscale_window[0];
            end = o.fscale_window[1];
        } else if (!o.fscale_window.empty()) {
            throw std::runtime_error("--fscale-window takes two hour indices");
        }
        const std::optional<double> f = f_scale(series, first, end);
        std::ofstream out = open_out(dir / "fscale.csv");
        out << "first_hour,end_hour,f_scale\n" << first << ',' << end << ',' << real_or_empty(f) << '\n';
        std::cout << "f_scale=" << (f ? real(*f) : std::string("absent")) << '\n';
    }
    {
        const PercentileReport report = duration_percentiles(events);
        std::ofstream out = open_out(dir / "percentiles.csv");
        write_percentiles_csv(out, report);
        for (const std::string& w : report.warnings) std::cerr << "warning: " << w << '\n';
    }
    if (registry) {
        std::optional<BetaRange> region;
        if (o.sensitive.size() == 2) region = BetaRange{o.sensitive[0], o.sensitive[1]};
        else if (!o.sensitive.empty()) throw std::runtime_error("--sensitive takes 'lo,hi'");
        std::ofstream out = open_out(dir / "maturity.csv");
        write_maturity_csv(out, maturity_histogram(*registry, region));
    }
    if (o.useful) {
        const IterationSplit s = useful_iterations(*registry, o.k_rand);
        std::ofstream out = open_out(dir / "useful.csv");
        out << "k_rand,useful,wasted\n" << o.k_rand << ',' << s.useful << ',' << s.wasted << '\n';
        std::cout << "useful=" << s.useful << " wasted=" << s.wasted << '\n';
    }
    return 0;
}

struct EnsembleOptions {
    std::string path;
    std::vector<double> thetas;
    std::size_t block_size = kDefaultBlockSize;
    std::string out_dir;
    std::string format = "csv";
    std::string fit = "both";
};

// All-zero errors (a theta-independent ensemble) would make the weights
// singular; fall back to unit weights and rescale errors by the residuals.
std::vector<FitPoint> fit_points(const std::vector<QuotientPoint>& q, bool& unit_weights) {
    std::vector<FitPoint> pts;
    bool all_zero = true, any_zero = false;
    for (const QuotientPoint& p : q) {
        all_zero = all_zero && p.error == 0.0;
        any_zero = any_zero || p.error == 0.0;
    }
    if (any_zero && !all_zero) throw std::runtime_error("some quotient errors are zero; cannot weight the fit");
    unit_weights = all_zero;
    for (const QuotientPoint& p : q) pts.push_back({p.theta, p.quotient, all_zero ? 1.0 : p.error});
    return pts;
}

Estimate rescale(Estimate e, std::optional<double> chi2_per_dof, bool unit_weights) {
    if (unit_weights) e.error *= chi2_per_dof ? std::sqrt(*chi2_per_dof) : 0.0;
    return e;
}

int cmd_ensemble(const EnsembleOptions& o) {
    check_format(o.format);
    const Ensemble e = read_ensemble_file(o.path);
    std::vector<double> grid = o.thetas;
    if (grid.empty())
        for (double t : e.thetas)
            if (t != 0.0) grid.push_back(t);
    if (grid.empty()) throw std::runtime_error("no nonzero theta to evaluate");
    const std::vector<QuotientPoint> q = b4_difference_quotient(e, grid, o.block_size);

    std::ostringstream qcsv;
    qcsv << "theta,quotient,error\n";
    char buf[128];
    for (const QuotientPoint& p : q) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.theta, p.quotient, p.error);
        qcsv << buf;
    }

    bool unit = false;
    const std::vector<FitPoint> pts = fit_points(q, unit);
    const FitResult fit = extrapolate_mu2(pts);
    std::ostringstream fcsv;
    fcsv << "fit,intercept,intercept_error,slope,slope_error,chi2,dof,chi2_per_dof\n";
    auto g = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.9g", x);
        return std::string(buf);
    };
    if ((o.fit == "both" || o.fit == "linear") && fit.linear) {
        const LinearFit& l = *fit.linear;
        const Estimate a = rescale(l.intercept, l.chi2_per_dof(), unit);
        const Estimate b = rescale(l.slope, l.chi2_per_dof(), unit);
        fcsv << "linear," << g(a.value) << ',' << g(a.error) << ',' << g(b.value) << ',' << g(b.error) << ','
             << g(l.chi2) << ',' << l.dof << ',' << (l.chi2_per_dof() ? g(*l.chi2_per_dof()) : "") << '\n';
    }
    if (o.fit == "both" || o.fit == "constant") {
        const ConstantFit& c = fit.constant;
        const Estimate a = rescale(c.value, c.chi2_per_dof(), unit);
        fcsv << "constant," << g(a.value) << ',' << g(a.error) << ",,," << g(c.chi2) << ',' << c.dof << ','
             << (c.chi2_per_dof() ? g(*c.chi2_per_dof()) : "") << '\n';
    }

    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        std::ofstream qo = open_out(fs::path(o.out_dir) / "quotients.csv");
        qo << qcsv.str();
        std::ofstream fo = open_out(fs::path(o.out_dir) / "fit.csv");
        fo << fcsv.str();
    }
    std::cout << qcsv.str() << fcsv.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Production-grid scenario simulator and analysis tools"};
    app.require_subcommand(1);

    std::string config, out_dir = "out", format = "csv";
    std::optional<std::uint64_t> seed;

    auto* run = app.add_subcommand("run", "Run a scenario and write journal, registry and reports");
    run->add_option("--config", config, "Scenario file")->required();
    run->add_option("--seed-override", seed, "Replace the scenario's root seed");
    run->add_option("--out-dir", out_dir, "Output directory");
    run->add_option("--format", format, "Report format (csv)");

    auto* validate = app.add_subcommand("validate", "Parse and validate a scenario file");
    validate->add_option("--config", config, "Scenario file")->required();
    validate->add_option("--seed-override", seed, "Replace the scenario's root seed");

    AnalyzeOptions ao;
    auto* analyze = app.add_subcommand("analyze", "Derive metric CSVs from a journal and registry dump");
    analyze->add_option("--journal", ao.journal, "Journal file")->required();
    analyze->add_option("--registry", ao.registry, "Registry dump");
    analyze->add_option("--out-dir", ao.out_dir, "Output directory");
    analyze->add_option("--format", ao.format, "Report format (csv)");
    analyze->add_flag("--useful", ao.useful, "Report useful and wasted iterations (needs --registry)");
    analyze->add_option("--k-rand", ao.k_rand, "Randomization threshold in iterations");
    analyze->add_option("--granularity", ao.granularity, "Iterations per upload");
    analyze->add_option("--fscale-window", ao.fscale_window, "First and end hour for f_scale")->delimiter(',');
    analyze->add_option("--sensitive", ao.sensitive, "Sensitive beta region lo,hi")->delimiter(',');

    EnsembleOptions eo;
    auto* ensemble = app.add_subcommand("ensemble", "Binder-cumulant difference quotients and fits");
    ensemble->add_option("--ensemble", eo.path, "Ensemble file")->required();
    ensemble->add_option("--thetas", eo.thetas, "Theta values (default: all nonzero columns)")->delimiter(',');
    ensemble->add_option("--block-size", eo.block_size, "Jackknife block size");
    ensemble->add_option("--fit", eo.fit, "linear, constant or both")->check(CLI::IsMember({"linear", "constant", "both"}));
    ensemble->add_option("--out-dir", eo.out_dir, "Also write quotients.csv and fit.csv here");
    ensemble->add_option("--format", eo.format, "Report format (csv)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config, seed, out_dir, format);
        if (*validate) return cmd_validate(config, seed);
        if (*analyze) return cmd_analyze(ao);
        if (*ensemble) return cmd_ensemble(eo);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}
