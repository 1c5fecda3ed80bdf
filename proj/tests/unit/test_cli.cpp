#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lqgrid/observables.hpp"

using namespace lqgrid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lqgrid_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Runs the CLI with stdout/stderr captured to files in dir; returns the exit status.
int cli(const std::string& args, const fs::path& dir) {
    const std::string cmd = std::string("\"") + LQGRID_CLI + "\" " + args + " > \"" + (dir / "stdout.txt").string() +
                            "\" 2> \"" + (dir / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
#ifdef WEXITSTATUS
    return WEXITSTATUS(status);
#else
    return status;
#endif
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string scenario(const std::string& name) { return std::string(LQGRID_SCENARIO_DIR) + "/" + name + ".ini"; }

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(cell);
        if (!line.empty() && line.back() == ',') row.emplace_back();
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("run is byte-for-byte reproducible") {
    const fs::path dir = scratch("determinism");
    REQUIRE(cli("run --config \"" + scenario("smoke") + "\" --out-dir \"" + (dir / "a").string() + "\"", dir) == 0);
    REQUIRE(cli("run --config \"" + scenario("smoke") + "\" --out-dir \"" + (dir / "b").string() + "\"", dir) == 0);
    REQUIRE(cli("run --config \"" + scenario("smoke") + "\" --seed-override 12 --out-dir \"" +
                       (dir / "c").string() + "\"",
                   dir) == 0);
    for (const char* f : {"journal.tsv", "registry.tsv", "hourly.csv", "maturity.csv", "percentiles.csv",
                          "summary.csv", "factory.tsv"}) {
        CAPTURE(f);
        const std::string a = slurp(dir / "a" / f);
        CHECK_FALSE(a.empty());
        CHECK(a == slurp(dir / "b" / f));
        CHECK(a.find('\r') == std::string::npos);
        CHECK(a.back() == '\n');
    }
    CHECK(slurp(dir / "a" / "journal.tsv") != slurp(dir / "c" / "journal.tsv"));
    fs::remove_all(dir);
}

TEST_CASE("analyze reproduces the run's reports and is idempotent") {
    const fs::path dir = scratch("analyze");
    REQUIRE(cli("run --config \"" + scenario("smoke") + "\" --out-dir \"" + (dir / "run").string() + "\"", dir) == 0);
    const std::string args = "analyze --journal \"" + (dir / "run" / "journal.tsv").string() + "\" --registry \"" +
                             (dir / "run" / "registry.tsv").string() + "\" --useful --sensitive 5.1815,5.18525";
    REQUIRE(cli(args + " --out-dir \"" + (dir / "x").string() + "\"", dir) == 0);
    REQUIRE(cli(args + " --out-dir \"" + (dir / "y").string() + "\"", dir) == 0);
    for (const char* f : {"hourly.csv", "fscale.csv", "percentiles.csv", "maturity.csv", "useful.csv"})
        CHECK(slurp(dir / "x" / f) == slurp(dir / "y" / f));
    CHECK(slurp(dir / "x" / "hourly.csv") == slurp(dir / "run" / "hourly.csv"));
    CHECK(slurp(dir / "x" / "maturity.csv") == slurp(dir / "run" / "maturity.csv"));
    fs::remove_all(dir);
}

TEST_CASE("zero horizon produces an empty journal") {
    const fs::path dir = scratch("zero");
    {
        std::ofstream ini(dir / "zero.ini");
        ini << "[scenario]\nhorizon = 0\n[beta]\nvalue = 5.2\nreplicas = 3\nt0 = 1h\n[ce]\nid = a\nslots = 2\n";
    }
    REQUIRE(cli("run --config \"" + (dir / "zero.ini").string() + "\" --out-dir \"" + (dir / "out").string() + "\"",
                   dir) == 0);
    CHECK(slurp(dir / "out" / "journal.tsv").empty());
    std::istringstream reg(slurp(dir / "out" / "registry.tsv"));
    std::string line;
    int rows = 0;
    while (std::getline(reg, line)) {
        ++rows;
        CHECK(line.substr(line.rfind('\t') + 1) == "0");
    }
    CHECK(rows == 3);
    fs::remove_all(dir);
}

TEST_CASE("validate reports the offending field") {
    const fs::path dir = scratch("validate");
    REQUIRE(cli("validate --config \"" + scenario("smoke") + "\"", dir) == 0);
    CHECK(slurp(dir / "stdout.txt").rfind("ok ", 0) == 0);
    {
        std::ofstream ini(dir / "bad.ini");
        ini << "[scenario]\nhorizon = 1d\n[beta]\nvalue = 5.2\nreplicas = 3\nt0 = 1h\n[ce]\nid = a\nslots = 0\n";
    }
    CHECK(cli("validate --config \"" + (dir / "bad.ini").string() + "\"", dir) == 1);
    const std::string err = slurp(dir / "stderr.txt");
    CHECK(err.rfind("error: ", 0) == 0);
    CHECK(err.find("slots") != std::string::npos);
    CHECK(cli("validate --config \"" + (dir / "missing.ini").string() + "\"", dir) == 1);
    fs::remove_all(dir);
}

TEST_CASE("analyze --useful without a registry fails") {
    const fs::path dir = scratch("useful");
    {
        std::ofstream j(dir / "journal.tsv");
    }
    CHECK(cli("analyze --journal \"" + (dir / "journal.tsv").string() + "\" --useful --out-dir \"" +
                     (dir / "out").string() + "\"",
                 dir) == 1);
    CHECK(slurp(dir / "stderr.txt").find("--registry") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("analyze reports journal parse errors with a line number") {
    const fs::path dir = scratch("badjournal");
    {
        std::ofstream j(dir / "journal.tsv");
        j << "0\tSCENARIO_EVENT\t-\t-\t-\t-\t-\t-\thorizon\nnot a journal line\n";
    }
    CHECK(cli("analyze --journal \"" + (dir / "journal.tsv").string() + "\" --out-dir \"" +
                     (dir / "out").string() + "\"",
                 dir) == 1);
    CHECK(slurp(dir / "stderr.txt").find("line 2") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("malformed ensemble header names the header line") {
    const fs::path dir = scratch("header");
    {
        std::ofstream e(dir / "ens.txt");
        e << "beta=5.2 cols=X,l(0.1) thetas=0.1\n0.5 0.1\n";
    }
    CHECK(cli("ensemble --ensemble \"" + (dir / "ens.txt").string() + "\"", dir) == 1);
    const std::string err = slurp(dir / "stderr.txt");
    CHECK(err.find("line 1") != std::string::npos);
    CHECK(err.find("header") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("all-zero log-weights give zero quotients and zero fits") {
    const fs::path dir = scratch("flat");
    Ensemble e;
    e.beta = 5.2;
    RandomStream rng(3, "cli-flat");
    for (int i = 0; i < 5000; ++i) e.values.push_back(rng.normal());
    e.thetas = {-0.01, -0.02, -0.03};
    e.logweights.assign(3, std::vector<double>(e.values.size(), 0.0));
    {
        std::ofstream out(dir / "ens.txt");
        write_ensemble(out, e);
    }
    REQUIRE(cli("ensemble --ensemble \"" + (dir / "ens.txt").string() + "\" --out-dir \"" + (dir / "o").string() +
                       "\"",
                   dir) == 0);
    const auto q = csv_rows(slurp(dir / "o" / "quotients.csv"));
    REQUIRE(q.size() == 4);
    for (std::size_t i = 1; i < q.size(); ++i) {
        CHECK(std::stod(q[i][1]) == 0.0);
        CHECK(std::stod(q[i][2]) == 0.0);
    }
    const auto f = csv_rows(slurp(dir / "o" / "fit.csv"));
    REQUIRE(f.size() == 3);
    for (std::size_t i = 1; i < f.size(); ++i) {
        CHECK(std::stod(f[i][1]) == 0.0);
        CHECK(std::stod(f[i][2]) == 0.0);
    }
    fs::remove_all(dir);
}

TEST_CASE("ensemble subcommand recovers the constructed derivative") {
    // l = theta x^4 on standard normal data: dB4/dtheta at 0 is 96 - 72 = 24.
    const fs::path dir = scratch("slope");
    const std::vector<double> thetas = {-0.0005, -0.001, -0.0015, -0.002, -0.0025};
    RandomStream rng(2024, "cli-slope");
    const Ensemble e = synthetic_tilted_ensemble(200000, thetas, 4, rng, 5.2);
    {
        std::ofstream out(dir / "ens.txt");
        write_ensemble(out, e);
    }
    REQUIRE(cli("ensemble --ensemble \"" + (dir / "ens.txt").string() + "\" --fit linear --out-dir \"" +
                       (dir / "o").string() + "\"",
                   dir) == 0);
    const auto f = csv_rows(slurp(dir / "o" / "fit.csv"));
    REQUIRE(f.size() == 2);
    CHECK(f[1][0] == "linear");
    const double a = std::stod(f[1][1]), da = std::stod(f[1][2]);
    CAPTURE(a);
    CAPTURE(da);
    CHECK(da > 0.0);
    CHECK(std::abs(a - 24.0) < 2.0 * da);
    fs::remove_all(dir);
}

}
