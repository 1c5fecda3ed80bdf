#include "lqgrid/observables.hpp"

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

void check_pair(std::span<const double> values, std::span<const double> logweights) {
    if (values.empty()) throw std::invalid_argument("empty input");
    if (values.size() != logweights.size())
        throw std::invalid_argument("values and log-weights differ in length (" + std::to_string(values.size()) +
                                    " vs " + std::to_string(logweights.size()) + ")");
}

// Unnormalized weights exp(l_i - l_max).
std::vector<double> shifted_weights(std::span<const double> logweights) {
    if (logweights.empty()) throw std::invalid_argument("empty log-weights");
    double lmax = -INFINITY;
    for (double l : logweights) {
        if (!std::isfinite(l)) throw std::invalid_argument("non-finite log-weight");
        lmax = std::max(lmax, l);
    }
    std::vector<double> w(logweights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(logweights[i] - lmax);
    return w;
}

struct Moments {
    double w = 0.0;
    double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;

    Moments& operator+=(const Moments& o) {
        w += o.w;
        s1 += o.s1;
        s2 += o.s2;
        s3 += o.s3;
        s4 += o.s4;
        return *this;
    }
    Moments operator-(const Moments& o) const { return {w - o.w, s1 - o.s1, s2 - o.s2, s3 - o.s3, s4 - o.s4}; }

    double mean_offset() const { return s1 / w; }

    double binder() const {
        const double m = s1 / w;
        const double r2 = s2 / w, r3 = s3 / w, r4 = s4 / w;
        const double mu2 = r2 - m * m;
        const double mu4 = r4 - 4.0 * m * r3 + 6.0 * m * m * r2 - 3.0 * m * m * m * m;
        if (!(mu2 > 0.0)) throw std::domain_error("zero reweighted variance in a jackknife replica");
        return mu4 / (mu2 * mu2);
    }
};

struct Blocks {
    std::vector<std::size_t> starts;  // starts.back() == n
};

Blocks make_blocks(std::size_t n, std::size_t block_size) {
    const std::size_t b = block_count(n, block_size);
    if (b < 2)
        throw std::invalid_argument("jackknife needs at least 2 blocks (n=" + std::to_string(n) +
                                    ", block size " + std::to_string(block_size) + ")");
    Blocks out;
    for (std::size_t k = 0; k < b; ++k) out.starts.push_back(k * block_size);
    out.starts.push_back(n);
    return out;
}

// Per-block weighted power sums of (x - pivot).
std::vector<Moments> block_moments(std::span<const double> values, std::span<const double> w, double pivot,
                                   const Blocks& blocks) {
    std::vector<Moments> out(blocks.starts.size() - 1);
    for (std::size_t b = 0; b + 1 < blocks.starts.size(); ++b) {
        Moments m;
        for (std::size_t i = blocks.starts[b]; i < blocks.starts[b + 1]; ++i) {
            const double d = values[i] - pivot;
            const double wd = w[i] * d;
            const double wd2 = wd * d;
            m.w += w[i];
            m.s1 += wd;
            m.s2 += wd2;
            m.s3 += wd2 * d;
            m.s4 += wd2 * d * d;
        }
        out[b] = m;
    }
    return out;
}

Moments total_of(const std::vector<Moments>& blocks) {
    std::vector<double> w, s1, s2, s3, s4;
    for (const Moments& m : blocks) {
        w.push_back(m.w);
        s1.push_back(m.s1);
        s2.push_back(m.s2);
        s3.push_back(m.s3);
        s4.push_back(m.s4);
    }
    return {pairwise_sum(w), pairwise_sum(s1), pairwise_sum(s2), pairwise_sum(s3), pairwise_sum(s4)};
}

double jackknife_error(std::span<const double> replicas) {
    const double b = static_cast<double>(replicas.size());
    const double mean = pairwise_sum(replicas) / b;
    std::vector<double> sq(replicas.size());
    for (std::size_t i = 0; i < replicas.size(); ++i) sq[i] = (replicas[i] - mean) * (replicas[i] - mean);
    return std::sqrt((b - 1.0) / b * pairwise_sum(sq));
}

// Leave-one-block-out Binder replicas for one log-weight column.
std::vector<double> binder_replicas(std::span<const double> values, std::span<const double> logweights,
                                    const Blocks& blocks) {
    const std::vector<double> w = shifted_weights(logweights);
    const double pivot = reweighted_expectation(values, logweights);
    const std::vector<Moments> per_block = block_moments(values, w, pivot, blocks);
    const Moments total = total_of(per_block);
    std::vector<double> out(per_block.size());
    for (std::size_t b = 0; b < per_block.size(); ++b) out[b] = (total - per_block[b]).binder();
    return out;
}

std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        const std::size_t start = i;
        while (i < s.size() && !(s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

}  // namespace

double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

std::vector<double> normalized_weights(std::span<const double> logweights) {
    std::vector<double> w = shifted_weights(logweights);
    const double total = pairwise_sum(w);
    for (double& x : w) x /= total;
    return w;
}

double reweighted_expectation(std::span<const double> values, std::span<const double> logweights) {
    check_pair(values, logweights);
    const std::vector<double> w = shifted_weights(logweights);
    std::vector<double> wv(values.size());
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = w[i] * values[i];
    return pairwise_sum(wv) / pairwise_sum(w);
}

double binder_cumulant(std::span<const double> values, std::span<const double> logweights) {
    check_pair(values, logweights);
    const std::vector<double> w = shifted_weights(logweights);
    const double total = pairwise_sum(w);
    std::vector<double> tmp(values.size());
    for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = w[i] * values[i];
    const double mean = pairwise_sum(tmp) / total;
    std::vector<double> t4(values.size());
    for (std::size_t i = 0; i < tmp.size(); ++i) {
        const double d = values[i] - mean;
        const double d2 = d * d;
        tmp[i] = w[i] * d2;
        t4[i] = w[i] * d2 * d2;
    }
    const double mu2 = pairwise_sum(tmp) / total;
    const double mu4 = pairwise_sum(t4) / total;
    if (!(mu2 > 0.0)) throw std::domain_error("binder cumulant of zero-variance input");
    return mu4 / (mu2 * mu2);
}

std::size_t block_count(std::size_t n, std::size_t block_size) {
    if (block_size == 0) throw std::invalid_argument("block size must be positive");
    return n / block_size;
}

Estimate jackknife(const Statistic& statistic, std::span<const double> values, std::span<const double> logweights,
                   std::size_t block_size) {
    check_pair(values, logweights);
    const Blocks blocks = make_blocks(values.size(), block_size);
    const std::size_t nb = blocks.starts.size() - 1;
    std::vector<double> replicas(nb);
    std::vector<double> v, l;
    v.reserve(values.size());
    l.reserve(values.size());
    for (std::size_t b = 0; b < nb; ++b) {
        v.clear();
        l.clear();
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i >= blocks.starts[b] && i < blocks.starts[b + 1]) continue;
            v.push_back(values[i]);
            l.push_back(logweights[i]);
        }
        replicas[b] = statistic(v, l);
    }
    return {statistic(values, logweights), jackknife_error(replicas)};
}

Estimate jackknife_reweighted_mean(std::span<const double> values, std::span<const double> logweights,
                                   std::size_t block_size) {
    check_pair(values, logweights);
    const Blocks blocks = make_blocks(values.size(), block_size);
    const double full = reweighted_expectation(values, logweights);
    const std::vector<double> w = shifted_weights(logweights);
    const std::vector<Moments> per_block = block_moments(values, w, full, blocks);
    const Moments total = total_of(per_block);
    std::vector<double> replicas(per_block.size());
    for (std::size_t b = 0; b < per_block.size(); ++b) replicas[b] = full + (total - per_block[b]).mean_offset();
    return {full, jackknife_error(replicas)};
}

Estimate jackknife_binder(std::span<const double> values, std::span<const double> logweights,
                          std::size_t block_size) {
    check_pair(values, logweights);
    const Blocks blocks = make_blocks(values.size(), block_size);
    const std::vector<double> replicas = binder_replicas(values, logweights, blocks);
    return {binder_cumulant(values, logweights), jackknife_error(replicas)};
}

// ---------------------------------------------------------------------------

void Ensemble::validate() const {
    if (values.size() < 2) throw std::invalid_argument("ensemble needs at least 2 configurations");
    if (logweights.size() != thetas.size())
        throw std::invalid_argument("ensemble has " + std::to_string(thetas.size()) + " thetas but " +
                                    std::to_string(logweights.size()) + " log-weight columns");
    for (double x : values)
        if (!std::isfinite(x)) throw std::invalid_argument("non-finite measurement in ensemble");
    for (std::size_t k = 0; k < thetas.size(); ++k) {
        if (!std::isfinite(thetas[k])) throw std::invalid_argument("non-finite theta");
        if (logweights[k].size() != values.size())
            throw std::invalid_argument("log-weight column " + std::to_string(k) + " has wrong length");
        for (double l : logweights[k]) {
            if (!std::isfinite(l)) throw std::invalid_argument("non-finite log-weight in column " + std::to_string(k));
            if (thetas[k] == 0.0 && l != 0.0) throw std::invalid_argument("log-weights at theta=0 must vanish");
        }
    }
}

std::vector<double> Ensemble::column(double theta) const {
    for (std::size_t k = 0; k < thetas.size(); ++k)
        if (thetas[k] == theta) return logweights[k];
    if (theta == 0.0) return std::vector<double>(values.size(), 0.0);
    throw std::invalid_argument("ensemble has no log-weight column for theta=" + format_double(theta));
}

std::vector<QuotientPoint> b4_difference_quotient(const Ensemble& ensemble, std::span<const double> theta_grid,
                                                  std::size_t block_size) {
    ensemble.validate();
    const Blocks blocks = make_blocks(ensemble.values.size(), block_size);
    const std::vector<double> zero(ensemble.values.size(), 0.0);
    const double b4_0 = binder_cumulant(ensemble.values, zero);
    const std::vector<double> base = binder_replicas(ensemble.values, zero, blocks);

    std::vector<QuotientPoint> out;
    out.reserve(theta_grid.size());
    std::vector<double> diff(base.size());
    for (double theta : theta_grid) {
        if (theta == 0.0) throw std::invalid_argument("theta grid must exclude 0");
        const std::vector<double> l = ensemble.column(theta);
        const double b4 = binder_cumulant(ensemble.values, l);
        const std::vector<double> rep = binder_replicas(ensemble.values, l, blocks);
        for (std::size_t b = 0; b < rep.size(); ++b) diff[b] = (rep[b] - base[b]) / theta;
        out.push_back({theta, (b4 - b4_0) / theta, jackknife_error(diff)});
    }
    return out;
}

// ---------------------------------------------------------------------------

std::optional<double> LinearFit::chi2_per_dof() const {
    if (dof <= 0) return std::nullopt;
    return chi2 / dof;
}

std::optional<double> ConstantFit::chi2_per_dof() const {
    if (dof <= 0) return std::nullopt;
    return chi2 / dof;
}

namespace {

std::vector<double> fit_weights(std::span<const FitPoint> points) {
    std::vector<double> w;
    for (const FitPoint& p : points) {
        if (!(p.sigma > 0.0) || !std::isfinite(p.sigma)) throw RegressionError("fit point sigma must be positive");
        if (!std::isfinite(p.theta) || !std::isfinite(p.y)) throw RegressionError("non-finite fit point");
        w.push_back(1.0 / (p.sigma * p.sigma));
    }
    return w;
}

}  // namespace

LinearFit fit_linear(std::span<const FitPoint> points) {
    if (points.size() < 2) throw RegressionError("linear fit needs at least 2 points");
    const std::vector<double> w = fit_weights(points);
    const std::size_t n = points.size();
    std::vector<double> tmp(n);
    const double s = pairwise_sum(w);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = w[i] * points[i].theta;
    const double xbar = pairwise_sum(tmp) / s;
    for (std::size_t i = 0; i < n; ++i) tmp[i] = w[i] * points[i].y;
    const double ybar = pairwise_sum(tmp) / s;
    std::vector<double> sxx(n), sxy(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = points[i].theta - xbar;
        sxx[i] = w[i] * dx * dx;
        sxy[i] = w[i] * dx * (points[i].y - ybar);
    }
    const double Sxx = pairwise_sum(sxx);
    if (!(Sxx > 0.0)) throw RegressionError("singular linear fit: all theta values are equal");
    LinearFit fit;
    const double b = pairwise_sum(sxy) / Sxx;
    const double a = ybar - b * xbar;
    fit.slope = {b, std::sqrt(1.0 / Sxx)};
    fit.intercept = {a, std::sqrt(1.0 / s + xbar * xbar / Sxx)};
    for (std::size_t i = 0; i < n; ++i) {
        const double r = points[i].y - (a + b * points[i].theta);
        tmp[i] = w[i] * r * r;
    }
    fit.chi2 = pairwise_sum(tmp);
    fit.dof = static_cast<int>(n) - 2;
    return fit;
}

ConstantFit fit_constant(std::span<const FitPoint> points) {
    if (points.empty()) throw RegressionError("constant fit needs at least 1 point");
    const std::vector<double> w = fit_weights(points);
    const std::size_t n = points.size();
    std::vector<double> tmp(n);
    const double s = pairwise_sum(w);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = w[i] * points[i].y;
    const double c = pairwise_sum(tmp) / s;
    ConstantFit fit;
    fit.value = {c, std::sqrt(1.0 / s)};
    for (std::size_t i = 0; i < n; ++i) tmp[i] = w[i] * (points[i].y - c) * (points[i].y - c);
    fit.chi2 = pairwise_sum(tmp);
    fit.dof = static_cast<int>(n) - 1;
    return fit;
}

FitResult extrapolate_mu2(std::span<const FitPoint> points) {
    FitResult r;
    r.constant = fit_constant(points);
    if (points.size() >= 2) r.linear = fit_linear(points);
    return r;
}

Estimate curvature(Estimate db4_dmu2, Estimate db4_dam) {
    if (db4_dam.value == 0.0) throw std::domain_error("curvature: dB4/dam is zero");
    const double r = db4_dmu2.value / db4_dam.value;
    const double e1 = db4_dmu2.error / db4_dam.value;
    const double e2 = db4_dmu2.value * db4_dam.error / (db4_dam.value * db4_dam.value);
    return {r, std::hypot(e1, e2)};
}

double critical_mass_ratio(std::span<const double> coeffs, double mu_over_pi_t) {
    const double x2 = mu_over_pi_t * mu_over_pi_t;
    double power = 1.0;
    double sum = 1.0;
    for (double c : coeffs) {
        power *= x2;
        sum += c * power;
    }
    return sum;
}

// ---------------------------------------------------------------------------

EnsembleError::EnsembleError(std::size_t line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

Ensemble parse_ensemble(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw EnsembleError(1, "missing header line");
    const auto tokens = split_ws(line);
    auto header_error = [&](const std::string& why) {
        return EnsembleError(1, "malformed header (" + why + "): expected "
                                "'beta=<value> columns=X,l(t1),...,l(tk) thetas=<t1,...,tk>'");
    };
    if (tokens.size() != 3) throw header_error("need 3 fields, got " + std::to_string(tokens.size()));
    auto value_of = [&](std::string_view tok, std::string_view key) {
        if (tok.substr(0, key.size()) != key) throw header_error("expected '" + std::string(key) + "'");
        return tok.substr(key.size());
    };
    Ensemble e;
    if (!parse_double(value_of(tokens[0], "beta="), e.beta)) throw header_error("bad beta");
    const auto columns = split(value_of(tokens[1], "columns="), ',');
    const auto theta_text = split(value_of(tokens[2], "thetas="), ',');
    for (std::string_view t : theta_text) {
        double theta = 0.0;
        if (!parse_double(t, theta)) throw header_error("bad theta '" + std::string(t) + "'");
        e.thetas.push_back(theta);
    }
    if (columns.empty() || columns[0] != "X") throw header_error("first column must be X");
    if (columns.size() != e.thetas.size() + 1)
        throw header_error(std::to_string(columns.size() - 1) + " log-weight columns for " +
                           std::to_string(e.thetas.size()) + " thetas");
    for (std::size_t k = 1; k < columns.size(); ++k) {
        std::string_view c = columns[k];
        double theta = 0.0;
        if (c.size() < 3 || c.substr(0, 2) != "l(" || c.back() != ')' || !parse_double(c.substr(2, c.size() - 3), theta))
            throw header_error("bad column name '" + std::string(c) + "'");
        if (theta != e.thetas[k - 1]) throw header_error("column '" + std::string(c) + "' does not match thetas");
    }

    e.logweights.assign(e.thetas.size(), {});
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto fields = split_ws(line);
        if (fields.empty()) continue;
        if (fields.size() != columns.size())
            throw EnsembleError(line_no, "expected " + std::to_string(columns.size()) + " values, got " +
                                             std::to_string(fields.size()));
        double x = 0.0;
        for (std::size_t k = 0; k < fields.size(); ++k) {
            if (!parse_double(fields[k], x) || !std::isfinite(x))
                throw EnsembleError(line_no, "bad number '" + std::string(fields[k]) + "'");
            if (k == 0) e.values.push_back(x);
            else e.logweights[k - 1].push_back(x);
        }
    }
    try {
        e.validate();
    } catch (const std::invalid_argument& ex) {
        throw EnsembleError(line_no, ex.what());
    }
    return e;
}

Ensemble read_ensemble_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open ensemble '" + path + "'");
    return parse_ensemble(in);
}

void write_ensemble(std::ostream& out, const Ensemble& e) {
    e.validate();
    char beta[64];
    std::snprintf(beta, sizeof beta, "%.6f", e.beta);
    out << "beta=" << beta << " columns=X";
    for (double t : e.thetas) out << ",l(" << format_double(t) << ')';
    out << " thetas=";
    for (std::size_t k = 0; k < e.thetas.size(); ++k) out << (k ? "," : "") << format_double(e.thetas[k]);
    out << '\n';
    for (std::size_t i = 0; i < e.values.size(); ++i) {
        out << format_double(e.values[i]);
        for (const auto& col : e.logweights) out << ' ' << format_double(col[i]);
        out << '\n';
    }
}

Ensemble synthetic_tilted_ensemble(std::size_t n, std::span<const double> thetas, int power, RandomStream& rng,
                                   double beta) {
    Ensemble e;
    e.beta = beta;
    e.thetas.assign(thetas.begin(), thetas.end());
    e.values.resize(n);
    for (double& x : e.values) x = rng.normal();
    for (double theta : thetas) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = theta * std::pow(e.values[i], power);
        e.logweights.push_back(std::move(col));
    }
    return e;
}

}  // namespace lqgrid
