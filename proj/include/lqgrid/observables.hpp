#pragma once

// Reweighting, Binder cumulant, jackknife errors and the fits used to turn
// difference quotients into a derivative at theta = 0.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lqgrid/sim_core.hpp"

namespace lqgrid {

struct Estimate {
    double value = 0.0;
    double error = 0.0;
};

/// Pairwise (cascade) summation; the summation order every reduction here uses.
double pairwise_sum(std::span<const double> xs);

/// Normalized weights exp(l_i - max l) / sum; throws on empty or non-finite input.
std::vector<double> normalized_weights(std::span<const double> logweights);

/// sum v_i exp(l_i - l_max) / sum exp(l_i - l_max).
double reweighted_expectation(std::span<const double> values, std::span<const double> logweights);

/// mu4 / mu2^2 with central moments about the reweighted mean.
/// Throws std::domain_error when the reweighted variance is zero.
double binder_cumulant(std::span<const double> values, std::span<const double> logweights);

using Statistic = std::function<double(std::span<const double> values, std::span<const double> logweights)>;

constexpr std::size_t kDefaultBlockSize = 50;

/// Number of jackknife blocks; a trailing remainder joins the last block.
std::size_t block_count(std::size_t n, std::size_t block_size);

/// Delete-one-block jackknife of an arbitrary statistic. The estimate is the
/// statistic on the full data. Throws std::invalid_argument with < 2 blocks.
Estimate jackknife(const Statistic& statistic, std::span<const double> values, std::span<const double> logweights,
                   std::size_t block_size = kDefaultBlockSize);

/// Same as jackknife(reweighted_expectation, ...) in O(n).
Estimate jackknife_reweighted_mean(std::span<const double> values, std::span<const double> logweights,
                                   std::size_t block_size = kDefaultBlockSize);

/// Same as jackknife(binder_cumulant, ...) in O(n).
Estimate jackknife_binder(std::span<const double> values, std::span<const double> logweights,
                          std::size_t block_size = kDefaultBlockSize);

/// Measurements X with log-weight columns l(theta_k); l(0) is identically 0.
struct Ensemble {
    double beta = 0.0;
    std::vector<double> values;
    std::vector<double> thetas;
    /// logweights[k][i] = l_i(thetas[k]).
    std::vector<std::vector<double>> logweights;

    /// Throws std::invalid_argument on shape errors, non-finite data or a
    /// nonzero theta = 0 column.
    void validate() const;
    /// The column for theta; theta = 0 yields zeros when not stored.
    std::vector<double> column(double theta) const;
};

struct QuotientPoint {
    double theta = 0.0;
    double quotient = 0.0;
    double error = 0.0;
};

/// (B4(theta) - B4(0)) / theta per grid point. Errors come from a jackknife of
/// the per-block difference, one block partition shared by all columns.
std::vector<QuotientPoint> b4_difference_quotient(const Ensemble& ensemble, std::span<const double> theta_grid,
                                                  std::size_t block_size = kDefaultBlockSize);

struct FitPoint {
    double theta = 0.0;
    double y = 0.0;
    double sigma = 1.0;
};

struct LinearFit {
    Estimate intercept;
    Estimate slope;
    double chi2 = 0.0;
    int dof = 0;
    std::optional<double> chi2_per_dof() const;
};

struct ConstantFit {
    Estimate value;
    double chi2 = 0.0;
    int dof = 0;
    std::optional<double> chi2_per_dof() const;
};

struct FitResult {
    std::optional<LinearFit> linear;
    ConstantFit constant;
};

class RegressionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Weighted least squares y = a + b theta with weights 1/sigma^2.
LinearFit fit_linear(std::span<const FitPoint> points);
ConstantFit fit_constant(std::span<const FitPoint> points);
/// Constant fit always; linear fit when at least two points are given.
FitResult extrapolate_mu2(std::span<const FitPoint> points);

/// Ratio of the two derivatives with independent first-order propagation.
Estimate curvature(Estimate db4_dmu2, Estimate db4_dam);

/// 1 + sum_n c_n x^(2n), n starting at 1.
double critical_mass_ratio(std::span<const double> coeffs, double mu_over_pi_t);

class EnsembleError : public std::runtime_error {
public:
    EnsembleError(std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

Ensemble parse_ensemble(std::istream& in);
Ensemble read_ensemble_file(const std::string& path);
void write_ensemble(std::ostream& out, const Ensemble& ensemble);

/// x ~ N(0,1) with l_i(theta) = theta * x_i^power for every theta.
Ensemble synthetic_tilted_ensemble(std::size_t n, std::span<const double> thetas, int power, RandomStream& rng,
                                   double beta = 0.0);

}  // namespace lqgrid
