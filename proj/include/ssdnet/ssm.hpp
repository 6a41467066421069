#pragma once

// Fixed-form state-space decoder.
//
// The state holds the trend in slot 0 and the s-1 most recent seasonal
// values in slots 1..s-1 (slot 1 is the current seasonal value). The
// transition matrix and emission vector never change after construction.

#include <cstddef>
#include <span>
#include <vector>

namespace ssdnet {

class TransitionSystem {
public:
    int period() const { return period_; }
    std::size_t size() const { return static_cast<std::size_t>(period_); }
    double gamma(std::size_t row, std::size_t col) const { return gamma_[row * size() + col]; }
    /// Row-major s x s transition matrix.
    const std::vector<double>& gamma() const { return gamma_; }
    const std::vector<double>& z() const { return z_; }

private:
    friend TransitionSystem build_transition_system(int period);
    int period_ = 0;
    std::vector<double> gamma_;
    std::vector<double> z_;
};

/// Random-walk trend plus dummy seasonality of the given period (>= 2).
TransitionSystem build_transition_system(int period);

struct SSMState {
    std::vector<double> alpha;

    double trend() const { return alpha.at(0); }
    double seasonal() const { return alpha.at(1); }
};

struct Innovation {
    std::vector<double> c;
};

struct StepDistribution {
    double mean = 0.0;
    double variance = 0.0;
    double trend = 0.0;
    double seasonality = 0.0;
};

/// Per-horizon-step forecast distribution and its decomposition.
struct ForecastPath {
    std::vector<double> mean;
    std::vector<double> variance;
    std::vector<double> trend;
    std::vector<double> seasonality;
    std::vector<double> q50;
    std::vector<double> q90;

    std::size_t size() const { return mean.size(); }
    StepDistribution step(std::size_t t) const { return {mean[t], variance[t], trend[t], seasonality[t]}; }
    /// Recomputes q50/q90 from mean and variance.
    void fill_quantiles();
};

/// Affine map latent -> outputs with weight laid out [in, out].
struct LinearHead {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weight;
    std::vector<double> bias;

    std::vector<double> apply(std::span<const double> latent) const;
};

/// HardSigmoid(x) - 0.5: -0.5 for x <= -3, +0.5 for x >= 3, x/6 between.
double centered_hard_sigmoid(double x);
double softplus(double x);

/// c_t from a latent: one bounded entry per state slot (head.out == s).
Innovation innovation_head(std::span<const double> latent, const LinearHead& head);
/// Strictly positive variance from a latent (head.out == 1).
double variance_head(std::span<const double> latent, const LinearHead& head);
/// Initial state alpha_0 with entries in [-0.5, 0.5] (head.out == s).
SSMState init_state_head(std::span<const double> latent, const LinearHead& head);

/// alpha' = Gamma alpha + c, evaluated through the trend / dummy-seasonal
/// recurrences rather than a dense product.
SSMState ssm_step(const SSMState& state, const Innovation& c, const TransitionSystem& sys);

ForecastPath ssm_unroll(const SSMState& alpha0, std::span<const Innovation> innovations,
                        std::span<const double> variances, const TransitionSystem& sys);

struct StateBounds {
    double trend = 0.0;
    double seasonality = 0.0;
};

/// Magnitude bounds on trend and seasonality after t steps:
/// ((t + 1) / 2, (s - 1 + t) / 2).
StateBounds state_bounds(int t, int period);

/// Inverse standard normal CDF by bisection on the erf-based CDF.
double standard_normal_quantile(double rho);
/// mean + sqrt(variance) * Phi^-1(rho).
double gaussian_quantile(double mean, double variance, double rho);

}  // namespace ssdnet
