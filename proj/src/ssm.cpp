#include "ssdnet/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ssdnet/errors.hpp"

namespace ssdnet {

TransitionSystem build_transition_system(int period) {
    if (period < 2) throw ConfigError("seasonality period must be >= 2, got " + std::to_string(period));
    TransitionSystem sys;
    sys.period_ = period;
    const std::size_t s = sys.size();
    sys.gamma_.assign(s * s, 0.0);
    sys.gamma_[0] = 1.0;
    for (std::size_t c = 1; c < s; ++c) sys.gamma_[s + c] = -1.0;
    for (std::size_t r = 2; r < s; ++r) sys.gamma_[r * s + (r - 1)] = 1.0;
    sys.z_.assign(s, 0.0);
    sys.z_[0] = 1.0;
    sys.z_[1] = 1.0;
    return sys;
}

void ForecastPath::fill_quantiles() {
    q50.resize(size());
    q90.resize(size());
    for (std::size_t t = 0; t < size(); ++t) {
        q50[t] = mean[t];
        q90[t] = gaussian_quantile(mean[t], variance[t], 0.9);
    }
}

std::vector<double> LinearHead::apply(std::span<const double> latent) const {
    if (latent.size() != in) {
        throw ContractError("head expects latent width " + std::to_string(in) + ", got " +
                            std::to_string(latent.size()));
    }
    for (double v : latent) {
        if (!std::isfinite(v)) throw NumericError("non-finite latent passed to head");
    }
    std::vector<double> y(bias);
    for (std::size_t i = 0; i < in; ++i)
        for (std::size_t j = 0; j < out; ++j) y[j] += latent[i] * weight[i * out + j];
    return y;
}

double centered_hard_sigmoid(double x) {
    if (x <= -3.0) return -0.5;
    if (x >= 3.0) return 0.5;
    return x / 6.0;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

Innovation innovation_head(std::span<const double> latent, const LinearHead& head) {
    std::vector<double> pre = head.apply(latent);
    for (double& v : pre) v = centered_hard_sigmoid(v);
    return Innovation{std::move(pre)};
}

double variance_head(std::span<const double> latent, const LinearHead& head) {
    if (head.out != 1) throw ContractError("variance head must have 1 output");
    return softplus(head.apply(latent)[0]);
}

SSMState init_state_head(std::span<const double> latent, const LinearHead& head) {
    std::vector<double> pre = head.apply(latent);
    for (double& v : pre) v = centered_hard_sigmoid(v);
    return SSMState{std::move(pre)};
}

SSMState ssm_step(const SSMState& state, const Innovation& c, const TransitionSystem& sys) {
    const std::size_t s = sys.size();
    if (state.alpha.size() != s || c.c.size() != s) {
        throw ContractError("ssm_step dimension mismatch: state " + std::to_string(state.alpha.size()) +
                            ", innovation " + std::to_string(c.c.size()) + ", period " + std::to_string(s));
    }
    const std::vector<double>& a = state.alpha;
    SSMState next{std::vector<double>(s)};
    next.alpha[0] = a[0] + c.c[0];
    double seasonal_sum = 0.0;
    for (std::size_t j = 1; j < s; ++j) seasonal_sum += a[j];
    next.alpha[1] = -seasonal_sum + c.c[1];
    for (std::size_t j = 2; j < s; ++j) next.alpha[j] = a[j - 1] + c.c[j];
    return next;
}

ForecastPath ssm_unroll(const SSMState& alpha0, std::span<const Innovation> innovations,
                        std::span<const double> variances, const TransitionSystem& sys) {
    if (innovations.size() != variances.size()) {
        throw ContractError("ssm_unroll: " + std::to_string(innovations.size()) + " innovations vs " +
                            std::to_string(variances.size()) + " variances");
    }
    ForecastPath path;
    SSMState state = alpha0;
    for (std::size_t t = 0; t < innovations.size(); ++t) {
        if (!(variances[t] > 0.0)) {
            throw ContractError("ssm_unroll: variance at step " + std::to_string(t + 1) + " is not positive");
        }
        state = ssm_step(state, innovations[t], sys);
        path.trend.push_back(state.trend());
        path.seasonality.push_back(state.seasonal());
        path.mean.push_back(state.trend() + state.seasonal());
        path.variance.push_back(variances[t]);
    }
    path.fill_quantiles();
    return path;
}

StateBounds state_bounds(int t, int period) {
    if (t < 0) throw ContractError("state_bounds: step index must be >= 0");
    return {(t + 1) * 0.5, (period - 1 + t) * 0.5};
}

double standard_normal_quantile(double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw ContractError("quantile level must lie in (0, 1)");
    if (rho == 0.5) return 0.0;
    auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    double lo = -40.0, hi = 40.0;
    // 200 halvings exhaust double precision well before the loop ends.
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (cdf(mid) < rho) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

double gaussian_quantile(double mean, double variance, double rho) {
    if (!(variance > 0.0)) throw ContractError("gaussian_quantile: variance must be positive");
    if (rho == 0.5) return mean;
    return mean + std::sqrt(variance) * standard_normal_quantile(rho);
}

}  // namespace ssdnet
