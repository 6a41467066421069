#pragma once

#include <map>
#include <span>
#include <string>

#include "json.hpp"

#include "ssdnet/autodiff.hpp"
#include "ssdnet/ssm.hpp"

namespace ssdnet {

struct LossConfig {
    /// Weight of the Gaussian NLL term relative to the MAE term.
    double a = 0.5;
};

struct LossTerms {
    double nll = 0.0;
    double mae = 0.0;
    double total = 0.0;
};

/// a * NLL + MAE over one horizon, where
/// NLL = (T log 2pi + sum log var + sum (y - mean)^2 / var) / (2T).
LossTerms composite_loss_terms(std::span<const double> means, std::span<const double> variances,
                               std::span<const double> targets, const LossConfig& config);
double composite_loss(std::span<const double> means, std::span<const double> variances,
                      std::span<const double> targets, const LossConfig& config);

/// Differentiable form averaged over every entry (batch and horizon).
Var composite_loss(Var means, Var variances, Var targets, const LossConfig& config);

/// Pinball loss P_rho(y, yhat).
double pinball(double y, double yhat, double rho);

/// 2 * sum P_rho(y, yhat) / sum |y|.
double quantile_loss(std::span<const double> targets, std::span<const double> predictions, double rho);

struct SeriesMetrics {
    double rho50 = 0.0;
    double rho90 = 0.0;
    double mae = 0.0;
};

struct MetricsReport {
    double rho50 = 0.0;
    double rho90 = 0.0;
    double mae = 0.0;
    std::map<std::string, SeriesMetrics> per_series;

    /// Flat object: rho50, rho90, mae, then "series.<id>.<metric>" entries.
    nlohmann::json to_json() const;
};

/// Aggregates quantile losses over many horizons; the ratio is taken over
/// the pooled sums, not averaged per window.
class MetricsAccumulator {
public:
    void add(std::span<const double> targets, std::span<const double> q50, std::span<const double> q90,
             const std::string& series = "");
    void add(const ForecastPath& path, std::span<const double> targets, const std::string& series = "");
    MetricsReport report() const;
    std::size_t count() const { return total_.count; }

private:
    struct Sums {
        double p50 = 0.0;
        double p90 = 0.0;
        double abs_err = 0.0;
        double abs_y = 0.0;
        std::size_t count = 0;
    };
    static SeriesMetrics finish(const Sums& s);

    Sums total_;
    std::map<std::string, Sums> per_series_;
};

/// Metrics of one forecast path against aligned targets (original units).
MetricsReport evaluate_forecast(const ForecastPath& path, std::span<const double> targets);

}  // namespace ssdnet
