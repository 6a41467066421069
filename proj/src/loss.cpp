#include "ssdnet/loss.hpp"

#include <cmath>
#include <numbers>

#include "ssdnet/errors.hpp"

namespace ssdnet {

namespace {

void check_config(const LossConfig& config) {
    if (!(config.a >= 0.0)) throw ConfigError("loss weight a must be >= 0");
}

}  // namespace

LossTerms composite_loss_terms(std::span<const double> means, std::span<const double> variances,
                               std::span<const double> targets, const LossConfig& config) {
    check_config(config);
    if (means.size() != variances.size() || means.size() != targets.size() || means.empty()) {
        throw ContractError("composite_loss: length mismatch");
    }
    const double n = static_cast<double>(means.size());
    double log_var = 0.0, scaled_sq = 0.0, abs_err = 0.0;
    for (std::size_t t = 0; t < means.size(); ++t) {
        if (!(variances[t] > 0.0)) throw ContractError("composite_loss: variance must be positive");
        const double r = targets[t] - means[t];
        log_var += std::log(variances[t]);
        scaled_sq += r * r / variances[t];
        abs_err += std::fabs(r);
    }
    LossTerms terms;
    terms.nll = (n * std::log(2.0 * std::numbers::pi) + log_var + scaled_sq) / (2.0 * n);
    terms.mae = abs_err / n;
    terms.total = config.a * terms.nll + terms.mae;
    return terms;
}

double composite_loss(std::span<const double> means, std::span<const double> variances,
                      std::span<const double> targets, const LossConfig& config) {
    return composite_loss_terms(means, variances, targets, config).total;
}

Var composite_loss(Var means, Var variances, Var targets, const LossConfig& config) {
    check_config(config);
    if (means.shape() != variances.shape() || means.shape() != targets.shape()) {
        throw ShapeError("composite_loss: means " + shape_str(means.shape()) + ", variances " +
                         shape_str(variances.shape()) + ", targets " + shape_str(targets.shape()));
    }
    Var resid = sub(targets, means);
    Var mae = mean(abs(resid));
    if (config.a == 0.0) return mae;
    Var log_term = mean(log(variances));
    Var sq_term = mean(div(square(resid), variances));
    Var nll = affine(add(log_term, sq_term), 0.5, 0.5 * std::log(2.0 * std::numbers::pi));
    return add(affine(nll, config.a), mae);
}

double pinball(double y, double yhat, double rho) {
    return y > yhat ? rho * (y - yhat) : (1.0 - rho) * (yhat - y);
}

double quantile_loss(std::span<const double> targets, std::span<const double> predictions, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw ContractError("quantile level must lie in (0, 1)");
    if (targets.size() != predictions.size()) throw ContractError("quantile_loss: length mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        num += pinball(targets[t], predictions[t], rho);
        den += std::fabs(targets[t]);
    }
    if (den == 0.0) throw DomainError("quantile_loss: sum of |targets| is zero");
    return 2.0 * num / den;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    j["rho50"] = rho50;
    j["rho90"] = rho90;
    j["mae"] = mae;
    for (const auto& [id, m] : per_series) {
        j["series." + id + ".rho50"] = m.rho50;
        j["series." + id + ".rho90"] = m.rho90;
        j["series." + id + ".mae"] = m.mae;
    }
    return j;
}

void MetricsAccumulator::add(std::span<const double> targets, std::span<const double> q50,
                             std::span<const double> q90, const std::string& series) {
    if (targets.size() != q50.size() || targets.size() != q90.size()) {
        throw ContractError("metrics: forecast and target lengths differ");
    }
    Sums& s = per_series_[series];
    for (std::size_t t = 0; t < targets.size(); ++t) {
        for (Sums* acc : {&total_, &s}) {
            acc->p50 += pinball(targets[t], q50[t], 0.5);
            acc->p90 += pinball(targets[t], q90[t], 0.9);
            acc->abs_err += std::fabs(targets[t] - q50[t]);
            acc->abs_y += std::fabs(targets[t]);
            acc->count += 1;
        }
    }
}

void MetricsAccumulator::add(const ForecastPath& path, std::span<const double> targets, const std::string& series) {
    add(targets, path.q50, path.q90, series);
}

SeriesMetrics MetricsAccumulator::finish(const Sums& s) {
    if (s.count == 0) throw ContractError("metrics over an empty set");
    if (s.abs_y == 0.0) throw DomainError("metrics: sum of |targets| is zero");
    return {2.0 * s.p50 / s.abs_y, 2.0 * s.p90 / s.abs_y, s.abs_err / static_cast<double>(s.count)};
}

MetricsReport MetricsAccumulator::report() const {
    const SeriesMetrics all = finish(total_);
    MetricsReport r{all.rho50, all.rho90, all.mae, {}};
    if (per_series_.size() > 1 || !per_series_.contains("")) {
        for (const auto& [id, sums] : per_series_) r.per_series[id] = finish(sums);
    }
    return r;
}

MetricsReport evaluate_forecast(const ForecastPath& path, std::span<const double> targets) {
    if (path.size() != targets.size()) throw ContractError("evaluate_forecast: path and targets differ in length");
    MetricsAccumulator acc;
    acc.add(path, targets);
    return acc.report();
}

}  // namespace ssdnet
