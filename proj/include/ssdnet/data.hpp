#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssdnet/ssm.hpp"

namespace ssdnet {

enum class Granularity { minutes30, hour1, day1 };

std::string to_string(Granularity g);
Granularity parse_granularity(std::string_view text);
std::int64_t granularity_seconds(Granularity g);
std::size_t steps_per_day(Granularity g);

/// Seconds since the Unix epoch (UTC) from "YYYY-MM-DD[THH:MM[:SS]][Z]".
std::int64_t parse_timestamp(std::string_view text);
/// "YYYY-MM-DDTHH:MM:SS".
std::string format_timestamp(std::int64_t seconds);

struct Series {
    std::string id;
    std::vector<std::int64_t> timestamps;
    std::vector<double> values;
    /// Row-major [length, n_covariates].
    std::vector<double> covariates;
    /// Ground-truth components, present only for synthetic data.
    std::vector<double> truth_trend;
    std::vector<double> truth_seasonal;
    std::vector<double> truth_noise;

    std::size_t length() const { return values.size(); }
    bool has_truth() const { return !truth_trend.empty(); }
};

struct TimeSeriesTable {
    Granularity granularity = Granularity::hour1;
    std::vector<std::string> covariate_names;
    std::vector<Series> series;

    std::size_t n_covariates() const { return covariate_names.size(); }
    std::size_t find_series(std::string_view id) const;
};

/// Columns: timestamp, series_id, value, then numeric covariates.
/// Columns named truth_trend / truth_seasonal / truth_noise are read as
/// ground truth rather than covariates.
TimeSeriesTable load_csv(const std::filesystem::path& path);
void write_csv(const TimeSeriesTable& table, const std::filesystem::path& path);

struct NormalizationStats {
    double mean = 0.0;
    double std = 1.0;

    double normalize(double v) const { return (v - mean) / std; }
    double denormalize(double z) const { return z * std + mean; }
};

/// Per-series mean and population standard deviation; constant series throw.
std::vector<NormalizationStats> fit_normalization(const TimeSeriesTable& table);
TimeSeriesTable apply_normalization(const TimeSeriesTable& table, std::span<const NormalizationStats> stats);

struct NormalizedTable {
    TimeSeriesTable table;
    std::vector<NormalizationStats> stats;
};

/// Fits statistics on `table` itself and returns the z-scored copy.
NormalizedTable normalize(const TimeSeriesTable& table);
std::vector<double> denormalize(std::span<const double> values, const NormalizationStats& stats);

/// Maps a normalised forecast back to original units: the mean is added to
/// the trend, trend and seasonality are scaled by std, variance by std^2.
ForecastPath denormalize_components(const ForecastPath& path, const NormalizationStats& stats);

enum class CalendarFeature { month, day_of_week, hour_of_day, minute_of_hour, age };

std::string to_string(CalendarFeature f);
CalendarFeature parse_calendar_feature(std::string_view name);
/// Named feature sets: sanyo, hanergy, solar, electricity, exchange, none.
std::vector<CalendarFeature> calendar_profile(std::string_view name);

/// Each feature scaled to [-0.5, 0.5] by (v - min) / (max - min) - 0.5.
/// "age" is the position within a series of the given length.
std::vector<double> calendar_features(std::int64_t timestamp, std::size_t position, std::size_t length,
                                      std::span<const CalendarFeature> features);

/// Appends one covariate column per calendar feature ("cal_<name>").
TimeSeriesTable with_calendar_features(const TimeSeriesTable& table, std::span<const CalendarFeature> features);

/// One (conditioning window, horizon) example. Position t in [0, T_l + T_h)
/// of the joint sequence carries lagged[t] = y at step start + t - 1.
struct WindowSample {
    std::size_t series = 0;
    std::size_t start = 0;
    std::vector<double> inputs;
    std::vector<double> targets;
    std::vector<double> lagged;
    /// Row-major [T_l + T_h, n_features].
    std::vector<double> covariates;
    std::vector<std::int64_t> timestamps;
    std::size_t n_features = 0;

    std::size_t input_len() const { return inputs.size(); }
    std::size_t horizon() const { return targets.size(); }
};

/// Sliding windows over whole series: floor((L - 1 - T_l - T_h) / stride) + 1
/// per series of length L. Short series are skipped; no windows at all throws.
std::vector<WindowSample> make_windows(const TimeSeriesTable& table, std::size_t input_len, std::size_t horizon,
                                       std::size_t stride);

/// Windows whose horizons start at horizon_begin, horizon_begin + stride, ...
/// and end at or before horizon_end; inputs may reach back before
/// horizon_begin.
std::vector<WindowSample> make_windows_in_range(const TimeSeriesTable& table, std::size_t input_len,
                                                std::size_t horizon, std::size_t stride, std::size_t horizon_begin,
                                                std::size_t horizon_end);

struct SplitBounds {
    std::size_t train_end = 0;
    std::size_t val_end = 0;
    std::size_t length = 0;
};

struct ChronoSplit {
    TimeSeriesTable train;
    TimeSeriesTable val;
    TimeSeriesTable test;
    std::vector<SplitBounds> bounds;
};

/// Test is the final `test_steps` of each series, validation the
/// `val_steps` just before it, training everything earlier.
ChronoSplit chrono_split(const TimeSeriesTable& table, std::size_t val_steps, std::size_t test_steps);

/// Steps [begin, end) of every series.
TimeSeriesTable slice_table(const TimeSeriesTable& table, std::size_t begin, std::size_t end);

enum class TrendKind { none, linear, random_walk };

std::string to_string(TrendKind k);
TrendKind parse_trend_kind(std::string_view text);

struct SynthConfig {
    std::size_t n_series = 1;
    std::size_t length = 2400;
    int period = 24;
    TrendKind trend = TrendKind::random_walk;
    double trend_intercept = 0.0;
    /// Per-step slope for linear trends.
    double trend_slope = 0.01;
    /// Per-step innovation std for random-walk trends.
    double trend_step_std = 0.01;
    double amplitude = 1.0;
    double noise_std = 0.1;
    std::uint64_t seed = 7;
    Granularity granularity = Granularity::hour1;
    std::int64_t start_timestamp = 1262304000;  // 2010-01-01T00:00:00
    bool random_phase = true;
};

/// value = trend + amplitude * sin(2 pi t / s + phase) + noise, with the
/// three components kept as ground-truth columns.
TimeSeriesTable synth_generate(const SynthConfig& config);

/// Steps the persistence baseline repeats: one day, or the last 20 steps for
/// daily data.
std::size_t persistence_span(Granularity g, std::size_t steps_per_day);

/// The last `span` inputs, tiled or truncated to the horizon.
std::vector<double> persistence_forecast(const WindowSample& window, std::size_t span);

}  // namespace ssdnet
