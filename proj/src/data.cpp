#include "ssdnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "ssdnet/errors.hpp"

namespace ssdnet {

namespace {

constexpr const char* kTruthTrend = "truth_trend";
constexpr const char* kTruthSeasonal = "truth_seasonal";
constexpr const char* kTruthNoise = "truth_noise";

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t comma = line.find(',', pos);
        out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

int parse_int(std::string_view s, std::string_view whole) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw IngestError("malformed timestamp '" + std::string(whole) + "'");
    }
    return v;
}

}  // namespace

std::string to_string(Granularity g) {
    switch (g) {
        case Granularity::minutes30:
            return "30min";
        case Granularity::hour1:
            return "1h";
        case Granularity::day1:
            return "1day";
    }
    return "?";
}

Granularity parse_granularity(std::string_view text) {
    if (text == "30min") return Granularity::minutes30;
    if (text == "1h") return Granularity::hour1;
    if (text == "1day") return Granularity::day1;
    throw ConfigError("unknown granularity '" + std::string(text) + "' (expected 30min, 1h or 1day)");
}

std::int64_t granularity_seconds(Granularity g) {
    switch (g) {
        case Granularity::minutes30:
            return 1800;
        case Granularity::hour1:
            return 3600;
        case Granularity::day1:
            return 86400;
    }
    return 0;
}

std::size_t steps_per_day(Granularity g) { return static_cast<std::size_t>(86400 / granularity_seconds(g)); }

std::int64_t parse_timestamp(std::string_view text) {
    using namespace std::chrono;
    std::string_view s = trim(text);
    if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw IngestError("malformed timestamp '" + std::string(text) + "'");
    const int y = parse_int(s.substr(0, 4), text);
    const int mo = parse_int(s.substr(5, 2), text);
    const int d = parse_int(s.substr(8, 2), text);
    int hh = 0, mm = 0, ss = 0;
    if (s.size() > 10) {
        if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || s[13] != ':') {
            throw IngestError("malformed timestamp '" + std::string(text) + "'");
        }
        hh = parse_int(s.substr(11, 2), text);
        mm = parse_int(s.substr(14, 2), text);
        if (s.size() > 16) {
            if (s.size() != 19 || s[16] != ':') throw IngestError("malformed timestamp '" + std::string(text) + "'");
            ss = parse_int(s.substr(17, 2), text);
        }
    }
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || hh > 23 || mm > 59 || ss > 59 || hh < 0 || mm < 0 || ss < 0) {
        throw IngestError("invalid date in timestamp '" + std::string(text) + "'");
    }
    const std::int64_t days = sys_days{ymd}.time_since_epoch().count();
    return days * 86400 + hh * 3600 + mm * 60 + ss;
}

std::string format_timestamp(std::int64_t seconds) {
    using namespace std::chrono;
    std::int64_t days = seconds / 86400;
    std::int64_t rem = seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                  static_cast<int>((rem % 3600) / 60), static_cast<int>(rem % 60));
    return buf;
}

std::size_t TimeSeriesTable::find_series(std::string_view id) const {
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (series[i].id == id) return i;
    }
    throw ContractError("unknown series '" + std::string(id) + "'");
}

TimeSeriesTable load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IngestError(path.string() + ": empty file");
    const auto header = split_csv(line);
    if (header.size() < 3 || header[0] != "timestamp" || header[1] != "series_id" || header[2] != "value") {
        throw IngestError(path.string() + ": header must start with timestamp,series_id,value");
    }
    TimeSeriesTable table;
    std::vector<int> role(header.size(), -1);  // -1 covariate, 0..2 truth columns
    std::vector<std::size_t> cov_index(header.size(), 0);
    for (std::size_t c = 3; c < header.size(); ++c) {
        if (header[c] == kTruthTrend) {
            role[c] = 0;
        } else if (header[c] == kTruthSeasonal) {
            role[c] = 1;
        } else if (header[c] == kTruthNoise) {
            role[c] = 2;
        } else {
            cov_index[c] = table.covariate_names.size();
            table.covariate_names.emplace_back(header[c]);
        }
    }
    const bool has_truth = std::count(role.begin(), role.end(), 0) > 0;

    struct Row {
        std::int64_t ts;
        double value;
        std::vector<double> cov;
        double truth[3];
    };
    std::map<std::string, std::size_t> index;
    std::vector<std::string> order;
    std::vector<std::vector<Row>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) {
            throw IngestError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " columns, found " + std::to_string(cells.size()));
        }
        Row row{parse_timestamp(cells[0]), 0.0, std::vector<double>(table.n_covariates()), {0.0, 0.0, 0.0}};
        for (std::size_t c = 2; c < cells.size(); ++c) {
            double v = 0.0;
            if (!parse_double(cells[c], v)) {
                throw IngestError(path.string() + ":" + std::to_string(line_no) + ": non-numeric value '" +
                                  std::string(cells[c]) + "' in column " + std::string(header[c]));
            }
            if (c == 2) {
                row.value = v;
            } else if (role[c] >= 0) {
                row.truth[role[c]] = v;
            } else {
                row.cov[cov_index[c]] = v;
            }
        }
        const std::string id(cells[1]);
        auto [it, inserted] = index.try_emplace(id, rows.size());
        if (inserted) {
            order.push_back(id);
            rows.emplace_back();
        }
        rows[it->second].push_back(std::move(row));
    }
    if (rows.empty()) throw IngestError(path.string() + ": no data rows");

    std::int64_t spacing = 0;
    for (std::size_t s = 0; s < rows.size(); ++s) {
        auto& r = rows[s];
        std::stable_sort(r.begin(), r.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
        for (std::size_t i = 1; i < r.size(); ++i) {
            const std::int64_t d = r[i].ts - r[i - 1].ts;
            if (d == 0) {
                throw IngestError("series " + order[s] + ": duplicate timestamp " + format_timestamp(r[i].ts));
            }
            if (spacing == 0) {
                spacing = d;
            } else if (d != spacing) {
                throw IngestError("series " + order[s] + ": gap or irregular spacing before " +
                                  format_timestamp(r[i].ts) + " (expected " + std::to_string(spacing) +
                                  " s, found " + std::to_string(d) + " s)");
            }
        }
    }
    if (spacing == 1800) {
        table.granularity = Granularity::minutes30;
    } else if (spacing == 3600) {
        table.granularity = Granularity::hour1;
    } else if (spacing == 86400) {
        table.granularity = Granularity::day1;
    } else {
        throw IngestError(path.string() + ": unsupported spacing of " + std::to_string(spacing) + " s");
    }
    for (std::size_t s = 0; s < rows.size(); ++s) {
        Series series;
        series.id = order[s];
        for (const Row& r : rows[s]) {
            series.timestamps.push_back(r.ts);
            series.values.push_back(r.value);
            series.covariates.insert(series.covariates.end(), r.cov.begin(), r.cov.end());
            if (has_truth) {
                series.truth_trend.push_back(r.truth[0]);
                series.truth_seasonal.push_back(r.truth[1]);
                series.truth_noise.push_back(r.truth[2]);
            }
        }
        table.series.push_back(std::move(series));
    }
    return table;
}

void write_csv(const TimeSeriesTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const bool truth = !table.series.empty() && table.series.front().has_truth();
    out << "timestamp,series_id,value";
    for (const auto& name : table.covariate_names) out << ',' << name;
    if (truth) out << ',' << kTruthTrend << ',' << kTruthSeasonal << ',' << kTruthNoise;
    out << '\n';
    const std::size_t nc = table.n_covariates();
    for (const Series& s : table.series) {
        for (std::size_t t = 0; t < s.length(); ++t) {
            out << format_timestamp(s.timestamps[t]) << ',' << s.id << ',' << format_double(s.values[t]);
            for (std::size_t c = 0; c < nc; ++c) out << ',' << format_double(s.covariates[t * nc + c]);
            if (truth) {
                out << ',' << format_double(s.truth_trend[t]) << ',' << format_double(s.truth_seasonal[t]) << ','
                    << format_double(s.truth_noise[t]);
            }
            out << '\n';
        }
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<NormalizationStats> fit_normalization(const TimeSeriesTable& table) {
    std::vector<NormalizationStats> stats;
    for (const Series& s : table.series) {
        if (s.values.empty()) throw ContractError("series " + s.id + " is empty");
        const double n = static_cast<double>(s.length());
        double mean = 0.0;
        for (double v : s.values) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : s.values) var += (v - mean) * (v - mean);
        var /= n;
        if (!(var > 0.0)) throw ContractError("series " + s.id + " is constant over the fitting segment");
        stats.push_back({mean, std::sqrt(var)});
    }
    return stats;
}

TimeSeriesTable apply_normalization(const TimeSeriesTable& table, std::span<const NormalizationStats> stats) {
    if (stats.size() != table.series.size()) throw ContractError("one normalization entry per series required");
    TimeSeriesTable out = table;
    for (std::size_t i = 0; i < out.series.size(); ++i) {
        for (double& v : out.series[i].values) v = stats[i].normalize(v);
    }
    return out;
}

NormalizedTable normalize(const TimeSeriesTable& table) {
    auto stats = fit_normalization(table);
    return {apply_normalization(table, stats), stats};
}

std::vector<double> denormalize(std::span<const double> values, const NormalizationStats& stats) {
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = stats.denormalize(values[i]);
    return out;
}

ForecastPath denormalize_components(const ForecastPath& path, const NormalizationStats& stats) {
    ForecastPath out;
    const double var_scale = stats.std * stats.std;
    for (std::size_t t = 0; t < path.size(); ++t) {
        out.trend.push_back(path.trend[t] * stats.std + stats.mean);
        out.seasonality.push_back(path.seasonality[t] * stats.std);
        out.mean.push_back(out.trend.back() + out.seasonality.back());
        out.variance.push_back(path.variance[t] * var_scale);
    }
    out.fill_quantiles();
    return out;
}

std::string to_string(CalendarFeature f) {
    switch (f) {
        case CalendarFeature::month:
            return "month";
        case CalendarFeature::day_of_week:
            return "day_of_week";
        case CalendarFeature::hour_of_day:
            return "hour_of_day";
        case CalendarFeature::minute_of_hour:
            return "minute_of_hour";
        case CalendarFeature::age:
            return "age";
    }
    return "?";
}

CalendarFeature parse_calendar_feature(std::string_view name) {
    for (auto f : {CalendarFeature::month, CalendarFeature::day_of_week, CalendarFeature::hour_of_day,
                   CalendarFeature::minute_of_hour, CalendarFeature::age}) {
        if (to_string(f) == name) return f;
    }
    throw ConfigError("unknown calendar feature '" + std::string(name) + "'");
}

std::vector<CalendarFeature> calendar_profile(std::string_view name) {
    using F = CalendarFeature;
    if (name == "sanyo" || name == "hanergy") return {F::month, F::hour_of_day, F::minute_of_hour};
    if (name == "solar") return {F::month, F::hour_of_day, F::age};
    if (name == "electricity") return {F::month, F::day_of_week, F::hour_of_day, F::age};
    if (name == "exchange") return {F::month, F::day_of_week, F::age};
    if (name == "none") return {};
    throw ConfigError("unknown calendar profile '" + std::string(name) + "'");
}

std::vector<double> calendar_features(std::int64_t timestamp, std::size_t position, std::size_t length,
                                      std::span<const CalendarFeature> features) {
    using namespace std::chrono;
    std::int64_t days = timestamp / 86400;
    std::int64_t rem = timestamp % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    const sys_days date{std::chrono::days{days}};
    const year_month_day ymd{date};
    auto scale = [](double v, double lo, double hi) { return (v - lo) / (hi - lo) - 0.5; };
    std::vector<double> out;
    out.reserve(features.size());
    for (CalendarFeature f : features) {
        switch (f) {
            case CalendarFeature::month:
                out.push_back(scale(static_cast<unsigned>(ymd.month()), 1.0, 12.0));
                break;
            case CalendarFeature::day_of_week:
                out.push_back(scale(weekday{date}.iso_encoding(), 1.0, 7.0));
                break;
            case CalendarFeature::hour_of_day:
                out.push_back(scale(static_cast<double>(rem / 3600), 0.0, 23.0));
                break;
            case CalendarFeature::minute_of_hour:
                out.push_back(scale(static_cast<double>((rem % 3600) / 60), 0.0, 59.0));
                break;
            case CalendarFeature::age:
                out.push_back(length > 1 ? scale(static_cast<double>(position), 0.0, static_cast<double>(length - 1))
                                         : -0.5);
                break;
        }
    }
    return out;
}

TimeSeriesTable with_calendar_features(const TimeSeriesTable& table, std::span<const CalendarFeature> features) {
    if (features.empty()) return table;
    TimeSeriesTable out = table;
    for (CalendarFeature f : features) out.covariate_names.push_back("cal_" + to_string(f));
    const std::size_t old_nc = table.n_covariates(), nc = out.n_covariates();
    for (Series& s : out.series) {
        std::vector<double> cov;
        cov.reserve(s.length() * nc);
        for (std::size_t t = 0; t < s.length(); ++t) {
            cov.insert(cov.end(), s.covariates.begin() + t * old_nc, s.covariates.begin() + (t + 1) * old_nc);
            const auto cal = calendar_features(s.timestamps[t], t, s.length(), features);
            cov.insert(cov.end(), cal.begin(), cal.end());
        }
        s.covariates = std::move(cov);
    }
    return out;
}

namespace {

WindowSample build_window(const TimeSeriesTable& table, std::size_t series_index, std::size_t start,
                          std::size_t input_len, std::size_t horizon) {
    const Series& s = table.series[series_index];
    const std::size_t nc = table.n_covariates();
    const std::size_t total = input_len + horizon;
    WindowSample w;
    w.series = series_index;
    w.start = start;
    w.n_features = nc;
    w.inputs.assign(s.values.begin() + start, s.values.begin() + start + input_len);
    w.targets.assign(s.values.begin() + start + input_len, s.values.begin() + start + total);
    w.lagged.assign(s.values.begin() + start - 1, s.values.begin() + start - 1 + total);
    w.covariates.assign(s.covariates.begin() + start * nc, s.covariates.begin() + (start + total) * nc);
    w.timestamps.assign(s.timestamps.begin() + start, s.timestamps.begin() + start + total);
    return w;
}

}  // namespace

std::vector<WindowSample> make_windows_in_range(const TimeSeriesTable& table, std::size_t input_len,
                                                std::size_t horizon, std::size_t stride, std::size_t horizon_begin,
                                                std::size_t horizon_end) {
    if (input_len == 0 || horizon == 0 || stride == 0) throw ContractError("window extents must be positive");
    std::vector<WindowSample> windows;
    for (std::size_t i = 0; i < table.series.size(); ++i) {
        const std::size_t len = table.series[i].length();
        const std::size_t end = std::min(horizon_end, len);
        // The lagged channel needs one step before the first input.
        const std::size_t first = std::max(horizon_begin, input_len + 1);
        for (std::size_t h = first; h + horizon <= end; h += stride) {
            windows.push_back(build_window(table, i, h - input_len, input_len, horizon));
        }
    }
    if (windows.empty()) {
        throw ContractError("no windows of length " + std::to_string(input_len) + "+" + std::to_string(horizon) +
                            " fit the requested range");
    }
    return windows;
}

std::vector<WindowSample> make_windows(const TimeSeriesTable& table, std::size_t input_len, std::size_t horizon,
                                       std::size_t stride) {
    return make_windows_in_range(table, input_len, horizon, stride, input_len + 1,
                                 std::numeric_limits<std::size_t>::max());
}

TimeSeriesTable slice_table(const TimeSeriesTable& table, std::size_t begin, std::size_t end) {
    TimeSeriesTable out;
    out.granularity = table.granularity;
    out.covariate_names = table.covariate_names;
    const std::size_t nc = table.n_covariates();
    for (const Series& s : table.series) {
        const std::size_t e = std::min(end, s.length());
        const std::size_t b = std::min(begin, e);
        Series part;
        part.id = s.id;
        auto take = [b, e](const std::vector<double>& v) {
            return v.empty() ? std::vector<double>{} : std::vector<double>(v.begin() + b, v.begin() + e);
        };
        part.timestamps.assign(s.timestamps.begin() + b, s.timestamps.begin() + e);
        part.values = take(s.values);
        part.covariates.assign(s.covariates.begin() + b * nc, s.covariates.begin() + e * nc);
        part.truth_trend = take(s.truth_trend);
        part.truth_seasonal = take(s.truth_seasonal);
        part.truth_noise = take(s.truth_noise);
        out.series.push_back(std::move(part));
    }
    return out;
}

ChronoSplit chrono_split(const TimeSeriesTable& table, std::size_t val_steps, std::size_t test_steps) {
    ChronoSplit split;
    split.train.granularity = split.val.granularity = split.test.granularity = table.granularity;
    split.train.covariate_names = split.val.covariate_names = split.test.covariate_names = table.covariate_names;
    for (std::size_t i = 0; i < table.series.size(); ++i) {
        const Series& s = table.series[i];
        if (val_steps + test_steps >= s.length()) {
            throw ContractError("series " + s.id + " of length " + std::to_string(s.length()) +
                                " cannot hold validation + test spans of " + std::to_string(val_steps + test_steps));
        }
        const SplitBounds b{s.length() - val_steps - test_steps, s.length() - test_steps, s.length()};
        split.bounds.push_back(b);
        TimeSeriesTable one;
        one.granularity = table.granularity;
        one.covariate_names = table.covariate_names;
        one.series.push_back(s);
        split.train.series.push_back(slice_table(one, 0, b.train_end).series.front());
        split.val.series.push_back(slice_table(one, b.train_end, b.val_end).series.front());
        split.test.series.push_back(slice_table(one, b.val_end, b.length).series.front());
    }
    return split;
}

std::string to_string(TrendKind k) {
    switch (k) {
        case TrendKind::none:
            return "none";
        case TrendKind::linear:
            return "linear";
        case TrendKind::random_walk:
            return "random-walk";
    }
    return "?";
}

TrendKind parse_trend_kind(std::string_view text) {
    if (text == "none") return TrendKind::none;
    if (text == "linear") return TrendKind::linear;
    if (text == "random-walk") return TrendKind::random_walk;
    throw ConfigError("unknown trend kind '" + std::string(text) + "'");
}

TimeSeriesTable synth_generate(const SynthConfig& config) {
    if (config.n_series == 0 || config.length == 0 || config.period < 1) {
        throw ConfigError("synthetic config extents must be positive");
    }
    if (config.noise_std < 0.0 || config.trend_step_std < 0.0) throw ConfigError("standard deviations must be >= 0");
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    TimeSeriesTable table;
    table.granularity = config.granularity;
    const std::int64_t step = granularity_seconds(config.granularity);
    for (std::size_t i = 0; i < config.n_series; ++i) {
        Series s;
        s.id = "s" + std::to_string(i);
        const double phase = config.random_phase ? phase_dist(rng) : 0.0;
        double level = config.trend_intercept;
        for (std::size_t t = 0; t < config.length; ++t) {
            double trend = config.trend_intercept;
            switch (config.trend) {
                case TrendKind::none:
                    break;
                case TrendKind::linear:
                    trend = config.trend_intercept + config.trend_slope * static_cast<double>(t);
                    break;
                case TrendKind::random_walk:
                    if (t > 0) level += config.trend_step_std * unit(rng);
                    trend = level;
                    break;
            }
            const double seasonal =
                config.amplitude == 0.0
                    ? 0.0
                    : config.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t % static_cast<std::size_t>(config.period)) /
                                                      config.period +
                                                  phase);
            const double noise = config.noise_std == 0.0 ? 0.0 : config.noise_std * unit(rng);
            s.timestamps.push_back(config.start_timestamp + static_cast<std::int64_t>(t) * step);
            s.truth_trend.push_back(trend);
            s.truth_seasonal.push_back(seasonal);
            s.truth_noise.push_back(noise);
            s.values.push_back(trend + seasonal + noise);
        }
        table.series.push_back(std::move(s));
    }
    return table;
}

std::size_t persistence_span(Granularity g, std::size_t steps_per_day_value) {
    return g == Granularity::day1 ? 20 : steps_per_day_value;
}

std::vector<double> persistence_forecast(const WindowSample& window, std::size_t span) {
    const std::size_t n = window.inputs.size();
    if (span == 0 || span > n) {
        throw ContractError("persistence needs " + std::to_string(span) + " input steps, window has " +
                            std::to_string(n));
    }
    std::vector<double> out(window.horizon());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = window.inputs[n - span + t % span];
    return out;
}

}  // namespace ssdnet
