#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "ssdnet/data.hpp"
#include "ssdnet/errors.hpp"

using namespace ssdnet;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& text) {
    const fs::path p = fs::temp_directory_path() / ("ssdnet_test_" + name);
    std::ofstream(p) << text;
    return p;
}

template <class F>
std::string error_of(F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

// Enumerates every start position directly.
std::size_t count_windows(std::size_t len, std::size_t t_l, std::size_t t_h, std::size_t stride) {
    std::size_t n = 0;
    for (std::size_t h = t_l + 1; h + t_h <= len; h += stride) ++n;
    return n;
}

TimeSeriesTable ramp_table(std::size_t length) {
    SynthConfig cfg;
    cfg.length = length;
    cfg.trend = TrendKind::linear;
    cfg.trend_slope = 1.0;
    cfg.amplitude = 0.0;
    cfg.noise_std = 0.0;
    return synth_generate(cfg);
}

}  // namespace

TEST_CASE("timestamps") {
    CHECK(parse_timestamp("1970-01-01T00:00:00") == 0);
    CHECK(parse_timestamp("2010-01-01 00:00") == 1262304000);
    CHECK(parse_timestamp("2010-01-01T01:30:00Z") == 1262304000 + 5400);
    CHECK(parse_timestamp("2012-03-01") == 1330560000);
    CHECK(format_timestamp(1262304000 + 5400) == "2010-01-01T01:30:00");
    CHECK_THROWS_AS(parse_timestamp("2010-13-01"), IngestError);
    CHECK_THROWS_AS(parse_timestamp("yesterday"), IngestError);
}

TEST_CASE("csv ingestion groups series and detects granularity") {
    const auto p = write_temp("ok.csv",
                              "timestamp,series_id,value,temp\n"
                              "2020-01-01T01:00:00,b,2,0.5\n"
                              "2020-01-01T00:00:00,a,1,0.1\n"
                              "2020-01-01T00:00:00,b,3,0.4\n"
                              "2020-01-01T01:00:00,a,5,0.2\n");
    const TimeSeriesTable t = load_csv(p);
    CHECK(t.granularity == Granularity::hour1);
    REQUIRE(t.series.size() == 2);
    CHECK(t.series[0].id == "b");
    CHECK(t.series[0].values == std::vector<double>{3, 2});
    CHECK(t.series[1].covariates == std::vector<double>{0.1, 0.2});
    CHECK(t.covariate_names == std::vector<std::string>{"temp"});
    CHECK(!t.series[0].has_truth());
}

TEST_CASE("csv ingestion errors name the series and timestamp") {
    const auto dup = write_temp("dup.csv",
                                "timestamp,series_id,value\n"
                                "2020-01-01T00:00:00,a,1\n"
                                "2020-01-01T00:00:00,a,2\n");
    const std::string d = error_of([&] { load_csv(dup); });
    CHECK(d.find("series a") != std::string::npos);
    CHECK(d.find("duplicate timestamp 2020-01-01T00:00:00") != std::string::npos);
    const auto gap = write_temp("gap.csv",
                                "timestamp,series_id,value\n"
                                "2020-01-01T00:00:00,a,1\n"
                                "2020-01-01T01:00:00,a,1\n"
                                "2020-01-01T03:00:00,a,2\n");
    const std::string g = error_of([&] { load_csv(gap); });
    CHECK(g.find("series a") != std::string::npos);
    CHECK(g.find("2020-01-01T03:00:00") != std::string::npos);
    CHECK_THROWS_AS(load_csv(write_temp("hdr.csv", "time,id,value\n")), IngestError);
    CHECK_THROWS_AS(load_csv(write_temp("nan.csv", "timestamp,series_id,value\n2020-01-01,a,x\n")), IngestError);
    CHECK_THROWS_AS(load_csv(write_temp("odd.csv",
                                        "timestamp,series_id,value\n2020-01-01T00:00,a,1\n2020-01-01T00:07,a,1\n")),
                    IngestError);
    CHECK_THROWS_AS(load_csv(fs::temp_directory_path() / "ssdnet_missing.csv"), IoError);
}

TEST_CASE("synthetic data is deterministic and round-trips through csv") {
    SynthConfig cfg;
    cfg.n_series = 2;
    cfg.length = 100;
    const TimeSeriesTable a = synth_generate(cfg);
    const TimeSeriesTable b = synth_generate(cfg);
    CHECK(a.series[1].values == b.series[1].values);
    for (std::size_t t = 0; t < 100; ++t) {
        const Series& s = a.series[0];
        CHECK(s.values[t] == s.truth_trend[t] + s.truth_seasonal[t] + s.truth_noise[t]);
        if (t >= 24) CHECK(std::fabs(s.truth_seasonal[t] - s.truth_seasonal[t - 24]) < 1e-12);
    }
    const auto p = fs::temp_directory_path() / "ssdnet_test_synth.csv";
    write_csv(a, p);
    const TimeSeriesTable back = load_csv(p);
    CHECK(back.series.size() == 2);
    CHECK(back.series[0].values == a.series[0].values);
    CHECK(back.series[1].truth_seasonal == a.series[1].truth_seasonal);
    CHECK(back.series[0].timestamps == a.series[0].timestamps);
    cfg.seed = 8;
    CHECK(synth_generate(cfg).series[0].values != a.series[0].values);
}

TEST_CASE("normalization fits per series and inverts") {
    TimeSeriesTable t;
    Series s;
    s.id = "x";
    s.values = {1, 2, 3, 4};
    s.timestamps = {0, 3600, 7200, 10800};
    t.series.push_back(s);
    const NormalizedTable n = normalize(t);
    CHECK(n.stats[0].mean == 2.5);
    CHECK(n.stats[0].std == doctest::Approx(std::sqrt(1.25)));
    double mean = 0.0, sq = 0.0;
    for (double v : n.table.series[0].values) {
        mean += v / 4.0;
        sq += v * v / 4.0;
    }
    CHECK(std::fabs(mean) < 1e-15);
    CHECK(sq == doctest::Approx(1.0));
    const auto back = denormalize(n.table.series[0].values, n.stats[0]);
    for (std::size_t i = 0; i < 4; ++i) CHECK(back[i] == doctest::Approx(s.values[i]).epsilon(1e-15));
    t.series[0].values = {2, 2, 2, 2};
    CHECK(error_of([&] { fit_normalization(t); }).find("series x is constant") != std::string::npos);
}

TEST_CASE("denormalized components keep mean = trend + seasonality") {
    ForecastPath p;
    p.mean = {0.3};
    p.trend = {0.1};
    p.seasonality = {0.2};
    p.variance = {0.5};
    const ForecastPath d = denormalize_components(p, {10.0, 2.0});
    CHECK(d.trend[0] == doctest::Approx(10.2));
    CHECK(d.seasonality[0] == doctest::Approx(0.4));
    CHECK(d.mean[0] == d.trend[0] + d.seasonality[0]);
    CHECK(d.variance[0] == doctest::Approx(2.0));
}

TEST_CASE("calendar features") {
    const std::int64_t ts = parse_timestamp("2021-07-15T18:45:00");  // a Thursday
    using F = CalendarFeature;
    const std::vector<F> all{F::month, F::day_of_week, F::hour_of_day, F::minute_of_hour, F::age};
    const auto f = calendar_features(ts, 5, 11, all);
    CHECK(f[0] == doctest::Approx(6.0 / 11.0 - 0.5));
    CHECK(f[1] == doctest::Approx(3.0 / 6.0 - 0.5));
    CHECK(f[2] == doctest::Approx(18.0 / 23.0 - 0.5));
    CHECK(f[3] == doctest::Approx(45.0 / 59.0 - 0.5));
    CHECK(f[4] == doctest::Approx(0.0));
    for (double v : calendar_features(parse_timestamp("2023-12-31T23:59:00"), 10, 11, all)) CHECK(v == 0.5);
    CHECK(calendar_profile("electricity").size() == 4);
    CHECK_THROWS_AS(calendar_profile("tides"), ConfigError);
    const TimeSeriesTable with = with_calendar_features(ramp_table(30), calendar_profile("solar"));
    CHECK(with.covariate_names == std::vector<std::string>{"cal_month", "cal_hour_of_day", "cal_age"});
    CHECK(with.series[0].covariates.size() == 90);
}

TEST_CASE("window counts match direct enumeration") {
    for (std::size_t len : {40, 41, 57, 100}) {
        for (std::size_t stride : {1, 3, 7}) {
            const auto ws = make_windows(ramp_table(len), 6, 4, stride);
            CHECK(ws.size() == count_windows(len, 6, 4, stride));
            CHECK(ws.size() == (len - 1 - 6 - 4) / stride + 1);
        }
    }
    CHECK_THROWS_AS(make_windows(ramp_table(10), 6, 4, 1), ContractError);
}

TEST_CASE("window contents align inputs, targets and lags") {
    const TimeSeriesTable t = ramp_table(30);
    const auto ws = make_windows(t, 5, 3, 4);
    const WindowSample& w = ws[1];
    const auto& v = t.series[0].values;
    CHECK(w.start == 5);
    CHECK(w.inputs == std::vector<double>(v.begin() + 5, v.begin() + 10));
    CHECK(w.targets == std::vector<double>(v.begin() + 10, v.begin() + 13));
    for (std::size_t p = 0; p < 8; ++p) CHECK(w.lagged[p] == v[w.start + p - 1]);
    CHECK(w.timestamps.front() == t.series[0].timestamps[5]);
}

TEST_CASE("chronological split and ranged windows") {
    const TimeSeriesTable t = ramp_table(60);
    const ChronoSplit s = chrono_split(t, 10, 12);
    CHECK(s.train.series[0].length() == 38);
    CHECK(s.val.series[0].length() == 10);
    CHECK(s.test.series[0].length() == 12);
    CHECK(s.test.series[0].values.front() == t.series[0].values[48]);
    const auto test = make_windows_in_range(t, 8, 4, 4, 48, 60);
    CHECK(test.size() == 3);
    for (const auto& w : test) CHECK(w.start + 8 >= 48);
    CHECK_THROWS_AS(chrono_split(t, 30, 30), ContractError);
}

TEST_CASE("persistence baseline") {
    CHECK(persistence_span(Granularity::hour1, 24) == 24);
    CHECK(persistence_span(Granularity::day1, 1) == 20);
    WindowSample w;
    w.inputs = {1, 2, 3, 4, 5};
    w.targets = {0, 0, 0, 0, 0, 0, 0};
    CHECK(persistence_forecast(w, 3) == std::vector<double>{3, 4, 5, 3, 4, 5, 3});
    CHECK(persistence_forecast(w, 5).size() == 7);
}

TEST_CASE("granularity names") {
    for (auto g : {Granularity::minutes30, Granularity::hour1, Granularity::day1}) {
        CHECK(parse_granularity(to_string(g)) == g);
    }
    CHECK(steps_per_day(Granularity::minutes30) == 48);
    CHECK_THROWS_AS(parse_granularity("weekly"), ConfigError);
}

TEST_CASE("normalization example and train-only statistics") {
    TimeSeriesTable t;
    Series s;
    s.id = "x";
    s.values = {1, 2, 3};
    s.timestamps = {0, 3600, 7200};
    t.series.push_back(s);
    const NormalizedTable n = normalize(t);
    CHECK(n.stats[0].mean == 2.0);
    CHECK(n.stats[0].std == doctest::Approx(0.816497).epsilon(1e-6));
    CHECK(n.table.series[0].values[0] == doctest::Approx(-1.224745).epsilon(1e-6));
    CHECK(n.table.series[0].values[1] == 0.0);

    SynthConfig cfg;
    cfg.length = 400;
    cfg.trend = TrendKind::linear;
    const TimeSeriesTable table = synth_generate(cfg);
    const ChronoSplit split = chrono_split(table, 50, 50);
    const auto stats = fit_normalization(split.train);
    const TimeSeriesTable test = apply_normalization(split.test, stats);
    double mean = 0.0;
    for (double v : test.series[0].values) mean += v / 50.0;
    CHECK(std::fabs(mean) > 0.1);
}

TEST_CASE("quantiles commute with denormalization") {
    ForecastPath p;
    p.trend = {0.1, -1.0};
    p.seasonality = {0.2, -0.2};
    p.mean = {p.trend[0] + p.seasonality[0], p.trend[1] + p.seasonality[1]};
    p.variance = {0.5, 2.0};
    p.fill_quantiles();
    const NormalizationStats st{7.0, 3.0};
    const ForecastPath d = denormalize_components(p, st);
    for (std::size_t t = 0; t < 2; ++t) {
        CHECK(d.q90[t] == doctest::Approx(st.denormalize(p.q90[t])).epsilon(1e-12));
        CHECK(d.q50[t] == doctest::Approx(st.denormalize(p.q50[t])).epsilon(1e-12));
    }
    const ForecastPath same = denormalize_components(p, {0.0, 1.0});
    CHECK(same.mean == p.mean);
    CHECK(same.variance == p.variance);
}

TEST_CASE("calendar endpoints and distinct values") {
    using F = CalendarFeature;
    const std::vector<F> hour{F::hour_of_day};
    CHECK(calendar_features(parse_timestamp("2020-05-05T00:00"), 0, 2, hour)[0] == -0.5);
    CHECK(calendar_features(parse_timestamp("2020-05-05T23:00"), 0, 2, hour)[0] == 0.5);
    SynthConfig cfg;
    cfg.length = 365;
    cfg.granularity = Granularity::day1;
    const TimeSeriesTable year = with_calendar_features(synth_generate(cfg), calendar_profile("exchange"));
    CHECK(year.n_covariates() == 3);
    std::set<double> months;
    for (std::size_t t = 0; t < 365; ++t) months.insert(year.series[0].covariates[t * 3]);
    CHECK(months.size() == 12);
}

TEST_CASE("window geometry examples") {
    CHECK(make_windows(ramp_table(49), 24, 24, 1).size() == 1);
    const auto tiles = make_windows(ramp_table(97), 24, 24, 24);
    REQUIRE(tiles.size() == 3);
    for (std::size_t i = 1; i < tiles.size(); ++i) CHECK(tiles[i].start == tiles[i - 1].start + 24);
}

TEST_CASE("lagged channel alignment holds on random tables") {
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 20; ++trial) {
        SynthConfig cfg;
        cfg.seed = rng();
        cfg.n_series = 1 + trial % 3;
        cfg.length = 40 + trial * 7;
        const TimeSeriesTable t = synth_generate(cfg);
        const std::size_t t_l = 3 + trial % 5, t_h = 1 + trial % 6;
        for (const WindowSample& w : make_windows(t, t_l, t_h, 1 + trial % 4)) {
            const auto& v = t.series[w.series].values;
            CHECK(w.lagged[0] == v[w.start - 1]);
            for (std::size_t p = 1; p < t_l + t_h; ++p) {
                const double prev = p <= t_l ? w.inputs[p - 1] : w.targets[p - 1 - t_l];
                CHECK(w.lagged[p] == prev);
            }
        }
    }
}

TEST_CASE("split examples") {
    const TimeSeriesTable t = ramp_table(100);
    const ChronoSplit s = chrono_split(t, 20, 20);
    CHECK(s.bounds[0].train_end == 60);
    std::vector<double> joined = s.train.series[0].values;
    joined.insert(joined.end(), s.val.series[0].values.begin(), s.val.series[0].values.end());
    joined.insert(joined.end(), s.test.series[0].values.begin(), s.test.series[0].values.end());
    CHECK(joined == t.series[0].values);
    for (const auto& w : make_windows(s.train, 10, 5, 1)) CHECK(w.start + 15 <= 60);
}

TEST_CASE("synthetic special cases") {
    SynthConfig lin;
    lin.length = 50;
    lin.trend = TrendKind::linear;
    lin.trend_slope = 0.01;
    lin.trend_intercept = 2.0;
    lin.amplitude = 0.0;
    lin.noise_std = 0.0;
    const auto v = synth_generate(lin).series[0].values;
    for (std::size_t t = 0; t < 50; ++t) CHECK(v[t] == 0.01 * static_cast<double>(t) + 2.0);
    SynthConfig per;
    per.length = 100;
    per.trend = TrendKind::none;
    per.noise_std = 0.0;
    const auto p = synth_generate(per).series[0].values;
    for (std::size_t t = 24; t < 100; ++t) CHECK(std::fabs(p[t] - p[t - 24]) < 1e-12);
}

TEST_CASE("persistence of a constant input") {
    WindowSample w;
    w.inputs.assign(24, 3.5);
    w.targets.assign(24, 0.0);
    for (double v : persistence_forecast(w, 24)) CHECK(v == 3.5);
    w.inputs.assign(10, 1.0);
    CHECK_THROWS_AS(persistence_forecast(w, 20), ContractError);
}
