#include "ssdnet/run_config.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include "ssdnet/errors.hpp"

namespace ssdnet {

namespace {

using nlohmann::json;

const std::array<DatasetPreset, 5> kPresets{{
    {"sanyo", 20, 20, 20, 20, 0.005, 0.0, 12, 2, 6, 2, false},
    {"hanergy", 20, 20, 20, 20, 0.005, 0.0, 16, 3, 6, 3, false},
    {"solar", 24, 24, 24, 24, 0.005, 0.1, 16, 3, 6, 3, true},
    {"electricity", 168, 24, 24, 24, 0.001, 0.1, 24, 3, 8, 2, true},
    {"exchange", 30, 20, 1, 20, 0.005, 0.0, 12, 2, 4, 3, true},
}};

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* known) { return k == known; })) {
            throw ConfigError("unknown key '" + k + "' in " + where);
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("invalid value for '" + std::string(key) + "' in " + where);
    }
}

std::size_t read_positive(const json& j, const char* key, std::size_t fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() <= 0) {
        throw ConfigError("'" + std::string(key) + "' in " + where + " must be a positive integer");
    }
    return v.get<std::size_t>();
}

}  // namespace

const DatasetPreset& dataset_preset(std::string_view name) {
    for (const auto& p : kPresets) {
        if (p.name == name) return p;
    }
    throw ConfigError("unknown preset '" + std::string(name) + "'");
}

RunConfig RunConfig::from_json(const json& j) {
    reject_unknown(j,
                   {"preset", "data", "calendar", "steps_per_day", "split", "window", "model", "train", "synth",
                    "output_dir"},
                   "run config");
    RunConfig c;
    EncoderConfig& enc = c.train.encoder;
    if (j.contains("preset")) {
        c.preset = j.at("preset").get<std::string>();
        const DatasetPreset& p = dataset_preset(c.preset);
        enc.input_len = p.input_len;
        enc.horizon = p.horizon;
        enc.d_hid = p.d_hid;
        enc.n_layers = p.n_layers;
        enc.d_kv = p.d_kv;
        enc.n_heads = p.n_heads;
        enc.dropout = p.dropout;
        enc.use_id_embedding = p.use_id_embedding;
        c.train.period = p.period;
        c.train.learning_rate = p.learning_rate;
        c.steps_per_day = p.steps_per_day;
        c.calendar = calendar_profile(c.preset);
    }
    if (j.contains("data")) c.data_path = j.at("data").get<std::string>();
    if (j.contains("calendar")) {
        const json& cal = j.at("calendar");
        if (cal.is_string()) {
            c.calendar = calendar_profile(cal.get<std::string>());
        } else if (cal.is_array()) {
            c.calendar.clear();
            for (const auto& f : cal) c.calendar.push_back(parse_calendar_feature(f.get<std::string>()));
        } else {
            throw ConfigError("'calendar' must be a profile name or a list of features");
        }
    }
    if (j.contains("steps_per_day")) c.steps_per_day = read_positive(j, "steps_per_day", 1, "run config");
    if (j.contains("split")) {
        const json& s = j.at("split");
        reject_unknown(s, {"val", "test"}, "split");
        read(s, "val", c.val_steps, "split");
        read(s, "test", c.test_steps, "split");
    }
    if (j.contains("window")) {
        const json& w = j.at("window");
        reject_unknown(w, {"input_len", "horizon", "train_stride", "eval_stride"}, "window");
        enc.input_len = read_positive(w, "input_len", enc.input_len, "window");
        enc.horizon = read_positive(w, "horizon", enc.horizon, "window");
        c.train_stride = read_positive(w, "train_stride", c.train_stride, "window");
        if (w.contains("eval_stride")) c.eval_stride = read_positive(w, "eval_stride", 1, "window");
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m, {"encoder", "d_hid", "n_layers", "d_kv", "n_heads", "dropout", "use_id_embedding", "s"},
                       "model");
        if (m.contains("encoder")) enc.kind = parse_encoder_kind(m.at("encoder").get<std::string>());
        enc.d_hid = read_positive(m, "d_hid", enc.d_hid, "model");
        enc.n_layers = read_positive(m, "n_layers", enc.n_layers, "model");
        enc.d_kv = read_positive(m, "d_kv", enc.d_kv, "model");
        enc.n_heads = read_positive(m, "n_heads", enc.n_heads, "model");
        read(m, "dropout", enc.dropout, "model");
        read(m, "use_id_embedding", enc.use_id_embedding, "model");
        read(m, "s", c.train.period, "model");
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown(t, {"learning_rate", "batch_size", "max_epochs", "patience", "seed", "a", "clip_norm"},
                       "train");
        read(t, "learning_rate", c.train.learning_rate, "train");
        c.train.batch_size = read_positive(t, "batch_size", c.train.batch_size, "train");
        c.train.max_epochs = read_positive(t, "max_epochs", c.train.max_epochs, "train");
        read(t, "patience", c.train.patience, "train");
        read(t, "seed", c.train.seed, "train");
        read(t, "a", c.train.loss.a, "train");
        read(t, "clip_norm", c.train.clip_norm, "train");
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        reject_unknown(s,
                       {"n_series", "length", "period", "trend", "trend_intercept", "trend_slope", "trend_step_std",
                        "amplitude", "noise_std", "seed", "granularity", "start", "random_phase", "output"},
                       "synth");
        SynthConfig sc;
        sc.n_series = read_positive(s, "n_series", sc.n_series, "synth");
        sc.length = read_positive(s, "length", sc.length, "synth");
        sc.period = static_cast<int>(read_positive(s, "period", static_cast<std::size_t>(sc.period), "synth"));
        if (s.contains("trend")) sc.trend = parse_trend_kind(s.at("trend").get<std::string>());
        read(s, "trend_intercept", sc.trend_intercept, "synth");
        read(s, "trend_slope", sc.trend_slope, "synth");
        read(s, "trend_step_std", sc.trend_step_std, "synth");
        read(s, "amplitude", sc.amplitude, "synth");
        read(s, "noise_std", sc.noise_std, "synth");
        read(s, "seed", sc.seed, "synth");
        if (s.contains("granularity")) sc.granularity = parse_granularity(s.at("granularity").get<std::string>());
        if (s.contains("start")) sc.start_timestamp = parse_timestamp(s.at("start").get<std::string>());
        read(s, "random_phase", sc.random_phase, "synth");
        if (s.contains("output")) c.synth_output = s.at("output").get<std::string>();
        if (sc.noise_std < 0.0 || sc.trend_step_std < 0.0) throw ConfigError("synth standard deviations must be >= 0");
        c.synth = sc;
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();

    if (!(enc.dropout >= 0.0 && enc.dropout < 1.0)) throw ConfigError("'dropout' must lie in [0, 1)");
    if (c.train.period < 2) throw ConfigError("'s' must be >= 2");
    if (!(c.train.learning_rate > 0.0)) throw ConfigError("'learning_rate' must be > 0");
    if (!(c.train.loss.a >= 0.0)) throw ConfigError("'a' must be >= 0");
    if (!(c.train.clip_norm > 0.0)) throw ConfigError("'clip_norm' must be > 0");
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

json RunConfig::to_json() const {
    const EncoderConfig& enc = train.encoder;
    json cal = json::array();
    for (CalendarFeature f : calendar) cal.push_back(to_string(f));
    json j{{"data", data_path.string()},
           {"calendar", cal},
           {"split", {{"val", val_steps}, {"test", test_steps}}},
           {"window",
            {{"input_len", enc.input_len},
             {"horizon", enc.horizon},
             {"train_stride", train_stride},
             {"eval_stride", resolved_eval_stride()}}},
           {"model",
            {{"encoder", to_string(enc.kind)},
             {"d_hid", enc.d_hid},
             {"n_layers", enc.n_layers},
             {"d_kv", enc.d_kv},
             {"n_heads", enc.n_heads},
             {"dropout", enc.dropout},
             {"use_id_embedding", enc.use_id_embedding},
             {"s", train.period}}},
           {"train",
            {{"learning_rate", train.learning_rate},
             {"batch_size", train.batch_size},
             {"max_epochs", train.max_epochs},
             {"patience", train.patience},
             {"seed", train.seed},
             {"a", train.loss.a},
             {"clip_norm", train.clip_norm}}},
           {"output_dir", output_dir.string()}};
    if (steps_per_day) j["steps_per_day"] = *steps_per_day;
    if (synth) {
        j["synth"] = {{"n_series", synth->n_series},
                      {"length", synth->length},
                      {"period", synth->period},
                      {"trend", to_string(synth->trend)},
                      {"trend_intercept", synth->trend_intercept},
                      {"trend_slope", synth->trend_slope},
                      {"trend_step_std", synth->trend_step_std},
                      {"amplitude", synth->amplitude},
                      {"noise_std", synth->noise_std},
                      {"seed", synth->seed},
                      {"granularity", to_string(synth->granularity)},
                      {"start", format_timestamp(synth->start_timestamp)},
                      {"random_phase", synth->random_phase},
                      {"output", synth_output.string()}};
    }
    return j;
}

std::vector<std::string> PreparedData::series_ids() const {
    std::vector<std::string> ids;
    for (const auto& s : table.series) ids.push_back(s.id);
    return ids;
}

PreparedData prepare_data(const RunConfig& config, const TimeSeriesTable& raw,
                          const std::vector<NormalizationStats>* stats) {
    const EncoderConfig& enc = config.train.encoder;
    PreparedData out;
    out.raw = raw;
    const TimeSeriesTable with_cal = with_calendar_features(raw, config.calendar);
    const ChronoSplit split = chrono_split(with_cal, config.val_steps, config.test_steps);
    out.bounds = split.bounds;
    out.stats = stats != nullptr ? *stats : fit_normalization(split.train);
    if (out.stats.size() != raw.series.size()) {
        throw ContractError("normalization statistics cover " + std::to_string(out.stats.size()) +
                            " series, data has " + std::to_string(raw.series.size()));
    }
    out.table = apply_normalization(with_cal, out.stats);
    const TimeSeriesTable train_part = apply_normalization(split.train, out.stats);
    out.train = make_windows(train_part, enc.input_len, enc.horizon, config.train_stride);
    const std::size_t eval_stride = config.resolved_eval_stride();
    for (std::size_t i = 0; i < out.table.series.size(); ++i) {
        TimeSeriesTable one;
        one.granularity = out.table.granularity;
        one.covariate_names = out.table.covariate_names;
        one.series.push_back(out.table.series[i]);
        const SplitBounds& b = out.bounds[i];
        auto collect = [&](std::vector<WindowSample>& dst, std::size_t begin, std::size_t end) {
            if (end <= begin) return;
            try {
                auto ws = make_windows_in_range(one, enc.input_len, enc.horizon, eval_stride, begin, end);
                for (auto& w : ws) {
                    w.series = i;
                    dst.push_back(std::move(w));
                }
            } catch (const ContractError&) {
                // Segment too short for a single horizon; other series may still contribute.
            }
        };
        collect(out.val, b.train_end, b.val_end);
        collect(out.test, b.val_end, b.length);
    }
    const std::size_t spd = config.steps_per_day.value_or(steps_per_day(raw.granularity));
    out.persistence_span = persistence_span(raw.granularity, spd);
    if (!out.test.empty() && out.persistence_span > config.train.encoder.input_len) {
        throw ConfigError("persistence baseline repeats the last " + std::to_string(out.persistence_span) +
                          " steps but window.input_len is " + std::to_string(config.train.encoder.input_len) +
                          "; raise input_len or set steps_per_day");
    }
    return out;
}

}  // namespace ssdnet
