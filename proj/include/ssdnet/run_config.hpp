#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssdnet/data.hpp"
#include "ssdnet/model.hpp"

namespace ssdnet {

/// Per-dataset geometry and hyperparameters from the reference setups:
/// granularity-specific window lengths, seasonality period and the selected
/// encoder hyperparameters.
struct DatasetPreset {
    std::string name;
    std::size_t input_len;
    std::size_t horizon;
    std::size_t steps_per_day;
    int period;
    double learning_rate;
    double dropout;
    std::size_t d_hid;
    std::size_t n_layers;
    std::size_t d_kv;
    std::size_t n_heads;
    bool use_id_embedding;
};

const DatasetPreset& dataset_preset(std::string_view name);

/// One run, read from a JSON file. Unknown keys are rejected at every level.
///
///   {
///     "preset": "solar",                       optional
///     "data": "series.csv",
///     "calendar": "solar" | ["month", ...],
///     "steps_per_day": 24,
///     "split":  {"val": 240, "test": 240},
///     "window": {"input_len": 24, "horizon": 24, "train_stride": 1, "eval_stride": 24},
///     "model":  {"encoder": "transformer", "d_hid": 16, "n_layers": 2, "d_kv": 6,
///                "n_heads": 2, "dropout": 0.0, "use_id_embedding": false, "s": 24},
///     "train":  {"learning_rate": 0.005, "batch_size": 32, "max_epochs": 200,
///                "patience": 10, "seed": 1, "a": 0.5, "clip_norm": 5.0},
///     "synth":  {"n_series": 1, "length": 2400, "period": 24, "trend": "random-walk",
///                "trend_intercept": 0, "trend_slope": 0.01, "trend_step_std": 0.01,
///                "amplitude": 1.0, "noise_std": 0.1, "seed": 7, "granularity": "1h",
///                "start": "2010-01-01T00:00:00", "random_phase": true, "output": "synth.csv"},
///     "output_dir": "run"
///   }
struct RunConfig {
    std::string preset;
    std::filesystem::path data_path;
    std::vector<CalendarFeature> calendar;
    std::optional<std::size_t> steps_per_day;
    std::size_t val_steps = 0;
    std::size_t test_steps = 0;
    std::size_t train_stride = 1;
    std::optional<std::size_t> eval_stride;
    TrainConfig train;
    std::optional<SynthConfig> synth;
    std::filesystem::path synth_output = "synth.csv";
    std::filesystem::path output_dir = "run";

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    /// Fully resolved form; from_json(to_json()) reproduces the config.
    nlohmann::json to_json() const;
    std::size_t resolved_eval_stride() const { return eval_stride.value_or(train.encoder.horizon); }
};

/// Normalised windows for one run: calendar covariates appended, split
/// chronologically, statistics fitted on the training segment only.
struct PreparedData {
    TimeSeriesTable raw;
    TimeSeriesTable table;
    std::vector<NormalizationStats> stats;
    std::vector<SplitBounds> bounds;
    std::vector<WindowSample> train;
    std::vector<WindowSample> val;
    std::vector<WindowSample> test;
    std::size_t persistence_span = 0;

    std::vector<std::string> series_ids() const;
};

/// `stats`, when given, replaces the statistics fitted on the training
/// segment (used when re-evaluating a saved model).
PreparedData prepare_data(const RunConfig& config, const TimeSeriesTable& raw,
                          const std::vector<NormalizationStats>* stats = nullptr);

}  // namespace ssdnet
