#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssdnet/checkpoint.hpp"
#include "ssdnet/errors.hpp"
#include "ssdnet/gradcheck.hpp"
#include "ssdnet/model.hpp"
#include "ssdnet/run_config.hpp"

namespace ssdnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kToyConfig = R"({
  "calendar": "none",
  "split": {"val": 0, "test": 0},
  "window": {"input_len": 6, "horizon": 3},
  "model": {"d_hid": 4, "n_layers": 1, "n_heads": 1, "d_kv": 4, "s": 3},
  "train": {"seed": 3},
  "synth": {"length": 40, "period": 3, "seed": 7}
})";

std::string fmt(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void write_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& args,
                    json extra) {
    extra["command"] = command;
    extra["arguments"] = args;
    write_json(path, extra);
}

TimeSeriesTable load_table(const RunConfig& rc) {
    if (!rc.data_path.empty()) return load_csv(rc.data_path);
    if (rc.synth) return synth_generate(*rc.synth);
    throw ConfigError("config names neither 'data' nor 'synth'");
}

TrainConfig resolved_train_config(const RunConfig& rc, const PreparedData& pd) {
    TrainConfig tc = rc.train;
    tc.encoder.n_series = pd.table.series.size();
    tc.encoder.n_covariates = pd.table.n_covariates();
    return tc;
}

json metrics_json(const MetricsReport& model, const MetricsReport& baseline, std::size_t n_windows) {
    json j = model.to_json();
    j["baseline_rho50"] = baseline.rho50;
    j["baseline_rho90"] = baseline.rho90;
    j["baseline_mae"] = baseline.mae;
    j["n_windows"] = n_windows;
    return j;
}

struct Loaded {
    ModelBundle bundle;
    RunConfig config;
    PreparedData data;
};

Loaded load_for_inference(const fs::path& checkpoint, const std::string& data_override) {
    Loaded l{load_bundle(checkpoint), {}, {}};
    l.config = RunConfig::from_json(l.bundle.run_config);
    if (!data_override.empty()) l.config.data_path = data_override;
    const TimeSeriesTable raw = load_table(l.config);
    std::vector<std::string> ids;
    for (const auto& s : raw.series) ids.push_back(s.id);
    if (ids != l.bundle.series_ids) {
        throw ContractError("dataset series do not match the checkpoint (expected " +
                            std::to_string(l.bundle.series_ids.size()) + " series starting with '" +
                            (l.bundle.series_ids.empty() ? "" : l.bundle.series_ids.front()) + "')");
    }
    l.data = prepare_data(l.config, raw, &l.bundle.stats);
    if (l.data.table.n_covariates() != l.bundle.config.encoder.n_covariates) {
        throw ContractError("dataset has " + std::to_string(l.data.table.n_covariates()) +
                            " covariates, checkpoint expects " +
                            std::to_string(l.bundle.config.encoder.n_covariates));
    }
    return l;
}

const WindowSample& select_window(const Loaded& l, const std::string& series, long index, const std::string& split) {
    const std::vector<WindowSample>* pool = nullptr;
    if (split == "test") pool = &l.data.test;
    else if (split == "val") pool = &l.data.val;
    else if (split == "train") pool = &l.data.train;
    else throw ConfigError("unknown split '" + split + "'");
    const std::size_t sid = series.empty() ? 0 : l.data.table.find_series(series);
    std::vector<const WindowSample*> matches;
    for (const auto& w : *pool) {
        if (w.series == sid) matches.push_back(&w);
    }
    if (matches.empty()) throw ContractError("no " + split + " windows for series '" + l.data.table.series[sid].id + "'");
    const long n = static_cast<long>(matches.size());
    const long k = index < 0 ? n + index : index;
    if (k < 0 || k >= n) {
        throw ContractError("window " + std::to_string(index) + " out of range; " + split + " split has " +
                            std::to_string(n) + " windows for this series");
    }
    return *matches[static_cast<std::size_t>(k)];
}

int cmd_synth(const fs::path& config_path, const std::string& out_override, const std::vector<std::string>& args,
              std::ostream& out) {
    const RunConfig rc = RunConfig::load(config_path);
    if (!rc.synth) throw ConfigError("config has no 'synth' section");
    const fs::path path = out_override.empty() ? rc.synth_output : fs::path(out_override);
    const TimeSeriesTable table = synth_generate(*rc.synth);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_csv(table, path);
    fs::path manifest = path;
    manifest.replace_extension(".manifest.json");
    write_manifest(manifest, "synth", args, {{"config", rc.to_json()}, {"output", path.string()}});
    out << "wrote " << table.series.size() * rc.synth->length << " rows to " << path.string() << '\n';
    return 0;
}

int cmd_train(const fs::path& config_path, const std::string& encoder, const std::string& data,
              const std::string& output_dir, bool quiet, const std::vector<std::string>& args, std::ostream& out) {
    RunConfig rc = RunConfig::load(config_path);
    if (!encoder.empty()) rc.train.encoder.kind = parse_encoder_kind(encoder);
    if (!data.empty()) rc.data_path = data;
    if (!output_dir.empty()) rc.output_dir = output_dir;

    const TimeSeriesTable raw = load_table(rc);
    const PreparedData pd = prepare_data(rc, raw);
    if (pd.val.empty()) throw ConfigError("validation split yields no windows; increase split.val");
    const TrainConfig tc = resolved_train_config(rc, pd);

    TrainResult result = train(tc, pd.train, pd.val, pd.stats, [&](const EpochRecord& r) {
        if (!quiet) out << "epoch " << r.epoch << " train " << fmt(r.train_loss) << " val " << fmt(r.val_loss) << '\n';
    });
    ModelBundle& bundle = result.bundle;
    bundle.series_ids = pd.series_ids();
    bundle.run_config = rc.to_json();

    fs::create_directories(rc.output_dir);
    const fs::path ckpt = rc.output_dir / "model.ckpt";
    const fs::path log_path = rc.output_dir / "training_log.csv";
    save_bundle(bundle, ckpt);
    result.log.write_csv(log_path);

    json manifest{{"config", rc.to_json()},
                  {"seed", tc.seed},
                  {"encoder", to_string(tc.encoder.kind)},
                  {"parameters", bundle.params.total_size()},
                  {"best_epoch", result.log.best_epoch},
                  {"best_val_loss", result.log.best_val_loss},
                  {"epochs_run", result.log.epochs.size()},
                  {"stop_reason", result.log.stop_reason},
                  {"checkpoint", ckpt.string()},
                  {"training_log", log_path.string()}};
    if (!pd.test.empty()) {
        const MetricsReport model = evaluate(bundle, pd.test);
        const MetricsReport base = evaluate_persistence(pd.test, pd.persistence_span, pd.stats, bundle.series_ids);
        manifest["test_metrics"] = metrics_json(model, base, pd.test.size());
        out << "test rho50 " << fmt(model.rho50) << " rho90 " << fmt(model.rho90) << " persistence rho50 "
            << fmt(base.rho50) << '\n';
    }
    write_manifest(rc.output_dir / "run_manifest.json", "train", args, std::move(manifest));
    out << "saved " << ckpt.string() << '\n';
    return 0;
}

int cmd_forecast(const fs::path& checkpoint, const std::string& data, const std::string& series, long window,
                 const std::string& split, const fs::path& out_dir, const std::vector<std::string>& args,
                 std::ostream& out) {
    Loaded l = load_for_inference(checkpoint, data);
    const WindowSample& w = select_window(l, series, window, split);
    const ForecastPath path = decode_forecast(l.bundle, w);
    const NormalizationStats& st = l.bundle.stats_for(w.series);
    const std::size_t t_l = w.input_len();

    fs::create_directories(out_dir);
    json steps = json::array();
    std::ofstream csv(out_dir / "decomposition.csv");
    if (!csv) throw IoError("cannot write " + (out_dir / "decomposition.csv").string());
    csv << "timestamp,mean,variance,q50,q90,trend,seasonality\n";
    for (std::size_t t = 0; t < path.size(); ++t) {
        const std::string ts = format_timestamp(w.timestamps[t_l + t]);
        steps.push_back({{"step", t + 1},
                         {"timestamp", ts},
                         {"mean", path.mean[t]},
                         {"variance", path.variance[t]},
                         {"q50", path.q50[t]},
                         {"q90", path.q90[t]},
                         {"trend", path.trend[t]},
                         {"seasonality", path.seasonality[t]},
                         {"target", st.denormalize(w.targets[t])}});
        csv << ts << ',' << fmt(path.mean[t]) << ',' << fmt(path.variance[t]) << ',' << fmt(path.q50[t]) << ','
            << fmt(path.q90[t]) << ',' << fmt(path.trend[t]) << ',' << fmt(path.seasonality[t]) << '\n';
    }
    write_json(out_dir / "forecast.json", steps);
    write_manifest(out_dir / "run_manifest.json", "forecast", args,
                   {{"checkpoint", checkpoint.string()},
                    {"config", l.config.to_json()},
                    {"series", l.data.table.series[w.series].id},
                    {"split", split},
                    {"window_start", w.start}});
    out << "wrote " << path.size() << " steps to " << out_dir.string() << '\n';
    return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& config_path, const std::string& data,
                 bool baseline_only, const std::string& out_path, const std::vector<std::string>& args,
                 std::ostream& out) {
    json metrics;
    json manifest;
    if (baseline_only) {
        if (config_path.empty()) throw ConfigError("--baseline-only needs --config");
        RunConfig rc = RunConfig::load(config_path);
        if (!data.empty()) rc.data_path = data;
        const PreparedData pd = prepare_data(rc, load_table(rc));
        if (pd.test.empty()) throw ConfigError("test split yields no windows; increase split.test");
        const MetricsReport base = evaluate_persistence(pd.test, pd.persistence_span, pd.stats, pd.series_ids());
        metrics = {{"baseline_rho50", base.rho50},
                   {"baseline_rho90", base.rho90},
                   {"baseline_mae", base.mae},
                   {"n_windows", pd.test.size()}};
        manifest["config"] = rc.to_json();
    } else {
        if (checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint (or --baseline-only)");
        Loaded l = load_for_inference(checkpoint, data);
        if (l.data.test.empty()) throw ConfigError("test split yields no windows; increase split.test");
        const MetricsReport model = evaluate(l.bundle, l.data.test);
        const MetricsReport base =
            evaluate_persistence(l.data.test, l.data.persistence_span, l.bundle.stats, l.bundle.series_ids);
        metrics = metrics_json(model, base, l.data.test.size());
        manifest["config"] = l.config.to_json();
        manifest["checkpoint"] = checkpoint;
    }
    out << metrics.dump(2) << '\n';
    if (!out_path.empty()) {
        write_json(out_path, metrics);
        fs::path m = out_path;
        m.replace_extension(".manifest.json");
        write_manifest(m, "evaluate", args, std::move(manifest));
    }
    return 0;
}

int cmd_attention(const fs::path& checkpoint, const std::string& data, const std::string& series, long window,
                  const std::string& split, const fs::path& out_dir, const std::vector<std::string>& args,
                  std::ostream& out) {
    Loaded l = load_for_inference(checkpoint, data);
    if (l.bundle.config.encoder.kind == EncoderKind::lstm) {
        throw ContractError("no attention maps for lstm encoder");
    }
    const WindowSample& w = select_window(l, series, window, split);
    std::vector<AttentionMap> maps;
    decode_forecast(l.bundle, w, &maps);
    const auto files = export_attention(maps, out_dir);
    write_manifest(out_dir / "run_manifest.json", "attention", args,
                   {{"checkpoint", checkpoint.string()},
                    {"series", l.data.table.series[w.series].id},
                    {"split", split},
                    {"window_start", w.start},
                    {"files", files.size()}});
    out << "wrote " << files.size() << " attention maps to " << out_dir.string() << '\n';
    return 0;
}

int cmd_gradcheck(const std::string& config_path, const std::string& op, std::optional<double> tolerance,
                  std::ostream& out) {
    if (!op.empty()) {
        const double tol = tolerance.value_or(1e-6);
        bool found = false;
        bool ok = true;
        for (const auto& check : primitive_checks()) {
            if (op != "all" && check.name != op) continue;
            found = true;
            const GradCheckResult r = grad_check(check.program, check.inputs);
            const bool pass = r.max_rel_error < tol;
            ok = ok && pass;
            out << check.name << " max relative error " << fmt(r.max_rel_error) << (pass ? " PASS" : " FAIL") << '\n';
        }
        if (!found) {
            std::string known;
            for (const auto& n : primitive_names()) known += (known.empty() ? "" : ", ") + n;
            throw ConfigError("unknown op '" + op + "' (known: all, " + known + ")");
        }
        return ok ? 0 : 1;
    }
    const RunConfig rc = config_path.empty() ? RunConfig::from_json(json::parse(kToyConfig))
                                             : RunConfig::load(config_path);
    const PreparedData pd = prepare_data(rc, load_table(rc));
    ModelBundle bundle = ModelBundle::create(resolved_train_config(rc, pd));
    const std::size_t n = std::min<std::size_t>(2, pd.train.size());
    const GradCheckResult r = model_grad_check(bundle, std::span(pd.train).first(n));
    const double tol = tolerance.value_or(1e-4);
    const auto params = bundle.params.all();
    const bool pass = r.max_rel_error < tol;
    out << "max relative error " << fmt(r.max_rel_error) << " at " << params[r.worst_input]->name << '['
        << r.worst_index << "] over " << bundle.params.total_size() << " parameters" << '\n'
        << (pass ? "PASS" : "FAIL") << '\n';
    return pass ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"SSDNet: probabilistic forecasting with a Transformer-driven state space model", "ssdnet"};
    app.require_subcommand(1);

    std::string config, data, encoder, output_dir, checkpoint, series, split = "test", out_path, op;
    std::string synth_out;
    long window = -1;
    bool quiet = false, baseline_only = false;
    std::optional<double> tolerance;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with ground-truth components");
    synth->add_option("--config", config, "Run config with a 'synth' section")->required();
    synth->add_option("--out", synth_out, "Output CSV (overrides synth.output)");

    auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint, log and manifest");
    train_cmd->add_option("--config", config, "Run config")->required();
    train_cmd->add_option("--encoder", encoder, "transformer or lstm");
    train_cmd->add_option("--data", data, "Dataset CSV (overrides config)");
    train_cmd->add_option("--output-dir", output_dir, "Output directory (overrides config)");
    train_cmd->add_flag("--quiet", quiet, "No per-epoch progress");

    auto add_window_options = [&](CLI::App* cmd) {
        cmd->add_option("--checkpoint", checkpoint, "Saved model")->required();
        cmd->add_option("--data", data, "Dataset CSV (defaults to the training data)");
        cmd->add_option("--series", series, "Series id (default: first)");
        cmd->add_option("--window", window, "Window index within the split; negative counts from the end");
        cmd->add_option("--split", split, "train, val or test");
    };
    auto* forecast_cmd = app.add_subcommand("forecast", "Decode one window: forecast JSON + decomposition CSV");
    add_window_options(forecast_cmd);
    forecast_cmd->add_option("--out", out_path, "Output directory")->required();

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Quantile losses of the model and the persistence baseline");
    evaluate_cmd->add_option("--checkpoint", checkpoint, "Saved model");
    evaluate_cmd->add_option("--config", config, "Run config (for --baseline-only)");
    evaluate_cmd->add_option("--data", data, "Dataset CSV");
    evaluate_cmd->add_flag("--baseline-only", baseline_only, "Only the persistence baseline");
    evaluate_cmd->add_option("--out", out_path, "Metrics JSON path");

    auto* attention_cmd = app.add_subcommand("attention", "Export per-layer, per-head attention maps");
    add_window_options(attention_cmd);
    attention_cmd->add_option("--out", out_path, "Output directory")->required();

    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
    gradcheck_cmd->add_option("--config", config, "Run config (default: built-in toy model)");
    gradcheck_cmd->add_option("--op", op, "Check a single primitive, or 'all'");
    gradcheck_cmd->add_option("--tolerance", tolerance, "Maximum relative error");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*synth) return cmd_synth(config, synth_out, args, out);
        if (*train_cmd) return cmd_train(config, encoder, data, output_dir, quiet, args, out);
        if (*forecast_cmd) return cmd_forecast(checkpoint, data, series, window, split, out_path, args, out);
        if (*evaluate_cmd) return cmd_evaluate(checkpoint, config, data, baseline_only, out_path, args, out);
        if (*attention_cmd) return cmd_attention(checkpoint, data, series, window, split, out_path, args, out);
        if (*gradcheck_cmd) return cmd_gradcheck(config, op, tolerance, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace ssdnet::cli
