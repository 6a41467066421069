#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "ssdnet/data.hpp"
#include "ssdnet/encoder.hpp"
#include "ssdnet/errors.hpp"
#include "ssdnet/run_config.hpp"

using namespace ssdnet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / ("ssdnet_cli_" + std::to_string(std::rand()));
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }

    fs::path write_config(const std::string& name, const json& j) const {
        const fs::path p = root / name;
        std::ofstream(p) << j.dump(2);
        return p;
    }
};

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

json toy_config(const Workspace& ws, std::size_t layers = 1, std::size_t heads = 1) {
    return {{"calendar", {"hour_of_day"}},
            {"steps_per_day", 3},
            {"split", {{"val", 24}, {"test", 24}}},
            {"window", {{"input_len", 6}, {"horizon", 3}}},
            {"model", {{"d_hid", 4}, {"n_layers", layers}, {"n_heads", heads}, {"d_kv", 4}, {"s", 3}}},
            {"train", {{"seed", 3}, {"max_epochs", 3}, {"batch_size", 16}}},
            {"synth", {{"length", 150}, {"period", 3}, {"seed", 7}, {"output", (ws.root / "toy.csv").string()}}},
            {"output_dir", (ws.root / "run").string()}};
}

/// Trains the toy config and returns the run directory.
fs::path train_toy(const Workspace& ws, const json& config, const std::string& name,
                   const std::string& encoder = "transformer") {
    const fs::path cfg = ws.write_config(name + ".json", config);
    const fs::path dir = ws.root / name;
    const Result r = run_cli({"train", "--config", cfg.string(), "--encoder", encoder, "--output-dir", dir.string(),
                              "--quiet"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return dir;
}

}  // namespace

TEST_CASE("synth writes identical files for the same seed") {
    Workspace ws;
    const fs::path cfg = ws.write_config("cfg.json", toy_config(ws));
    const fs::path a = ws.root / "a.csv", b = ws.root / "b.csv";
    REQUIRE(run_cli({"synth", "--config", cfg.string(), "--out", a.string()}).code == 0);
    REQUIRE(run_cli({"synth", "--config", cfg.string(), "--out", b.string()}).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(fs::exists(ws.root / "a.manifest.json"));

    const TimeSeriesTable t = load_csv(a);
    REQUIRE(t.series.size() == 1);
    CHECK(t.series[0].values.size() == 150);
    std::size_t lines = 0;
    for (char c : slurp(a)) lines += c == '\n';
    CHECK(lines == 151);

    json two = toy_config(ws);
    two["synth"]["n_series"] = 3;
    const fs::path cfg2 = ws.write_config("cfg2.json", two);
    REQUIRE(run_cli({"synth", "--config", cfg2.string(), "--out", a.string()}).code == 0);
    std::size_t rows = 0;
    for (const auto& s : load_csv(a).series) rows += s.values.size();
    CHECK(rows == 3 * 150);
}

TEST_CASE("train writes checkpoint, log and manifest") {
    Workspace ws;
    const fs::path dir = train_toy(ws, toy_config(ws), "tr");
    CHECK(fs::exists(dir / "model.ckpt"));
    CHECK(fs::exists(dir / "training_log.csv"));
    const json m = read_json(dir / "run_manifest.json");
    CHECK(m["seed"] == 3);
    CHECK(m["encoder"] == "transformer");
    CHECK(m["command"] == "train");
    CHECK(m["config"]["train"]["seed"] == 3);
    CHECK(m["epochs_run"] == 3);
    CHECK(m.contains("test_metrics"));
    CHECK(slurp(dir / "training_log.csv").rfind("epoch,train_loss,val_loss,wall_ms\n", 0) == 0);

    const fs::path lstm = train_toy(ws, toy_config(ws), "tr_lstm", "lstm");
    CHECK(read_json(lstm / "run_manifest.json")["encoder"] == "lstm");
    CHECK(read_json(lstm / "run_manifest.json")["config"]["model"]["encoder"] == "lstm");
}

TEST_CASE("invalid config key is named") {
    Workspace ws;
    json bad = toy_config(ws);
    bad["train"]["learning_rat"] = 0.1;
    const fs::path cfg = ws.write_config("bad.json", bad);
    const Result r = run_cli({"train", "--config", cfg.string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("learning_rat") != std::string::npos);

    json top = toy_config(ws);
    top["epochs"] = 4;
    const Result r2 = run_cli({"train", "--config", ws.write_config("top.json", top).string()});
    CHECK(r2.code != 0);
    CHECK(r2.err.find("epochs") != std::string::npos);

    json day = toy_config(ws);
    day.erase("steps_per_day");
    const Result r3 = run_cli({"train", "--config", ws.write_config("day.json", day).string()});
    CHECK(r3.code != 0);
    CHECK(r3.err.find("steps_per_day") != std::string::npos);
}

TEST_CASE("forecast output is consistent") {
    Workspace ws;
    const fs::path dir = train_toy(ws, toy_config(ws), "fc");
    const fs::path out = ws.root / "forecast";
    const Result r = run_cli({"forecast", "--checkpoint", (dir / "model.ckpt").string(), "--window", "1", "--out",
                              out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json steps = read_json(out / "forecast.json");
    REQUIRE(steps.size() == 3);
    for (const auto& s : steps) {
        CHECK(s["q50"].get<double>() == s["mean"].get<double>());
        CHECK(std::fabs(s["mean"].get<double>() - s["trend"].get<double>() - s["seasonality"].get<double>()) <
              1e-9);
        CHECK(s["variance"].get<double>() > 0.0);
        CHECK(s["q90"].get<double>() > s["q50"].get<double>());
    }
    const std::string csv = slurp(out / "decomposition.csv");
    CHECK(csv.rfind("timestamp,mean,variance,q50,q90,trend,seasonality\n", 0) == 0);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        std::vector<double> v;
        std::istringstream cells(line.substr(line.find(',') + 1));
        std::string cell;
        while (std::getline(cells, cell, ',')) v.push_back(std::stod(cell));
        REQUIRE(v.size() == 6);
        CHECK(v[2] == v[0]);
        CHECK(v[1] > 0.0);
        CHECK(std::fabs(v[0] - v[4] - v[5]) < 1e-9);
        ++n;
    }
    CHECK(n == 3);
    CHECK(read_json(out / "run_manifest.json")["command"] == "forecast");

    const Result bad = run_cli({"forecast", "--checkpoint", (dir / "model.ckpt").string(), "--window", "500",
                                "--out", out.string()});
    CHECK(bad.code != 0);
    CHECK(bad.err.find("out of range") != std::string::npos);
}

TEST_CASE("forecast rejects a dataset with other series") {
    Workspace ws;
    const fs::path dir = train_toy(ws, toy_config(ws), "mm");
    json other = toy_config(ws);
    other["synth"]["n_series"] = 2;
    const fs::path cfg = ws.write_config("other.json", other);
    const fs::path csv = ws.root / "other.csv";
    REQUIRE(run_cli({"synth", "--config", cfg.string(), "--out", csv.string()}).code == 0);
    const Result r = run_cli({"forecast", "--checkpoint", (dir / "model.ckpt").string(), "--data", csv.string(),
                              "--out", (ws.root / "f").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("series") != std::string::npos);
}

TEST_CASE("evaluate reports model and baseline metrics") {
    Workspace ws;
    const json config = toy_config(ws);
    const fs::path dir = train_toy(ws, config, "ev");
    const fs::path out = ws.root / "metrics.json";
    const Result r = run_cli({"evaluate", "--checkpoint", (dir / "model.ckpt").string(), "--out", out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json m = json::parse(r.out);
    for (const char* key : {"rho50", "rho90", "mae", "baseline_rho50", "baseline_rho90", "n_windows"}) {
        CHECK_MESSAGE(m.contains(key), key);
    }
    CHECK(read_json(out) == m);
    CHECK(fs::exists(ws.root / "metrics.manifest.json"));

    const json logged = read_json(dir / "run_manifest.json")["test_metrics"];
    CHECK(m["rho50"].get<double>() == logged["rho50"].get<double>());
    CHECK(m["rho90"].get<double>() == logged["rho90"].get<double>());
    CHECK(m["baseline_rho50"].get<double>() == logged["baseline_rho50"].get<double>());

    const fs::path cfg = ws.write_config("base.json", config);
    const Result base = run_cli({"evaluate", "--baseline-only", "--config", cfg.string()});
    REQUIRE_MESSAGE(base.code == 0, base.err);
    const json b = json::parse(base.out);
    CHECK(b["baseline_rho50"].get<double>() == logged["baseline_rho50"].get<double>());
    CHECK_FALSE(b.contains("rho50"));

    CHECK(run_cli({"evaluate"}).code != 0);
}

TEST_CASE("attention export") {
    Workspace ws;
    const fs::path dir = train_toy(ws, toy_config(ws, 2, 2), "att");
    const fs::path out = ws.root / "maps";
    const Result r =
        run_cli({"attention", "--checkpoint", (dir / "model.ckpt").string(), "--out", out.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(out)) {
        if (entry.path().extension() != ".csv") continue;
        ++files;
        const AttentionMap map = read_attention_csv(entry.path());
        CHECK(map.rows == 9);
        for (std::size_t row = 0; row < map.rows; ++row) {
            double sum = 0.0;
            for (std::size_t col = 0; col < map.cols; ++col) sum += map.at(row, col);
            CHECK(std::fabs(sum - 1.0) <= 1e-9);
        }
    }
    CHECK(files == 4);

    const fs::path lstm = train_toy(ws, toy_config(ws), "att_lstm", "lstm");
    const Result e = run_cli({"attention", "--checkpoint", (lstm / "model.ckpt").string(), "--out",
                              (ws.root / "none").string()});
    CHECK(e.code != 0);
    CHECK(e.err.find("no attention maps for lstm encoder") != std::string::npos);
}

TEST_CASE("gradcheck command") {
    const Result toy = run_cli({"gradcheck"});
    CHECK(toy.code == 0);
    CHECK(toy.out.find("max relative error") != std::string::npos);
    CHECK(toy.out.find("PASS") != std::string::npos);

    const Result one = run_cli({"gradcheck", "--op", "softmax"});
    CHECK(one.code == 0);
    CHECK(one.out.rfind("softmax max relative error", 0) == 0);
    CHECK(std::count(one.out.begin(), one.out.end(), '\n') == 1);

    const Result all = run_cli({"gradcheck", "--op", "all"});
    CHECK(all.code == 0);
    CHECK(all.out.find("FAIL") == std::string::npos);

    const Result strict = run_cli({"gradcheck", "--tolerance", "0"});
    CHECK(strict.code != 0);
    CHECK(strict.out.find("FAIL") != std::string::npos);

    const Result unknown = run_cli({"gradcheck", "--op", "conv"});
    CHECK(unknown.code != 0);
    CHECK(unknown.err.find("unknown op") != std::string::npos);
}

TEST_CASE("command line errors") {
    CHECK(run_cli({}).code != 0);
    CHECK(run_cli({"plot"}).code != 0);
    CHECK(run_cli({"train"}).code != 0);
    const Result help = run_cli({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("run config presets and validation") {
    const DatasetPreset& sanyo = dataset_preset("sanyo");
    CHECK(sanyo.input_len == 20);
    CHECK(sanyo.horizon == 20);
    CHECK(sanyo.d_hid == 12);
    CHECK(dataset_preset("electricity").input_len == 168);
    CHECK(dataset_preset("electricity").learning_rate == 0.001);
    CHECK(dataset_preset("exchange").use_id_embedding);
    CHECK_THROWS_AS(dataset_preset("traffic"), ConfigError);

    const RunConfig rc = RunConfig::from_json({{"preset", "solar"}, {"data", "solar.csv"}});
    CHECK(rc.train.encoder.input_len == 24);
    CHECK(rc.train.encoder.dropout == 0.1);
    CHECK(rc.train.period == 24);
    CHECK(rc.resolved_eval_stride() == 24);
    CHECK(RunConfig::from_json(rc.to_json()).to_json() == rc.to_json());

    const RunConfig over = RunConfig::from_json({{"preset", "sanyo"}, {"model", {{"d_hid", 8}}}});
    CHECK(over.train.encoder.d_hid == 8);
    CHECK(over.train.encoder.n_layers == 2);

    CHECK_THROWS_AS(RunConfig::from_json({{"window", {{"input_len", 0}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"model", {{"encoder", "gru"}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"split", {{"val", 1}, {"tets", 1}}}}), ConfigError);
}
