#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "ssdnet/errors.hpp"
#include "ssdnet/model.hpp"

using namespace ssdnet;

namespace {

TrainConfig toy_config(EncoderKind kind = EncoderKind::transformer, std::size_t horizon = 3) {
    TrainConfig c;
    c.encoder.kind = kind;
    c.encoder.d_hid = 4;
    c.encoder.n_layers = 1;
    c.encoder.n_heads = 1;
    c.encoder.d_kv = 4;
    c.encoder.input_len = 6;
    c.encoder.horizon = horizon;
    c.period = 3;
    c.batch_size = 8;
    c.seed = 3;
    return c;
}

std::vector<WindowSample> toy_windows(std::size_t horizon = 3, std::size_t length = 60, std::uint64_t seed = 7) {
    SynthConfig s;
    s.length = length;
    s.period = 3;
    s.seed = seed;
    const NormalizedTable n = normalize(synth_generate(s));
    return make_windows(n.table, 6, horizon, 1);
}

void zero_heads(ModelBundle& b) {
    for (const char* name : {"head.init.weight", "head.init.bias", "head.innovation.weight", "head.innovation.bias",
                             "head.variance.weight", "head.variance.bias"}) {
        for (double& v : b.params.at(name).value.data()) v = 0.0;
    }
}

std::vector<double> reference_decode(ModelBundle& bundle, const WindowSample& w) {
    const EncoderConfig& ec = bundle.config.encoder;
    const std::size_t f = 1 + ec.n_covariates, t_l = ec.input_len;
    const std::size_t ids[1] = {w.series};
    std::vector<double> preds;
    for (std::size_t t = 0; t < ec.horizon; ++t) {
        Tensor features = encoder_features(std::span(&w, 1), ec);
        for (std::size_t k = 1; k < ec.horizon; ++k) features[(t_l + k) * f] = k <= t ? preds[k - 1] : 0.0;
        Tape tape;
        preds.push_back(forward(tape, bundle, features, ids, nullptr).means.value()[t]);
    }
    return preds;
}

}  // namespace

TEST_CASE("train config json round trip and validation") {
    TrainConfig c = toy_config(EncoderKind::lstm);
    c.learning_rate = 0.001;
    c.patience = 4;
    const TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.encoder.kind == EncoderKind::lstm);

    nlohmann::json j = c.to_json();
    j["momentum"] = 0.9;
    try {
        TrainConfig::from_json(j);
        FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("momentum") != std::string::npos);
    }
    c.max_epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.max_epochs = 200;
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(TrainConfig{}.max_epochs == 200);
    CHECK(TrainConfig{}.loss.a == 0.5);
}

TEST_CASE("bundle parameters match the transition system") {
    ModelBundle b = ModelBundle::create(toy_config());
    CHECK(b.system.period() == 3);
    CHECK(b.params.at("head.innovation.weight").value.shape() == Shape{4, 3});
    CHECK(b.params.at("head.init.bias").value.shape() == Shape{3});
    CHECK(b.params.at("head.variance.weight").value.shape() == Shape{4, 1});
}

TEST_CASE("zero heads give zero means and ln 2 variance") {
    ModelBundle b = ModelBundle::create(toy_config());
    zero_heads(b);
    const auto windows = toy_windows();
    const auto batch = std::span(windows).first(5);
    const TrainForward r = forward_train(b, batch);
    double expected = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const ForecastPath& p = r.paths[i];
        for (std::size_t t = 0; t < 3; ++t) {
            CHECK(p.mean[t] == 0.0);
            CHECK(p.trend[t] == 0.0);
            CHECK(p.seasonality[t] == 0.0);
            CHECK(p.variance[t] == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
        }
        const std::vector<double> zeros(3, 0.0), var(3, std::numbers::ln2);
        expected += composite_loss(zeros, var, batch[i].targets, b.config.loss) / 5.0;
    }
    CHECK(r.loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("identical samples give identical outputs") {
    ModelBundle b = ModelBundle::create(toy_config());
    const auto windows = toy_windows();
    const std::vector<WindowSample> batch(4, windows[2]);
    const TrainForward r = forward_train(b, batch);
    for (std::size_t i = 1; i < 4; ++i) {
        CHECK(r.paths[i].mean == r.paths[0].mean);
        CHECK(r.paths[i].variance == r.paths[0].variance);
        CHECK(composite_loss(r.paths[i].mean, r.paths[i].variance, batch[i].targets, b.config.loss) ==
              composite_loss(r.paths[0].mean, r.paths[0].variance, batch[0].targets, b.config.loss));
    }
}

TEST_CASE("forward paths respect the state bounds") {
    for (EncoderKind kind : {EncoderKind::transformer, EncoderKind::lstm}) {
        ModelBundle b = ModelBundle::create(toy_config(kind));
        for (auto& p : b.params.all())
            for (double& v : p->value.data()) v *= 40.0;
        const auto windows = toy_windows();
        const TrainForward r = forward_train(b, windows);
        for (const ForecastPath& p : r.paths) {
            for (std::size_t t = 0; t < p.size(); ++t) {
                const StateBounds bound = state_bounds(static_cast<int>(t + 1), 3);
                CHECK(std::fabs(p.trend[t]) <= bound.trend);
                CHECK(p.variance[t] > 0.0);
                CHECK(p.q50[t] == p.mean[t]);
                CHECK(p.q90[t] >= p.q50[t]);
            }
        }
        ModelBundle plain = ModelBundle::create(toy_config(kind));
        for (const ForecastPath& p : forward_train(plain, windows).paths) {
            for (std::size_t t = 0; t < p.size(); ++t) CHECK(p.q90[t] > p.q50[t]);
        }
    }
}

TEST_CASE("toy model gradient matches finite differences") {
    for (EncoderKind kind : {EncoderKind::transformer, EncoderKind::lstm}) {
        ModelBundle b = ModelBundle::create(toy_config(kind));
        const auto windows = toy_windows();
        const GradCheckResult r = model_grad_check(b, std::span(windows).first(4));
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("adam step oracle") {
    Parameter p;
    p.value = Tensor(Shape{2}, {1.0, -2.0});
    p.grad = Tensor(Shape{2}, {0.5, -4.0});
    Adam adam({&p}, 0.1);
    adam.step();
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(p.value[1] == doctest::Approx(-1.9).epsilon(1e-7));
    adam.step();
    CHECK(p.value[0] == doctest::Approx(0.8).epsilon(1e-7));
    CHECK(adam.steps() == 2);
}

TEST_CASE("gradient clipping by global norm") {
    Parameter a, b;
    a.value = Tensor(Shape{1});
    b.value = Tensor(Shape{1});
    a.grad = Tensor(Shape{1}, {3.0});
    b.grad = Tensor(Shape{1}, {4.0});
    std::vector<Parameter*> ps{&a, &b};
    CHECK(clip_grad_norm(ps, 1.0) == 5.0);
    CHECK(a.grad[0] == doctest::Approx(0.6));
    CHECK(b.grad[0] == doctest::Approx(0.8));
    CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(1.0));
    CHECK(a.grad[0] == doctest::Approx(0.6));
}

TEST_CASE("training reduces the loss and keeps the best weights") {
    const auto train_w = toy_windows(3, 120, 7);
    const auto val_w = toy_windows(3, 40, 8);
    TrainConfig c = toy_config();
    c.max_epochs = 12;
    c.patience = 3;
    c.learning_rate = 0.02;
    TrainResult r = train(c, train_w, val_w);
    REQUIRE(r.log.epochs.size() >= 5);
    CHECK(r.log.epochs[4].train_loss < r.log.epochs[0].train_loss);
    double best = r.log.epochs[0].val_loss;
    for (const auto& e : r.log.epochs) best = std::min(best, e.val_loss);
    CHECK(r.log.best_val_loss == best);
    CHECK(r.log.epochs[r.log.best_epoch - 1].val_loss == best);
    CHECK(mean_loss(r.bundle, val_w) == best);
}

TEST_CASE("patience zero with one epoch returns the epoch-one weights") {
    const auto windows = toy_windows();
    TrainConfig c = toy_config();
    c.max_epochs = 1;
    c.patience = 0;
    TrainResult r = train(c, windows, windows);
    REQUIRE(r.log.epochs.size() == 1);
    CHECK(r.log.best_epoch == 1);
    CHECK(r.log.stop_reason == "max epochs");
    CHECK(mean_loss(r.bundle, windows) == r.log.epochs[0].val_loss);
    CHECK_THROWS_AS(train(c, windows, {}), ContractError);
}

TEST_CASE("identical seeds give identical logs") {
    const auto windows = toy_windows();
    TrainConfig c = toy_config(EncoderKind::lstm);
    c.max_epochs = 3;
    c.encoder.dropout = 0.1;
    const TrainResult a = train(c, windows, windows);
    const TrainResult b = train(c, windows, windows);
    REQUIRE(a.log.epochs.size() == b.log.epochs.size());
    for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
        CHECK(a.log.epochs[i].train_loss == b.log.epochs[i].train_loss);
        CHECK(a.log.epochs[i].val_loss == b.log.epochs[i].val_loss);
    }
    c.seed = 4;
    const TrainResult other = train(c, windows, windows);
    CHECK(other.log.epochs[0].train_loss != a.log.epochs[0].train_loss);
}

TEST_CASE("single-step decode equals the teacher-forced step") {
    for (EncoderKind kind : {EncoderKind::transformer, EncoderKind::lstm}) {
        ModelBundle b = ModelBundle::create(toy_config(kind, 1));
        const auto windows = toy_windows(1);
        const ForecastPath decoded = decode_normalized(b, windows[3]);
        const TrainForward tf = forward_train(b, std::span(windows).subspan(3, 1));
        CHECK(decoded.mean == tf.paths[0].mean);
        CHECK(decoded.variance == tf.paths[0].variance);
    }
}

TEST_CASE("decoding feeds back the predicted median") {
    for (EncoderKind kind : {EncoderKind::transformer, EncoderKind::lstm}) {
        ModelBundle b = ModelBundle::create(toy_config(kind));
        for (auto& p : b.params.all())
            for (double& v : p->value.data()) v *= 3.0;
        const auto windows = toy_windows();
        const WindowSample& w = windows[5];

        const ForecastPath path = decode_normalized(b, w);
        const std::vector<double> ref = reference_decode(b, w);
        for (std::size_t t = 0; t < 3; ++t) CHECK(path.mean[t] == doctest::Approx(ref[t]).epsilon(1e-12));

        // Injecting a different step-1 value changes step 2 but not step 1.
        const EncoderConfig& ec = b.config.encoder;
        const std::size_t ids[1] = {w.series};
        Tensor features = encoder_features(std::span(&w, 1), ec);
        features[(ec.input_len + 1)] = path.mean[0];
        features[(ec.input_len + 2)] = 0.0;
        Tape t1;
        const Tensor base = forward(t1, b, features, ids, nullptr).means.value();
        features[(ec.input_len + 1)] = path.mean[0] + 1.0;
        Tape t2;
        const Tensor probe = forward(t2, b, features, ids, nullptr).means.value();
        CHECK(base[0] == probe[0]);
        CHECK(base[1] != probe[1]);
        CHECK(base[1] == doctest::Approx(path.mean[1]).epsilon(1e-12));

        CHECK(decode_normalized(b, w).mean == path.mean);
    }
}

TEST_CASE("decoding without horizon covariates is rejected") {
    TrainConfig c = toy_config();
    c.encoder.n_covariates = 1;
    ModelBundle b = ModelBundle::create(c);
    WindowSample w = toy_windows()[0];
    w.n_features = 1;
    w.covariates.assign(6, 0.0);
    CHECK_THROWS_AS(decode_forecast(b, w), ContractError);
    w.covariates.assign(9, 0.0);
    CHECK(decode_forecast(b, w).size() == 3);
}

TEST_CASE("decoded paths are denormalized") {
    ModelBundle b = ModelBundle::create(toy_config());
    b.stats = {{10.0, 2.0}};
    const WindowSample w = toy_windows()[1];
    const ForecastPath n = decode_normalized(b, w);
    const ForecastPath d = decode_forecast(b, w);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(d.trend[t] == doctest::Approx(n.trend[t] * 2.0 + 10.0));
        CHECK(d.seasonality[t] == doctest::Approx(n.seasonality[t] * 2.0));
        CHECK(d.variance[t] == doctest::Approx(n.variance[t] * 4.0));
        CHECK(d.mean[t] == d.trend[t] + d.seasonality[t]);
    }
}

TEST_CASE("evaluation of an exact predictor is zero") {
    ModelBundle b = ModelBundle::create(toy_config());
    zero_heads(b);
    b.stats = {{5.0, 2.0}};
    auto windows = toy_windows();
    for (auto& w : windows) w.targets.assign(3, 0.0);
    const MetricsReport m = evaluate(b, windows);
    CHECK(m.rho50 == 0.0);
    CHECK(m.mae == 0.0);
    CHECK_THROWS_AS(evaluate(b, {}), ContractError);
}

TEST_CASE("persistence metrics on two hand windows") {
    WindowSample a, c;
    a.inputs = {1, 2, 3, 4};
    a.targets = {5, 3};
    c.inputs = {0, 0, -2, 2};
    c.targets = {-1, 1};
    const std::vector<WindowSample> ws{a, c};
    // forecasts [3, 4] and [-2, 2]: |err| = 2, 1, 1, 1; sum |y| = 10
    const MetricsReport m = evaluate_persistence(ws, 2, {});
    CHECK(m.rho50 == doctest::Approx(5.0 / 10.0).epsilon(1e-15));
    CHECK(m.mae == doctest::Approx(5.0 / 4.0));
    const std::vector<NormalizationStats> stats{{0.0, 2.0}};
    CHECK(evaluate_persistence(ws, 2, stats).rho50 == doctest::Approx(0.5));
}

TEST_CASE("metrics do not depend on window order") {
    ModelBundle b = ModelBundle::create(toy_config());
    b.stats = {{1.0, 3.0}};
    auto windows = toy_windows();
    const MetricsReport fwd = evaluate(b, windows);
    std::reverse(windows.begin(), windows.end());
    const MetricsReport rev = evaluate(b, windows);
    CHECK(rev.rho50 == doctest::Approx(fwd.rho50).epsilon(1e-12));
    CHECK(rev.rho90 == doctest::Approx(fwd.rho90).epsilon(1e-12));
    CHECK(rev.mae == doctest::Approx(fwd.mae).epsilon(1e-12));
}
