#include "ssdnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "ssdnet/errors.hpp"

namespace ssdnet {

namespace {

using nlohmann::json;

template <class T>
void read_key(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    for (const auto& [k, v] : j.items()) {
        if (std::find_if(keys.begin(), keys.end(), [&](const char* known) { return k == known; }) == keys.end()) {
            throw ConfigError("unknown key '" + k + "' in " + where);
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    encoder.validate();
    if (period < 2) throw ConfigError("seasonality period s must be >= 2");
    if (!(loss.a >= 0.0)) throw ConfigError("loss weight a must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (max_epochs == 0) throw ConfigError("max epochs must be >= 1");
    if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be > 0");
}

json TrainConfig::to_json() const {
    return json{{"encoder",
                 {{"kind", to_string(encoder.kind)},
                  {"d_hid", encoder.d_hid},
                  {"n_layers", encoder.n_layers},
                  {"d_kv", encoder.d_kv},
                  {"n_heads", encoder.n_heads},
                  {"dropout", encoder.dropout},
                  {"input_len", encoder.input_len},
                  {"horizon", encoder.horizon},
                  {"use_id_embedding", encoder.use_id_embedding},
                  {"n_series", encoder.n_series},
                  {"n_covariates", encoder.n_covariates}}},
                {"period", period},
                {"a", loss.a},
                {"learning_rate", learning_rate},
                {"batch_size", batch_size},
                {"max_epochs", max_epochs},
                {"patience", patience},
                {"seed", seed},
                {"clip_norm", clip_norm},
                {"beta1", beta1},
                {"beta2", beta2},
                {"adam_eps", adam_eps}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    reject_unknown(j,
                   {"encoder", "period", "a", "learning_rate", "batch_size", "max_epochs", "patience", "seed",
                    "clip_norm", "beta1", "beta2", "adam_eps"},
                   "train config");
    TrainConfig c;
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        reject_unknown(e,
                       {"kind", "d_hid", "n_layers", "d_kv", "n_heads", "dropout", "input_len", "horizon",
                        "use_id_embedding", "n_series", "n_covariates"},
                       "encoder config");
        if (e.contains("kind")) c.encoder.kind = parse_encoder_kind(e.at("kind").get<std::string>());
        read_key(e, "d_hid", c.encoder.d_hid);
        read_key(e, "n_layers", c.encoder.n_layers);
        read_key(e, "d_kv", c.encoder.d_kv);
        read_key(e, "n_heads", c.encoder.n_heads);
        read_key(e, "dropout", c.encoder.dropout);
        read_key(e, "input_len", c.encoder.input_len);
        read_key(e, "horizon", c.encoder.horizon);
        read_key(e, "use_id_embedding", c.encoder.use_id_embedding);
        read_key(e, "n_series", c.encoder.n_series);
        read_key(e, "n_covariates", c.encoder.n_covariates);
    }
    read_key(j, "period", c.period);
    read_key(j, "a", c.loss.a);
    read_key(j, "learning_rate", c.learning_rate);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "max_epochs", c.max_epochs);
    read_key(j, "patience", c.patience);
    read_key(j, "seed", c.seed);
    read_key(j, "clip_norm", c.clip_norm);
    read_key(j, "beta1", c.beta1);
    read_key(j, "beta2", c.beta2);
    read_key(j, "adam_eps", c.adam_eps);
    return c;
}

ModelBundle ModelBundle::create(const TrainConfig& config) {
    config.validate();
    ModelBundle b;
    b.config = config;
    b.system = build_transition_system(config.period);
    std::mt19937_64 rng(config.seed);
    init_encoder(b.params, config.encoder, rng);
    const std::size_t d = config.encoder.d_hid, s = static_cast<std::size_t>(config.period);
    auto small = [&](std::size_t out) {
        Tensor w = xavier_uniform(d, out, rng);
        for (double& v : w.data()) v *= 0.1;
        return w;
    };
    b.params.add("head.init.weight", small(s));
    b.params.add("head.init.bias", Tensor(Shape{s}));
    b.params.add("head.innovation.weight", small(s));
    b.params.add("head.innovation.bias", Tensor(Shape{s}));
    b.params.add("head.variance.weight", small(1));
    b.params.add("head.variance.bias", Tensor(Shape{1}));
    return b;
}

const NormalizationStats& ModelBundle::stats_for(std::size_t series) const {
    static const NormalizationStats identity{};
    if (stats.empty()) return identity;
    if (series >= stats.size()) throw ContractError("no normalization statistics for series " + std::to_string(series));
    return stats[series];
}

ForwardResult forward(Tape& tape, ModelBundle& bundle, const Tensor& features,
                      std::span<const std::size_t> series_ids, const Tensor* targets, bool capture_attention) {
    const TrainConfig& cfg = bundle.config;
    ParameterStore& params = bundle.params;
    const std::size_t batch = features.dim(0), horizon = cfg.encoder.horizon, d = cfg.encoder.d_hid;
    const std::size_t s = bundle.system.size();

    EncoderOutput enc = encode(tape, params, cfg.encoder, features, series_ids, capture_attention);
    Tape::Scope scope(tape, "ssm");
    Var latents = enc.latents;
    auto head = [&](const char* name, Var x) {
        const std::string p = std::string("head.") + name;
        return add(matmul(x, params.var(tape, p + ".weight")), params.var(tape, p + ".bias"));
    };
    // g_c(x) = HardSigmoid(x) - 0.5
    auto g_c = [](Var x) { return affine(hard_sigmoid(x), 1.0, -0.5); };

    Var first = reshape(slice(latents, 1, 0, 1), Shape{batch, d});
    Var alpha = g_c(head("init", first));
    Var innovations = g_c(head("innovation", latents));
    Var variances = reshape(softplus(head("variance", latents)), Shape{batch, horizon});

    std::vector<double> gamma_t(s * s);
    for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c) gamma_t[c * s + r] = bundle.system.gamma(r, c);
    Var transition = tape.constant(Tensor(Shape{s, s}, std::move(gamma_t)));

    std::vector<Var> means, trends, seasonals;
    for (std::size_t t = 0; t < horizon; ++t) {
        Var c = reshape(slice(innovations, 1, t, t + 1), Shape{batch, s});
        alpha = add(matmul(alpha, transition), c);
        Var trend = slice(alpha, -1, 0, 1);
        Var seasonal = slice(alpha, -1, 1, 2);
        trends.push_back(trend);
        seasonals.push_back(seasonal);
        means.push_back(add(trend, seasonal));
    }
    ForwardResult out;
    out.means = concat_last(means);
    out.trend = concat_last(trends);
    out.seasonality = concat_last(seasonals);
    out.variances = variances;
    out.attention = std::move(enc.attention);
    if (targets != nullptr) {
        out.loss = composite_loss(out.means, out.variances, tape.constant(*targets), cfg.loss);
    }
    return out;
}

namespace {

Tensor horizon_targets(std::span<const WindowSample> windows) {
    const std::size_t h = windows.front().horizon();
    Tensor t(Shape{windows.size(), h});
    for (std::size_t b = 0; b < windows.size(); ++b) std::copy_n(windows[b].targets.begin(), h, t.data().begin() + b * h);
    return t;
}

std::vector<std::size_t> series_of(std::span<const WindowSample> windows) {
    std::vector<std::size_t> ids;
    for (const auto& w : windows) ids.push_back(w.series);
    return ids;
}

std::vector<ForecastPath> extract_paths(const ForwardResult& r) {
    const Tensor& m = r.means.value();
    const std::size_t batch = m.dim(0), h = m.dim(1);
    std::vector<ForecastPath> paths(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        ForecastPath& p = paths[b];
        for (std::size_t t = 0; t < h; ++t) {
            p.mean.push_back(m[b * h + t]);
            p.variance.push_back(r.variances.value()[b * h + t]);
            p.trend.push_back(r.trend.value()[b * h + t]);
            p.seasonality.push_back(r.seasonality.value()[b * h + t]);
        }
        p.fill_quantiles();
    }
    return paths;
}

}  // namespace

TrainForward forward_train(ModelBundle& bundle, std::span<const WindowSample> batch) {
    if (batch.empty()) throw ContractError("forward_train on an empty batch");
    Tape tape;
    const Tensor features = encoder_features(batch, bundle.config.encoder);
    const Tensor targets = horizon_targets(batch);
    const auto ids = series_of(batch);
    ForwardResult r = forward(tape, bundle, features, ids, &targets);
    return {r.loss.value().item(), extract_paths(r)};
}

GradCheckResult model_grad_check(ModelBundle& bundle, std::span<const WindowSample> batch, double eps) {
    if (batch.empty()) throw ContractError("model_grad_check on an empty batch");
    const Tensor features = encoder_features(batch, bundle.config.encoder);
    const Tensor targets = horizon_targets(batch);
    const auto ids = series_of(batch);
    std::vector<Parameter*> params = bundle.params.all();
    return grad_check_parameters(
        [&](Tape& tape) { return forward(tape, bundle, features, ids, &targets).loss; }, params, eps);
}

double mean_loss(ModelBundle& bundle, std::span<const WindowSample> windows) {
    if (windows.empty()) throw ContractError("mean_loss over no windows");
    const std::size_t bs = bundle.config.batch_size;
    double total = 0.0;
    for (std::size_t i = 0; i < windows.size(); i += bs) {
        const auto chunk = windows.subspan(i, std::min(bs, windows.size() - i));
        total += forward_train(bundle, chunk).loss * static_cast<double>(chunk.size());
    }
    return total / static_cast<double>(windows.size());
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,train_loss,val_loss,wall_ms\n";
    char buf[160];
    for (const auto& e : epochs) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.3f\n", e.epoch, e.train_loss, e.val_loss, e.wall_ms);
        out << buf;
    }
    if (!out) throw IoError("failed writing " + path.string());
}

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
            v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
            p.value[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
        }
    }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
    double sq = 0.0;
    for (const Parameter* p : params)
        for (double g : p->grad.data()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (Parameter* p : params)
            for (double& g : p->grad.data()) g *= scale;
    }
    return norm;
}

TrainResult train(const TrainConfig& config, std::span<const WindowSample> train_windows,
                  std::span<const WindowSample> val_windows, std::vector<NormalizationStats> stats,
                  const EpochCallback& on_epoch) {
    if (train_windows.empty() || val_windows.empty()) throw ContractError("train needs non-empty train and val sets");
    TrainResult result{ModelBundle::create(config), {}};
    ModelBundle& bundle = result.bundle;
    bundle.stats = std::move(stats);
    TrainingLog& log = result.log;

    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Parameter*> params = bundle.params.all();
    Adam adam(params, config.learning_rate, config.beta1, config.beta2, config.adam_eps);

    std::vector<Tensor> best;
    auto snapshot = [&] {
        best.clear();
        for (const Parameter* p : params) best.push_back(p->value);
    };
    auto restore = [&] {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    };

    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<WindowSample> batch;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        bool diverged = false;
        for (std::size_t i = 0; i < order.size() && !diverged; i += config.batch_size) {
            batch.clear();
            for (std::size_t j = i; j < std::min(order.size(), i + config.batch_size); ++j)
                batch.push_back(train_windows[order[j]]);
            try {
                Tape tape(true, rng());
                const Tensor features = encoder_features(batch, config.encoder);
                const Tensor targets = horizon_targets(batch);
                const auto ids = series_of(batch);
                ForwardResult r = forward(tape, bundle, features, ids, &targets);
                const double loss = r.loss.value().item();
                if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
                bundle.params.zero_grad();
                tape.backward(r.loss);
                const double norm = clip_grad_norm(params, config.clip_norm);
                if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
                adam.step();
                total += loss * static_cast<double>(batch.size());
            } catch (const NumericError& e) {
                diverged = true;
                log.stop_reason = std::string("diverged: ") + e.what();
            }
        }
        if (diverged) {
            if (best.empty()) throw NumericError("training diverged in the first epoch: " + log.stop_reason);
            restore();
            return result;
        }
        const double val = mean_loss(bundle, val_windows);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        EpochRecord rec{epoch, total / static_cast<double>(order.size()), val, ms};
        log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (best.empty() || val < log.best_val_loss) {
            log.best_val_loss = val;
            log.best_epoch = epoch;
            snapshot();
            since_best = 0;
        } else if (++since_best > config.patience) {
            log.stop_reason = "early stop";
            break;
        }
    }
    if (log.stop_reason.empty()) log.stop_reason = "max epochs";
    restore();
    return result;
}

ForecastPath decode_normalized(ModelBundle& bundle, const WindowSample& window, std::vector<AttentionMap>* attention) {
    const EncoderConfig& ec = bundle.config.encoder;
    if (window.covariates.size() != ec.seq_len() * ec.n_covariates || window.timestamps.size() < ec.seq_len()) {
        throw ContractError("decode_forecast: horizon covariates are missing");
    }
    const std::size_t horizon = ec.horizon, t_l = ec.input_len, f = 1 + ec.n_covariates;
    Tensor features = encoder_features(std::span(&window, 1), ec);
    // Horizon lags start at zero and are filled with predicted means step by step.
    for (std::size_t t = t_l + 1; t < ec.seq_len(); ++t) features[t * f] = 0.0;
    const std::size_t ids[1] = {window.series};
    for (std::size_t t = 1; t < horizon; ++t) {
        Tape tape;
        ForwardResult r = forward(tape, bundle, features, ids, nullptr);
        features[(t_l + t) * f] = r.means.value()[t - 1];
    }
    Tape tape;
    ForwardResult r = forward(tape, bundle, features, ids, nullptr, attention != nullptr);
    if (attention != nullptr) *attention = std::move(r.attention);
    return extract_paths(r).front();
}

ForecastPath decode_forecast(ModelBundle& bundle, const WindowSample& window, std::vector<AttentionMap>* attention) {
    return denormalize_components(decode_normalized(bundle, window, attention), bundle.stats_for(window.series));
}

namespace {

std::string series_name(std::span<const std::string> ids, std::size_t index) {
    return index < ids.size() ? ids[index] : "s" + std::to_string(index);
}

}  // namespace

MetricsReport evaluate(ModelBundle& bundle, std::span<const WindowSample> windows) {
    if (windows.empty()) throw ContractError("evaluate on an empty test set");
    MetricsAccumulator acc;
    for (const WindowSample& w : windows) {
        const ForecastPath path = decode_forecast(bundle, w);
        acc.add(path, denormalize(w.targets, bundle.stats_for(w.series)), series_name(bundle.series_ids, w.series));
    }
    return acc.report();
}

MetricsReport evaluate_persistence(std::span<const WindowSample> windows, std::size_t span,
                                   std::span<const NormalizationStats> stats, std::span<const std::string> series_ids) {
    if (windows.empty()) throw ContractError("evaluate on an empty test set");
    MetricsAccumulator acc;
    for (const WindowSample& w : windows) {
        const NormalizationStats st = w.series < stats.size() ? stats[w.series] : NormalizationStats{};
        const auto point = denormalize(persistence_forecast(w, span), st);
        acc.add(denormalize(w.targets, st), point, point, series_name(series_ids, w.series));
    }
    return acc.report();
}

}  // namespace ssdnet
