#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssdnet/data.hpp"
#include "ssdnet/encoder.hpp"
#include "ssdnet/gradcheck.hpp"
#include "ssdnet/loss.hpp"
#include "ssdnet/parameters.hpp"
#include "ssdnet/ssm.hpp"

namespace ssdnet {

struct TrainConfig {
    EncoderConfig encoder;
    int period = 24;
    LossConfig loss;
    double learning_rate = 0.005;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    std::uint64_t seed = 1;
    double clip_norm = 5.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
    nlohmann::json to_json() const;
    /// Rejects unknown keys; missing keys keep their defaults.
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Everything needed to run a trained model.
struct ModelBundle {
    TrainConfig config;
    ParameterStore params;
    TransitionSystem system;
    std::vector<NormalizationStats> stats;
    std::vector<std::string> series_ids;
    /// Opaque run description carried through checkpoints.
    nlohmann::json run_config = nlohmann::json::object();

    /// Fresh parameters drawn from config.seed.
    static ModelBundle create(const TrainConfig& config);
    const NormalizationStats& stats_for(std::size_t series) const;
};

/// Tape-level outputs of one forward pass; all [B, T_h] in normalised units.
struct ForwardResult {
    Var means;
    Var variances;
    Var trend;
    Var seasonality;
    Var loss;
    std::vector<AttentionMap> attention;
};

/// Encoder latents -> initial state, innovations and variances -> unrolled
/// state-space path. `targets` ([B, T_h]) adds the composite loss.
ForwardResult forward(Tape& tape, ModelBundle& bundle, const Tensor& features,
                      std::span<const std::size_t> series_ids, const Tensor* targets, bool capture_attention = false);

struct TrainForward {
    double loss = 0.0;
    /// Normalised-unit paths, one per window.
    std::vector<ForecastPath> paths;
};

/// Teacher-forced eval-mode forward pass over a batch.
TrainForward forward_train(ModelBundle& bundle, std::span<const WindowSample> batch);

/// Mean composite loss over windows, evaluated in batches (eval mode).
double mean_loss(ModelBundle& bundle, std::span<const WindowSample> windows);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::string stop_reason;

    /// epoch,train_loss,val_loss,wall_ms
    void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
    ModelBundle bundle;
    TrainingLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on mini-batches with global-norm clipping; keeps the weights of the
/// epoch with the lowest validation loss.
TrainResult train(const TrainConfig& config, std::span<const WindowSample> train_windows,
                  std::span<const WindowSample> val_windows, std::vector<NormalizationStats> stats = {},
                  const EpochCallback& on_epoch = {});

/// Autoregressive decoding: horizon step t reads the predicted mean of step
/// t-1 as its lagged target. Returns the path in original units.
ForecastPath decode_forecast(ModelBundle& bundle, const WindowSample& window,
                             std::vector<AttentionMap>* attention = nullptr);
/// Same as decode_forecast but in normalised units.
ForecastPath decode_normalized(ModelBundle& bundle, const WindowSample& window,
                               std::vector<AttentionMap>* attention = nullptr);

/// Decodes every window and pools quantile losses in original units.
MetricsReport evaluate(ModelBundle& bundle, std::span<const WindowSample> windows);

/// Quantile losses of the persistence baseline on the same windows.
MetricsReport evaluate_persistence(std::span<const WindowSample> windows, std::size_t span,
                                   std::span<const NormalizationStats> stats,
                                   std::span<const std::string> series_ids = {});

/// Finite-difference check of the composite loss w.r.t. every parameter on
/// a teacher-forced batch.
GradCheckResult model_grad_check(ModelBundle& bundle, std::span<const WindowSample> batch, double eps = 1e-5);

class Adam {
public:
    Adam(std::vector<Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step();
    std::size_t steps() const { return t_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

/// Scales gradients so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace ssdnet
