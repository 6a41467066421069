#pragma once

// Sequence encoders producing one latent vector per horizon position.
//
// Both encoders read the joint sequence of T_l conditioning steps followed
// by T_h horizon steps. Position t carries [y_{t-1}, x_t] and may only
// depend on positions <= t.

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssdnet/autodiff.hpp"
#include "ssdnet/data.hpp"
#include "ssdnet/parameters.hpp"

namespace ssdnet {

enum class EncoderKind { transformer, lstm };

std::string to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view text);

struct EncoderConfig {
    EncoderKind kind = EncoderKind::transformer;
    std::size_t d_hid = 16;
    std::size_t n_layers = 2;
    std::size_t d_kv = 6;
    std::size_t n_heads = 2;
    double dropout = 0.0;
    std::size_t input_len = 24;
    std::size_t horizon = 24;
    bool use_id_embedding = false;
    std::size_t n_series = 1;
    /// Covariate columns per step (table covariates plus calendar features).
    std::size_t n_covariates = 0;

    std::size_t seq_len() const { return input_len + horizon; }
    std::size_t attn_width() const { return n_heads * d_kv; }
    std::size_t ffn_width() const { return 4 * d_hid; }
    void validate() const;
};

/// Softmax weights of one head for one sample: rows are query positions,
/// columns key positions.
struct AttentionMap {
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t sample = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> weights;

    double at(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
};

/// Creates every embedding and encoder parameter for `config`.
void init_encoder(ParameterStore& params, const EncoderConfig& config, std::mt19937_64& rng);

/// [B, T_l + T_h, 1 + n_covariates] with the lagged target in channel 0.
Tensor encoder_features(std::span<const WindowSample> windows, const EncoderConfig& config);

/// Affine projection of each position's features plus the learned position
/// embedding and, when enabled, the learned series embedding.
Var embed_inputs(Tape& tape, ParameterStore& params, const EncoderConfig& config, const Tensor& features,
                 std::span<const std::size_t> series_ids);

/// Multi-head scaled dot-product self-attention with a causal mask over
/// x ([B, L, d_hid]); returns the output projection, without residual.
Var causal_self_attention(Tape& tape, ParameterStore& params, const EncoderConfig& config, Var x,
                          std::size_t layer, std::vector<AttentionMap>* maps);

struct EncoderOutput {
    /// [B, T_h, d_hid]
    Var latents;
    std::vector<AttentionMap> attention;
};

EncoderOutput transformer_forward(Tape& tape, ParameterStore& params, const EncoderConfig& config, Var embedded,
                                  bool capture_attention);
/// Stacked LSTM; returns the top layer's states at horizon positions.
Var lstm_forward(Tape& tape, ParameterStore& params, const EncoderConfig& config, Var embedded);

/// Embedding followed by the configured encoder. Attention maps are only
/// captured on eval-mode tapes.
EncoderOutput encode(Tape& tape, ParameterStore& params, const EncoderConfig& config, const Tensor& features,
                     std::span<const std::size_t> series_ids, bool capture_attention = false);

/// One CSV per (layer, head) map named attention_layer<l>_head<h>.csv:
/// rows are query steps, columns key steps, no header.
std::vector<std::filesystem::path> export_attention(std::span<const AttentionMap> maps,
                                                    const std::filesystem::path& dir);
AttentionMap read_attention_csv(const std::filesystem::path& file);

}  // namespace ssdnet
