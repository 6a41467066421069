#include "ssdnet/encoder.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ssdnet/errors.hpp"

namespace ssdnet {

std::string to_string(EncoderKind kind) { return kind == EncoderKind::transformer ? "transformer" : "lstm"; }

EncoderKind parse_encoder_kind(std::string_view text) {
    if (text == "transformer") return EncoderKind::transformer;
    if (text == "lstm") return EncoderKind::lstm;
    throw ConfigError("unknown encoder kind '" + std::string(text) + "' (expected transformer or lstm)");
}

void EncoderConfig::validate() const {
    if (d_hid == 0 || n_layers == 0 || input_len == 0 || horizon == 0 || n_series == 0) {
        throw ConfigError("encoder extents must be positive");
    }
    if (kind == EncoderKind::transformer && (d_kv == 0 || n_heads == 0)) {
        throw ConfigError("transformer needs positive d_kv and n_heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

namespace {

std::string layer_prefix(std::size_t layer) { return "encoder.layer" + std::to_string(layer) + "."; }

void add_linear(ParameterStore& params, const std::string& name, std::size_t in, std::size_t out,
                std::mt19937_64& rng, bool bias = true) {
    params.add(name + ".weight", xavier_uniform(in, out, rng));
    if (bias) params.add(name + ".bias", Tensor(Shape{out}));
}

Var linear(Tape& tape, ParameterStore& params, const std::string& name, Var x) {
    Var y = matmul(x, params.var(tape, name + ".weight"));
    if (params.contains(name + ".bias")) y = add(y, params.var(tape, name + ".bias"));
    return y;
}

Var norm(Tape& tape, ParameterStore& params, const std::string& name, Var x) {
    return layer_norm(x, params.var(tape, name + ".gain"), params.var(tape, name + ".bias"));
}

void add_norm(ParameterStore& params, const std::string& name, std::size_t d) {
    params.add(name + ".gain", Tensor(Shape{d}, 1.0));
    params.add(name + ".bias", Tensor(Shape{d}));
}

}  // namespace

void init_encoder(ParameterStore& params, const EncoderConfig& config, std::mt19937_64& rng) {
    config.validate();
    const std::size_t d = config.d_hid;
    add_linear(params, "embed.input", 1 + config.n_covariates, d, rng);
    params.add("embed.position", normal_tensor(Shape{config.seq_len(), d}, 0.1, rng));
    if (config.use_id_embedding) params.add("embed.series", normal_tensor(Shape{config.n_series, d}, 0.1, rng));

    if (config.kind == EncoderKind::transformer) {
        const std::size_t w = config.attn_width();
        for (std::size_t l = 0; l < config.n_layers; ++l) {
            const std::string p = layer_prefix(l);
            add_norm(params, p + "ln1", d);
            add_linear(params, p + "attn.q", d, w, rng, false);
            add_linear(params, p + "attn.k", d, w, rng, false);
            add_linear(params, p + "attn.v", d, w, rng, false);
            add_linear(params, p + "attn.out", w, d, rng);
            add_norm(params, p + "ln2", d);
            add_linear(params, p + "ffn.in", d, config.ffn_width(), rng);
            add_linear(params, p + "ffn.out", config.ffn_width(), d, rng);
        }
        add_norm(params, "encoder.final_ln", d);
    } else {
        for (std::size_t l = 0; l < config.n_layers; ++l) {
            const std::string p = "encoder.lstm" + std::to_string(l) + ".";
            params.add(p + "w_input", xavier_uniform(d, 4 * d, rng));
            params.add(p + "w_hidden", xavier_uniform(d, 4 * d, rng));
            Tensor bias(Shape{4 * d});
            // Gate order i, f, g, o; open the forget gate initially.
            for (std::size_t j = d; j < 2 * d; ++j) bias[j] = 1.0;
            params.add(p + "bias", std::move(bias));
        }
    }
}

Tensor encoder_features(std::span<const WindowSample> windows, const EncoderConfig& config) {
    const std::size_t len = config.seq_len(), f = 1 + config.n_covariates;
    Tensor out(Shape{windows.size(), len, f});
    for (std::size_t b = 0; b < windows.size(); ++b) {
        const WindowSample& w = windows[b];
        if (w.input_len() != config.input_len || w.horizon() != config.horizon) {
            throw ContractError("window geometry " + std::to_string(w.input_len()) + "+" +
                                std::to_string(w.horizon()) + " does not match the encoder");
        }
        if (w.n_features != config.n_covariates) {
            throw ContractError("window has " + std::to_string(w.n_features) + " covariates, encoder expects " +
                                std::to_string(config.n_covariates));
        }
        for (std::size_t t = 0; t < len; ++t) {
            double* row = out.data().data() + (b * len + t) * f;
            row[0] = w.lagged[t];
            for (std::size_t c = 0; c < config.n_covariates; ++c) row[1 + c] = w.covariates[t * config.n_covariates + c];
        }
    }
    return out;
}

Var embed_inputs(Tape& tape, ParameterStore& params, const EncoderConfig& config, const Tensor& features,
                 std::span<const std::size_t> series_ids) {
    Tape::Scope scope(tape, "embed");
    const std::size_t f = 1 + config.n_covariates;
    if (features.rank() != 3 || features.dim(1) != config.seq_len() || features.dim(2) != f) {
        throw ContractError("embed_inputs: features " + shape_str(features.shape()) + " do not match [B, " +
                            std::to_string(config.seq_len()) + ", " + std::to_string(f) + "]");
    }
    const std::size_t batch = features.dim(0);
    Var x = linear(tape, params, "embed.input", tape.constant(features));
    x = add(x, params.var(tape, "embed.position"));
    if (config.use_id_embedding) {
        if (series_ids.size() != batch) throw ContractError("embed_inputs: one series id per sample required");
        std::vector<std::size_t> rows;
        rows.reserve(batch * config.seq_len());
        for (std::size_t b = 0; b < batch; ++b) rows.insert(rows.end(), config.seq_len(), series_ids[b]);
        x = add(x, embedding(params.var(tape, "embed.series"), rows, Shape{batch, config.seq_len()}));
    }
    return x;
}

Var causal_self_attention(Tape& tape, ParameterStore& params, const EncoderConfig& config, Var x,
                          std::size_t layer, std::vector<AttentionMap>* maps) {
    const std::string p = layer_prefix(layer) + "attn.";
    const std::size_t len = x.dim(1), dk = config.d_kv;
    std::vector<std::uint8_t> mask(len * len, 0);
    for (std::size_t q = 0; q < len; ++q)
        for (std::size_t k = 0; k <= q; ++k) mask[q * len + k] = 1;

    Var q = linear(tape, params, p + "q", x);
    Var k = linear(tape, params, p + "k", x);
    Var v = linear(tape, params, p + "v", x);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < config.n_heads; ++h) {
        Var qh = slice(q, -1, h * dk, (h + 1) * dk);
        Var kh = slice(k, -1, h * dk, (h + 1) * dk);
        Var vh = slice(v, -1, h * dk, (h + 1) * dk);
        Var scores = affine(matmul(qh, transpose_last2(kh)), scale);
        Var weights = softmax_last(scores, &mask);
        if (maps != nullptr) {
            const Tensor& w = weights.value();
            const std::size_t batch = w.dim(0);
            for (std::size_t b = 0; b < batch; ++b) {
                AttentionMap m{layer, h, b, len, len, {}};
                m.weights.assign(w.data().begin() + b * len * len, w.data().begin() + (b + 1) * len * len);
                maps->push_back(std::move(m));
            }
        }
        weights = dropout(weights, config.dropout);
        heads.push_back(matmul(weights, vh));
    }
    Var merged = heads.size() == 1 ? heads.front() : concat_last(heads);
    return linear(tape, params, p + "out", merged);
}

EncoderOutput transformer_forward(Tape& tape, ParameterStore& params, const EncoderConfig& config, Var embedded,
                                  bool capture_attention) {
    EncoderOutput out;
    std::vector<AttentionMap>* maps = (capture_attention && !tape.training()) ? &out.attention : nullptr;
    Var x = dropout(embedded, config.dropout);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        Tape::Scope scope(tape, "encoder.layer" + std::to_string(l));
        const std::string p = layer_prefix(l);
        Var attn = causal_self_attention(tape, params, config, norm(tape, params, p + "ln1", x), l, maps);
        x = add(x, dropout(attn, config.dropout));
        Var h = relu(linear(tape, params, p + "ffn.in", norm(tape, params, p + "ln2", x)));
        x = add(x, dropout(linear(tape, params, p + "ffn.out", h), config.dropout));
    }
    x = norm(tape, params, "encoder.final_ln", x);
    out.latents = slice(x, 1, config.input_len, config.seq_len());
    return out;
}

Var lstm_forward(Tape& tape, ParameterStore& params, const EncoderConfig& config, Var embedded) {
    const std::size_t batch = embedded.dim(0), len = embedded.dim(1), d = config.d_hid;
    Var layer_input = embedded;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        Tape::Scope scope(tape, "encoder.lstm" + std::to_string(l));
        const std::string p = "encoder.lstm" + std::to_string(l) + ".";
        Var x = dropout(layer_input, config.dropout);
        // Input contributions for every position at once: [B, L, 4d].
        Var gates_in = add(matmul(x, params.var(tape, p + "w_input")), params.var(tape, p + "bias"));
        Var w_hidden = params.var(tape, p + "w_hidden");
        Var h = tape.constant(Tensor(Shape{batch, d}));
        Var c = tape.constant(Tensor(Shape{batch, d}));
        std::vector<Var> outputs;
        outputs.reserve(len);
        for (std::size_t t = 0; t < len; ++t) {
            Var g = add(reshape(slice(gates_in, 1, t, t + 1), Shape{batch, 4 * d}), matmul(h, w_hidden));
            Var in_gate = sigmoid(slice(g, -1, 0, d));
            Var forget = sigmoid(slice(g, -1, d, 2 * d));
            Var cand = tanh(slice(g, -1, 2 * d, 3 * d));
            Var out_gate = sigmoid(slice(g, -1, 3 * d, 4 * d));
            c = add(mul(forget, c), mul(in_gate, cand));
            h = mul(out_gate, tanh(c));
            outputs.push_back(reshape(h, Shape{batch, 1, d}));
        }
        layer_input = concat(outputs, 1);
    }
    return slice(layer_input, 1, config.input_len, config.seq_len());
}

EncoderOutput encode(Tape& tape, ParameterStore& params, const EncoderConfig& config, const Tensor& features,
                     std::span<const std::size_t> series_ids, bool capture_attention) {
    Var embedded = embed_inputs(tape, params, config, features, series_ids);
    if (config.kind == EncoderKind::transformer) {
        return transformer_forward(tape, params, config, embedded, capture_attention);
    }
    return EncoderOutput{lstm_forward(tape, params, config, embedded), {}};
}

std::vector<std::filesystem::path> export_attention(std::span<const AttentionMap> maps,
                                                    const std::filesystem::path& dir) {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const AttentionMap& m : maps) {
        if (!seen.insert({m.layer, m.head}).second) {
            throw ContractError("export_attention expects maps of a single sample");
        }
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> files;
    for (const AttentionMap& m : maps) {
        const auto file =
            dir / ("attention_layer" + std::to_string(m.layer) + "_head" + std::to_string(m.head) + ".csv");
        std::ofstream out(file);
        if (!out) throw IoError("cannot write " + file.string());
        char buf[64];
        for (std::size_t r = 0; r < m.rows; ++r) {
            for (std::size_t c = 0; c < m.cols; ++c) {
                if (c) out << ',';
                const auto [ptr, ec2] = std::to_chars(buf, buf + sizeof(buf), m.at(r, c));
                out.write(buf, ptr - buf);
            }
            out << '\n';
        }
        if (!out) throw IoError("failed writing " + file.string());
        files.push_back(file);
    }
    return files;
}

AttentionMap read_attention_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    AttentionMap m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t cols = 0;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) comma = line.size();
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + comma, v);
            if (ec != std::errc()) throw IngestError(file.string() + ": malformed attention value");
            m.weights.push_back(v);
            ++cols;
            pos = comma + 1;
        }
        if (m.rows == 0) {
            m.cols = cols;
        } else if (cols != m.cols) {
            throw IngestError(file.string() + ": ragged attention rows");
        }
        ++m.rows;
    }
    return m;
}

}  // namespace ssdnet
