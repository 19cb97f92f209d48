#include "textlearn/attention.hpp"

#include <atomic>
#include <cmath>
#include <memory>
#include <string>

namespace textlearn {

namespace {
std::atomic<std::uint64_t> g_score_evals{0};
}

std::uint64_t attention_score_evals() { return g_score_evals.load(); }
void reset_attention_score_evals() { g_score_evals.store(0); }

AttentionMask build_attention_mask(const EncodedSequence& encoded, const AttentionConfig& config) {
    const std::size_t len = encoded.max_len();
    for (std::size_t g : config.global_positions) {
        if (g >= len) throw ValueError("build_attention_mask: global position out of sequence bounds");
    }
    AttentionMask mask(len, len, false);
    for (std::size_t t = 0; t < len; ++t) {
        const bool pad_row = t >= encoded.true_length;
        bool t_global = false;
        for (std::size_t g : config.global_positions) t_global = t_global || g == t;
        for (std::size_t s = 0; s < len; ++s) {
            if (encoded.attention_mask[s] == 0) continue;  // never attend to padding
            if (pad_row) {
                mask.set(t, s, true);
                continue;
            }
            if (config.causal && s > t) continue;
            bool ok = true;
            if (config.variant == AttentionVariant::kSliding) {
                const std::size_t dist = t > s ? t - s : s - t;
                ok = dist <= config.window || t_global;
                if (!ok) {
                    for (std::size_t g : config.global_positions) ok = ok || g == s;
                }
            }
            if (ok) mask.set(t, s, true);
        }
    }
    return mask;
}

Var scaled_dot_attention(Tape& tape, Var q, Var k, Var v, const AttentionMask* mask, Tensor* weights_out) {
    const Tensor& qv = tape.value(q);
    const Tensor& kv = tape.value(k);
    const Tensor& vv = tape.value(v);
    if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2) {
        throw ShapeError("scaled_dot_attention: Q, K, V must be 2D");
    }
    if (qv.cols() != kv.cols()) throw ShapeError("scaled_dot_attention: Q and K dims differ");
    if (kv.rows() != vv.rows()) throw ShapeError("scaled_dot_attention: K and V lengths differ");
    const std::size_t t_len = qv.rows(), s_len = kv.rows(), dim = qv.cols(), v_dim = vv.cols();
    if (mask && (mask->rows() != t_len || mask->cols() != s_len)) {
        throw ShapeError("scaled_dot_attention: mask shape must be T x T*");
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));

    // Sparse rows of (column, weight); scores evaluated only where allowed.
    struct RowEntry {
        std::uint32_t col;
        double weight;
    };
    auto rows = std::make_shared<std::vector<std::vector<RowEntry>>>(t_len);
    Tensor context({t_len, v_dim});
    for (std::size_t t = 0; t < t_len; ++t) {
        auto& row = (*rows)[t];
        for (std::size_t s = 0; s < s_len; ++s) {
            if (mask && !mask->allowed(t, s)) continue;
            double score = 0.0;
            for (std::size_t j = 0; j < dim; ++j) score += qv.at(t, j) * kv.at(s, j);
            row.push_back({static_cast<std::uint32_t>(s), score * inv_sqrt_d});
        }
        if (row.empty()) {
            throw ContractError("scaled_dot_attention: row " + std::to_string(t) +
                                " is fully masked; no token may attend to nothing");
        }
        g_score_evals += row.size();
        double mx = row[0].weight;
        for (const auto& e : row) mx = std::max(mx, e.weight);
        double denom = 0.0;
        for (auto& e : row) {
            e.weight = std::exp(e.weight - mx);
            denom += e.weight;
        }
        for (auto& e : row) {
            e.weight /= denom;
            for (std::size_t j = 0; j < v_dim; ++j) context.at(t, j) += e.weight * vv.at(e.col, j);
        }
    }

    if (weights_out) {
        *weights_out = Tensor({t_len, s_len});
        for (std::size_t t = 0; t < t_len; ++t) {
            for (const auto& e : (*rows)[t]) weights_out->at(t, e.col) = e.weight;
        }
    }

    return tape.custom({q, k, v}, std::move(context), [rows, t_len, s_len, dim, v_dim, inv_sqrt_d](
                                                          const Tape::CustomCtx& ctx) {
        const Tensor& qv2 = *ctx.input_values[0];
        const Tensor& kv2 = *ctx.input_values[1];
        const Tensor& vv2 = *ctx.input_values[2];
        const Tensor& dc = *ctx.out_grad;
        Tensor* dq = ctx.input_grads[0];
        Tensor* dk = ctx.input_grads[1];
        Tensor* dv = ctx.input_grads[2];
        (void)s_len;
        std::vector<double> dw;
        for (std::size_t t = 0; t < t_len; ++t) {
            const auto& row = (*rows)[t];
            dw.assign(row.size(), 0.0);
            double dot = 0.0;
            for (std::size_t i = 0; i < row.size(); ++i) {
                const auto& e = row[i];
                double acc = 0.0;
                for (std::size_t j = 0; j < v_dim; ++j) acc += dc.at(t, j) * vv2.at(e.col, j);
                dw[i] = acc;
                dot += acc * e.weight;
                if (dv) {
                    for (std::size_t j = 0; j < v_dim; ++j) dv->at(e.col, j) += e.weight * dc.at(t, j);
                }
            }
            for (std::size_t i = 0; i < row.size(); ++i) {
                const auto& e = row[i];
                const double ds = e.weight * (dw[i] - dot) * inv_sqrt_d;
                if (dq) {
                    for (std::size_t j = 0; j < dim; ++j) dq->at(t, j) += ds * kv2.at(e.col, j);
                }
                if (dk) {
                    for (std::size_t j = 0; j < dim; ++j) dk->at(e.col, j) += ds * qv2.at(t, j);
                }
            }
        }
    });
}

EncoderLayerParams EncoderLayerParams::init(std::size_t hidden, std::size_t ffn_dim, Rng& rng, double init_std) {
    auto normal = [&](std::size_t r, std::size_t c) {
        Tensor t({r, c});
        for (double& x : t.data()) x = rng.gaussian(0.0, init_std);
        return t;
    };
    EncoderLayerParams p;
    p.w_query = Parameter(normal(hidden, hidden));
    p.w_key = Parameter(normal(hidden, hidden));
    p.w_value = Parameter(normal(hidden, hidden));
    p.w_output = Parameter(normal(hidden, hidden));
    p.w_ffn_in = Parameter(normal(hidden, ffn_dim));
    p.b_ffn_in = Parameter(Tensor({ffn_dim}));
    p.w_ffn_out = Parameter(normal(ffn_dim, hidden));
    p.b_ffn_out = Parameter(Tensor({hidden}));
    p.ln_attn_gain = Parameter(Tensor::full({hidden}, 1.0));
    p.ln_attn_bias = Parameter(Tensor({hidden}));
    p.ln_ffn_gain = Parameter(Tensor::full({hidden}, 1.0));
    p.ln_ffn_bias = Parameter(Tensor({hidden}));
    return p;
}

void EncoderLayerParams::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".w_query", &w_query});
    out.push_back({prefix + ".w_key", &w_key});
    out.push_back({prefix + ".w_value", &w_value});
    out.push_back({prefix + ".w_output", &w_output});
    out.push_back({prefix + ".w_ffn_in", &w_ffn_in});
    out.push_back({prefix + ".b_ffn_in", &b_ffn_in});
    out.push_back({prefix + ".w_ffn_out", &w_ffn_out});
    out.push_back({prefix + ".b_ffn_out", &b_ffn_out});
    out.push_back({prefix + ".ln_attn_gain", &ln_attn_gain});
    out.push_back({prefix + ".ln_attn_bias", &ln_attn_bias});
    out.push_back({prefix + ".ln_ffn_gain", &ln_ffn_gain});
    out.push_back({prefix + ".ln_ffn_bias", &ln_ffn_bias});
}

Var multi_head_self_attention(Tape& tape, Var x, EncoderLayerParams& params, const AttentionConfig& config,
                              const AttentionMask* mask, Tensor* weights_out) {
    config.validate();
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 2 || xv.cols() != config.model_dim) {
        throw ShapeError("multi_head_self_attention: input must be T x model_dim");
    }
    const std::size_t t_len = xv.rows();
    const std::size_t heads = config.num_heads;
    const std::size_t dim = config.head_dim();

    Var queries = tape.matmul(x, tape.param(params.w_query));
    Var keys = tape.matmul(x, tape.param(params.w_key));
    Var values = tape.matmul(x, tape.param(params.w_value));

    if (weights_out) *weights_out = Tensor({heads, t_len, t_len});
    std::vector<Var> contexts;
    contexts.reserve(heads);
    for (std::size_t a = 0; a < heads; ++a) {
        Var qa = tape.slice_cols(queries, a * dim, dim);
        Var ka = tape.slice_cols(keys, a * dim, dim);
        Var va = tape.slice_cols(values, a * dim, dim);
        Tensor head_weights;
        contexts.push_back(
            scaled_dot_attention(tape, qa, ka, va, mask, weights_out ? &head_weights : nullptr));
        if (weights_out) {
            std::copy(head_weights.data().begin(), head_weights.data().end(),
                      weights_out->data().begin() + a * t_len * t_len);
        }
    }
    return tape.matmul(tape.concat_cols(contexts), tape.param(params.w_output));
}

Var encoder_layer(Tape& tape, Var x, EncoderLayerParams& params, const AttentionConfig& config,
                  const AttentionMask* mask, double dropout_p, bool training, Rng& rng,
                  Activation activation) {
    Var attended = multi_head_self_attention(tape, x, params, config, mask);
    Var after_attn = tape.layer_norm(tape.add(tape.dropout(attended, dropout_p, training, rng), x),
                                     tape.param(params.ln_attn_gain), tape.param(params.ln_attn_bias));
    Var inner = tape.add_row(tape.matmul(after_attn, tape.param(params.w_ffn_in)), tape.param(params.b_ffn_in));
    Var activated = activation == Activation::kGelu ? tape.gelu(inner) : tape.relu(inner);
    Var ffn = tape.add_row(tape.matmul(activated, tape.param(params.w_ffn_out)), tape.param(params.b_ffn_out));
    return tape.layer_norm(tape.add(tape.dropout(ffn, dropout_p, training, rng), after_attn),
                           tape.param(params.ln_ffn_gain), tape.param(params.ln_ffn_bias));
}

Var encoder_stack(Tape& tape, Var x, std::vector<EncoderLayerParams>& layers, const AttentionConfig& config,
                  const AttentionMask* mask, double dropout_p, bool training, Rng& rng,
                  Activation activation) {
    if (layers.empty()) throw ValueError("encoder_stack: at least one layer required");
    Var h = x;
    for (auto& layer : layers) {
        h = encoder_layer(tape, h, layer, config, mask, dropout_p, training, rng, activation);
    }
    return h;
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
    if (dim % 2 != 0) throw ValueError("sinusoidal_positions: dim must be even");
    Tensor out({length, dim});
    for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
            out.at(t, 2 * i) = std::sin(static_cast<double>(t) * freq);
            out.at(t, 2 * i + 1) = std::cos(static_cast<double>(t) * freq);
        }
    }
    return out;
}

}  // namespace textlearn
