#pragma once

#include <cstdint>
#include <vector>

#include "textlearn/common.hpp"
#include "textlearn/tape.hpp"
#include "textlearn/tensor.hpp"
#include "textlearn/tokenizer.hpp"

namespace textlearn {

enum class Activation { kGelu, kRelu };

enum class AttentionVariant { kFull, kSliding };

/// Attention geometry. In the sliding variant each token attends to a window
/// of `window` tokens on each side plus the designated global positions;
/// global positions attend everywhere and are attended by everyone.
struct AttentionConfig {
    std::size_t num_heads = 1;
    std::size_t model_dim = 0;
    AttentionVariant variant = AttentionVariant::kFull;
    std::size_t window = 0;
    std::vector<std::size_t> global_positions;
    bool causal = false;

    std::size_t head_dim() const { return model_dim / num_heads; }
    void validate() const {
        if (num_heads == 0 || model_dim == 0 || model_dim % num_heads != 0) {
            throw ValueError("AttentionConfig: model_dim must be a positive multiple of num_heads");
        }
    }
};

/// Boolean T-by-T* attention mask; true means "may attend".
class AttentionMask {
public:
    AttentionMask(std::size_t rows, std::size_t cols, bool allow_all = true)
        : rows_(rows), cols_(cols), bits_(rows * cols, allow_all ? 1 : 0) {}

    void set(std::size_t t, std::size_t s, bool allowed) { bits_[t * cols_ + s] = allowed ? 1 : 0; }
    bool allowed(std::size_t t, std::size_t s) const { return bits_[t * cols_ + s] != 0; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    /// Number of allowed (t, s) pairs; the score-evaluation cost of one pass.
    std::uint64_t allowed_count() const {
        std::uint64_t n = 0;
        for (auto b : bits_) n += b;
        return n;
    }

private:
    std::size_t rows_, cols_;
    std::vector<std::uint8_t> bits_;
};

/// Mask for one encoded sequence: padding keys are never attended to, the
/// causal flag hides later positions, and the sliding variant restricts
/// content rows to window plus globals. Rows at padding positions keep all
/// content columns so no row is left with nothing to attend to; their output
/// is unused and cannot reach content positions.
AttentionMask build_attention_mask(const EncodedSequence& encoded, const AttentionConfig& config);

/// Running count of attention score evaluations (q.k dot products). The
/// sliding variant must stay linear in sequence length for fixed window.
std::uint64_t attention_score_evals();
void reset_attention_score_evals();

/// Scaled dot-product attention over the tape. Scores are evaluated only for
/// mask-allowed pairs; disallowed pairs get exactly zero weight, identical to
/// adding -1e30 before the softmax. A row with no allowed position throws
/// ContractError. If weights_out is given it receives the T-by-T* weights.
Var scaled_dot_attention(Tape& tape, Var q, Var k, Var v, const AttentionMask* mask = nullptr,
                         Tensor* weights_out = nullptr);

/// Weights of one encoder layer. Projections are fused H-by-H matrices that
/// are split per head inside the attention call.
struct EncoderLayerParams {
    Parameter w_query, w_key, w_value, w_output;
    Parameter w_ffn_in, b_ffn_in, w_ffn_out, b_ffn_out;
    Parameter ln_attn_gain, ln_attn_bias, ln_ffn_gain, ln_ffn_bias;

    static EncoderLayerParams init(std::size_t hidden, std::size_t ffn_dim, Rng& rng, double init_std = 0.02);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

Var multi_head_self_attention(Tape& tape, Var x, EncoderLayerParams& params, const AttentionConfig& config,
                              const AttentionMask* mask = nullptr, Tensor* weights_out = nullptr);

/// Post-norm encoder layer: attention and feedforward sublayers, each with
/// dropout, a residual connection, and layer normalization.
Var encoder_layer(Tape& tape, Var x, EncoderLayerParams& params, const AttentionConfig& config,
                  const AttentionMask* mask, double dropout_p, bool training, Rng& rng,
                  Activation activation = Activation::kRelu);

Var encoder_stack(Tape& tape, Var x, std::vector<EncoderLayerParams>& layers, const AttentionConfig& config,
                  const AttentionMask* mask, double dropout_p, bool training, Rng& rng,
                  Activation activation = Activation::kRelu);

/// Sine/cosine positional encodings with frequencies 10000^(-2i/H).
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

}  // namespace textlearn
