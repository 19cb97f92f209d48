#pragma once

#include <optional>
#include <string>
#include <vector>

#include "textlearn/attention.hpp"
#include "textlearn/common.hpp"
#include "textlearn/tape.hpp"
#include "textlearn/tokenizer.hpp"

namespace textlearn {

/// Architecture sizes and knobs for the encoder model.
struct ModelConfig {
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t hidden = 128;
    std::size_t ffn_dim = 512;
    std::size_t vocab_size = 8192;
    std::size_t max_positions = 512;
    AttentionVariant variant = AttentionVariant::kFull;
    std::size_t window = 0;
    std::vector<std::size_t> global_positions;
    double dropout = 0.1;
    Activation activation = Activation::kGelu;

    void validate() const;
    AttentionConfig attention() const;
    std::vector<std::pair<std::string, std::string>> to_fields() const;
    static ModelConfig from_fields(const std::vector<std::pair<std::string, std::string>>& fields);
};

/// Token + learned position + segment embedding tables with the shared
/// embedding layer norm.
struct InputEmbeddings {
    Parameter token, position, segment, ln_gain, ln_bias;

    static InputEmbeddings init(const ModelConfig& config, Rng& rng, double init_std = 0.02);
    void collect(std::vector<NamedParam>& out);
};

/// Pretraining output layers: masked-token prediction over the vocabulary
/// and the two-way next-segment head read from the [CLS] state.
struct PretrainHeads {
    Parameter mlm_weight, mlm_bias, nsp_weight, nsp_bias;

    static PretrainHeads init(const ModelConfig& config, Rng& rng, double init_std = 0.02);
    void collect(std::vector<NamedParam>& out);
};

/// Task head for sequence classification (no bias; o = softmax(h W)).
struct ClassifierHead {
    Parameter weight;  // hidden x categories

    ClassifierHead() = default;
    ClassifierHead(std::size_t hidden, std::size_t categories, Rng& rng, double init_std = 0.02);
    std::size_t categories() const { return weight.value.cols(); }
};

// ---- masked language modeling ----

struct MaskingOptions {
    double rate = 0.15;
    double mask_share = 0.8;    // of selected: replaced by [MASK]
    double random_share = 0.1;  // of selected: replaced by a random token
};

/// One sequence after corruption. mlm_targets holds the original id at every
/// selected position and kIgnoreIndex elsewhere.
struct MaskedSequence {
    EncodedSequence encoded;
    std::vector<int> mlm_targets;
    std::size_t num_selected = 0;
};

/// Selects content positions (never [CLS]/[SEP]/[PAD] or any reserved id)
/// independently with probability rate, then applies the 80/10/10 rule.
MaskedSequence mask_tokens(const EncodedSequence& encoded, std::size_t vocab_size, Rng& rng,
                           const MaskingOptions& options = {});

// ---- next sentence prediction ----

inline constexpr int kNotNext = 0;
inline constexpr int kIsNext = 1;

struct SegmentPair {
    std::string first, second;
    int label;  // kIsNext or kNotNext
};

/// For each adjacent segment pair in each document, emits the true successor
/// with probability 1 - negative_fraction, otherwise a random segment from a
/// different document labeled kNotNext.
std::vector<SegmentPair> make_nsp_pairs(const std::vector<std::vector<std::string>>& documents, Rng& rng,
                                        double negative_fraction = 0.5);

/// One pretraining example: an encoded segment pair plus its NSP label.
struct PretrainExample {
    EncodedSequence encoded;
    int nsp_label;
};

// ---- model ----

class BertModel {
public:
    BertModel(ModelConfig config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }
    void set_dropout(double p) { config_.dropout = p; }

    /// Final hidden states (T x H) for one encoded sequence.
    Var encode(Tape& tape, const EncodedSequence& seq, bool training, Rng& rng);

    struct PretrainVars {
        Var mlm_logits;  // T x U
        Var nsp_logits;  // 1 x 2
    };
    PretrainVars forward_pretrain(Tape& tape, const EncodedSequence& corrupted, bool training, Rng& rng);

    /// Unnormalized class scores (1 x C) from the final [CLS] state.
    Var class_logits(Tape& tape, const EncodedSequence& seq, ClassifierHead& head, bool training, Rng& rng);

    /// Class probabilities in evaluation mode.
    std::vector<double> classify(const EncodedSequence& seq, ClassifierHead& head);

    /// All parameters in stable manifest order (excludes task heads).
    std::vector<NamedParam> named_params();

    ModelConfig config_;
    InputEmbeddings embeddings;
    std::vector<EncoderLayerParams> layers;
    PretrainHeads heads;
};

/// Batch pretraining loss: the masked-token cross entropy averaged over all
/// selected positions in the batch plus the pair-label cross entropy averaged
/// over the batch. Throws ContractError when no position is selected.
Var pretrain_loss(Tape& tape, const std::vector<Var>& mlm_logits, const std::vector<std::vector<int>>& mlm_targets,
                  Var nsp_logits, const std::vector<int>& nsp_labels);

// ---- checkpointing ----

/// Writes config, an ordered parameter manifest, and raw little-endian f64
/// data. Round trips are byte-exact.
void save_checkpoint(BertModel& model, const std::string& path, ClassifierHead* head = nullptr);

/// Rebuilds a model (and optionally a classifier head) from a checkpoint.
BertModel load_checkpoint(const std::string& path, std::optional<ClassifierHead>* head_out = nullptr);

/// Loads into an existing model; throws IoError naming the offending field
/// when the stored config or any shape disagrees.
void load_checkpoint_into(BertModel& model, const std::string& path);

}  // namespace textlearn
