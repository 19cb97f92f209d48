#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "textlearn/common.hpp"

namespace textlearn {

/// Subword vocabulary with fixed reserved ids. Continuation pieces carry the
/// "##" marker in their stored form.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr int kMask = 4;
    static constexpr std::size_t kNumSpecials = 5;

    Vocabulary();

    /// Adds a term; returns its id (existing id if already present).
    int add(const std::string& term);
    /// Id of a term, or -1 when absent.
    int id(const std::string& term) const;
    const std::string& term(int id) const;
    std::size_t size() const { return id_to_term_.size(); }
    bool contains(const std::string& term) const { return id(term) >= 0; }
    static bool is_special(int id) { return id >= 0 && id < static_cast<int>(kNumSpecials); }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::unordered_map<std::string, int> term_to_id_;
    std::vector<std::string> id_to_term_;
};

/// Ordered merge rules; rank equals position. Rules are stored on surface
/// form (no continuation marker).
struct MergeTable {
    std::vector<std::pair<std::string, std::string>> rules;

    void save(const std::string& path) const;
    static MergeTable load(const std::string& path);
};

enum class MergeScoring {
    kFrequency,   // most frequent adjacent pair
    kLikelihood,  // count(ab) / (count(a) * count(b))
};

struct SubwordVocab {
    Vocabulary vocab;
    MergeTable merges;
};

/// Trains a subword vocabulary by greedy pair merging until target_size
/// entries exist or no adjacent pair occurs at least twice.
SubwordVocab train_subword_vocab(const std::vector<std::string>& corpus, std::size_t target_size,
                                 MergeScoring scoring = MergeScoring::kFrequency, bool lowercase = true);

/// One padded, id-encoded input text ready for the model.
struct EncodedSequence {
    std::vector<int> token_ids;
    std::vector<int> segment_ids;
    std::vector<int> position_ids;
    std::vector<int> attention_mask;  // 1 = real token, 0 = padding
    std::size_t true_length = 0;

    std::size_t max_len() const { return token_ids.size(); }
};

struct TruncationPolicy {
    enum Mode {
        kHeadTail,  // keep the first `head` and last `tail` content tokens
        kTail,      // keep only the trailing content tokens that fit
    };
    Mode mode = kHeadTail;
    std::size_t head = 128;
    std::size_t tail = 382;
};

struct EncodeOptions {
    std::size_t max_len = 128;
    TruncationPolicy truncation;
    bool lowercase = true;
};

/// Immutable tokenizer: vocabulary plus merge table. encode/decode are pure.
class SubwordTokenizer {
public:
    SubwordTokenizer(Vocabulary vocab, MergeTable merges)
        : vocab_(std::move(vocab)), merges_(std::move(merges)) {}

    static SubwordTokenizer train(const std::vector<std::string>& corpus, std::size_t target_size,
                                  MergeScoring scoring = MergeScoring::kFrequency) {
        auto sv = train_subword_vocab(corpus, target_size, scoring);
        return SubwordTokenizer(std::move(sv.vocab), std::move(sv.merges));
    }

    const Vocabulary& vocab() const { return vocab_; }
    const MergeTable& merges() const { return merges_; }

    /// Content token ids of a text (no specials, no padding).
    std::vector<int> tokenize(const std::string& text, bool lowercase = true) const;

    EncodedSequence encode(const std::string& text, const EncodeOptions& options = {},
                           const std::string* pair = nullptr) const;

    std::string decode(const std::vector<int>& ids) const;

    void save(const std::string& vocab_path, const std::string& merges_path) const {
        vocab_.save(vocab_path);
        merges_.save(merges_path);
    }
    static SubwordTokenizer load(const std::string& vocab_path, const std::string& merges_path) {
        return SubwordTokenizer(Vocabulary::load(vocab_path), MergeTable::load(merges_path));
    }

private:
    Vocabulary vocab_;
    MergeTable merges_;
};

/// Splits text into words: lowercases (ASCII), breaks on Unicode whitespace,
/// and separates ASCII punctuation into single-character tokens.
std::vector<std::string> pre_tokenize(const std::string& text, bool lowercase = true);

}  // namespace textlearn
