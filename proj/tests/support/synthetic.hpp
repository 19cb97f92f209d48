#pragma once

// Deterministic synthetic text worlds for training and transfer tests.

#include <string>
#include <vector>

#include "textlearn/common.hpp"

namespace synthetic {

struct LabeledText {
    std::string text;
    int label;
};

/// Distinct pronounceable-ish words over a fixed letter set.
inline std::vector<std::string> word_pool(const std::string& letters, std::size_t count, textlearn::Rng& rng,
                                          std::size_t min_len = 3, std::size_t max_len = 5) {
    std::vector<std::string> pool;
    std::size_t guard = 0;
    while (pool.size() < count && guard < count * 200) {
        ++guard;
        std::string w;
        const std::size_t len = min_len + rng.uniform_index(max_len - min_len + 1);
        for (std::size_t i = 0; i < len; ++i) w += letters[rng.uniform_index(letters.size())];
        bool fresh = true;
        for (const auto& existing : pool) fresh = fresh && existing != w;
        if (fresh) pool.push_back(w);
    }
    return pool;
}

/// Two topical word clusters plus shared filler words. Sentences draw mostly
/// from one cluster, so masked-token prediction learns the clusters and a
/// topic classifier can ride on that structure.
struct TopicWorld {
    std::vector<std::string> topic_a, topic_b, fillers;

    static TopicWorld make(textlearn::Rng& rng, std::size_t words_per_topic = 30, std::size_t filler_count = 12) {
        TopicWorld w;
        w.topic_a = word_pool("bcdgl", words_per_topic, rng);
        w.topic_b = word_pool("mnprs", words_per_topic, rng);
        w.fillers = word_pool("teoia", filler_count, rng, 2, 3);
        return w;
    }

    std::string sentence(int topic, textlearn::Rng& rng, std::size_t min_words = 5,
                         std::size_t max_words = 9) const {
        const auto& pool = topic == 0 ? topic_a : topic_b;
        std::string out;
        const std::size_t n = min_words + rng.uniform_index(max_words - min_words + 1);
        for (std::size_t i = 0; i < n; ++i) {
            if (i) out += ' ';
            if (rng.bernoulli(0.3)) {
                out += fillers[rng.uniform_index(fillers.size())];
            } else {
                out += pool[rng.uniform_index(pool.size())];
            }
        }
        return out;
    }

    /// Topic-coherent documents (segment lists) for next-segment pairing.
    std::vector<std::vector<std::string>> documents(std::size_t count, textlearn::Rng& rng,
                                                    std::size_t min_segments = 3,
                                                    std::size_t max_segments = 5) const {
        std::vector<std::vector<std::string>> docs;
        for (std::size_t d = 0; d < count; ++d) {
            const int topic = static_cast<int>(d % 2);
            std::vector<std::string> segments;
            const std::size_t n = min_segments + rng.uniform_index(max_segments - min_segments + 1);
            for (std::size_t s = 0; s < n; ++s) segments.push_back(sentence(topic, rng));
            docs.push_back(std::move(segments));
        }
        return docs;
    }

    /// Flat sentence corpus (tokenizer training and plain MLM pretraining).
    std::vector<std::string> corpus(std::size_t sentences, textlearn::Rng& rng) const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < sentences; ++i) out.push_back(sentence(static_cast<int>(i % 2), rng));
        return out;
    }

    /// Balanced topic-classification instances.
    std::vector<LabeledText> task(std::size_t count, textlearn::Rng& rng) const {
        std::vector<LabeledText> out;
        for (std::size_t i = 0; i < count; ++i) {
            const int topic = static_cast<int>(i % 2);
            out.push_back({sentence(topic, rng), topic});
        }
        return out;
    }
};

/// Word-order task whose bag-of-words is uninformative by construction: each
/// generated pair shares one token multiset; the label only depends on
/// whether marker_a or marker_b comes first.
struct OrderWorld {
    std::string marker_a = "veb";
    std::string marker_b = "zon";
    std::vector<std::string> fillers;

    static OrderWorld make(textlearn::Rng& rng, std::size_t filler_count = 16) {
        OrderWorld w;
        w.fillers = word_pool("cdklt", filler_count, rng);
        return w;
    }

    /// Emits pairs: for one filler draw, a label-0 text (marker_a first) and a
    /// label-1 text (marker_b first) with identical bags.
    std::vector<LabeledText> task(std::size_t pairs, textlearn::Rng& rng, std::size_t filler_words = 5) const {
        std::vector<LabeledText> out;
        for (std::size_t p = 0; p < pairs; ++p) {
            std::string middle;
            for (std::size_t i = 0; i < filler_words; ++i) {
                middle += ' ';
                middle += fillers[rng.uniform_index(fillers.size())];
            }
            out.push_back({marker_a + middle + ' ' + marker_b, 0});
            out.push_back({marker_b + middle + ' ' + marker_a, 1});
        }
        return out;
    }

    std::vector<std::string> corpus(std::size_t sentences, textlearn::Rng& rng) const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < sentences; ++i) {
            std::string s = i % 2 == 0 ? marker_a : marker_b;
            const std::size_t n = 4 + rng.uniform_index(4);
            for (std::size_t w = 0; w < n; ++w) {
                s += ' ';
                s += fillers[rng.uniform_index(fillers.size())];
            }
            s += ' ';
            s += i % 2 == 0 ? marker_b : marker_a;
            out.push_back(std::move(s));
        }
        return out;
    }
};

}  // namespace synthetic
