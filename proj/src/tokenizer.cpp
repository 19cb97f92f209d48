#include "textlearn/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace textlearn {

namespace {

const char* kSpecialTerms[Vocabulary::kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_ascii_punct(char32_t c) {
    return (c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) || (c >= 0x5b && c <= 0x60) ||
           (c >= 0x7b && c <= 0x7e);
}

bool is_space_cp(char32_t c) {
    switch (c) {
        case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d: case 0x20:
        case 0x85: case 0xa0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202f: case 0x205f: case 0x3000:
            return true;
        default:
            return c >= 0x2000 && c <= 0x200a;
    }
}

/// Decodes the next UTF-8 codepoint; malformed bytes are taken one at a time.
char32_t next_codepoint(const std::string& s, std::size_t& i) {
    const auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
    const unsigned char b0 = byte(i);
    std::size_t len = 1;
    char32_t cp = b0;
    if ((b0 & 0x80) == 0) {
        len = 1;
    } else if ((b0 & 0xe0) == 0xc0) {
        len = 2;
        cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
        len = 3;
        cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++i;
        return b0;
    }
    if (i + len > s.size()) {
        ++i;
        return b0;
    }
    for (std::size_t k = 1; k < len; ++k) {
        const unsigned char bk = byte(i + k);
        if ((bk & 0xc0) != 0x80) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | (bk & 0x3f);
    }
    i += len;
    return cp;
}

void append_codepoint(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
}

std::vector<std::string> word_codepoints(const std::string& word) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < word.size()) {
        const std::size_t start = i;
        next_codepoint(word, i);
        out.push_back(word.substr(start, i - start));
    }
    return out;
}

struct Piece {
    std::string surface;
    bool continuation;

    std::string rendered() const { return continuation ? "##" + surface : surface; }
};

}  // namespace

std::vector<std::string> pre_tokenize(const std::string& text, bool lowercase) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t i = 0;
    while (i < text.size()) {
        char32_t cp = next_codepoint(text, i);
        if (is_space_cp(cp)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
            continue;
        }
        if (lowercase && cp >= 'A' && cp <= 'Z') cp += 32;
        if (is_ascii_punct(cp)) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
            tokens.push_back(std::string(1, static_cast<char>(cp)));
            continue;
        }
        append_codepoint(current, cp);
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocabulary::Vocabulary() {
    for (const char* term : kSpecialTerms) add(term);
}

int Vocabulary::add(const std::string& term) {
    auto it = term_to_id_.find(term);
    if (it != term_to_id_.end()) return it->second;
    const int new_id = static_cast<int>(id_to_term_.size());
    id_to_term_.push_back(term);
    term_to_id_.emplace(term, new_id);
    return new_id;
}

int Vocabulary::id(const std::string& term) const {
    auto it = term_to_id_.find(term);
    return it == term_to_id_.end() ? -1 : it->second;
}

const std::string& Vocabulary::term(int term_id) const {
    if (term_id < 0 || static_cast<std::size_t>(term_id) >= id_to_term_.size()) {
        throw IndexError("Vocabulary::term: id " + std::to_string(term_id) + " out of range");
    }
    return id_to_term_[static_cast<std::size_t>(term_id)];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("Vocabulary::save: cannot open " + path);
    for (const auto& term : id_to_term_) out << term << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("Vocabulary::load: cannot open " + path);
    Vocabulary vocab;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        if (line_no < kNumSpecials) {
            if (line != kSpecialTerms[line_no]) {
                throw IoError("Vocabulary::load: line " + std::to_string(line_no + 1) +
                              " must be the reserved term " + kSpecialTerms[line_no]);
            }
        } else {
            if (line.empty()) throw IoError("Vocabulary::load: empty term at line " + std::to_string(line_no + 1));
            if (vocab.contains(line)) {
                throw IoError("Vocabulary::load: duplicate term at line " + std::to_string(line_no + 1));
            }
            vocab.add(line);
        }
        ++line_no;
    }
    if (line_no < kNumSpecials) throw IoError("Vocabulary::load: file shorter than the reserved block");
    return vocab;
}

void MergeTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("MergeTable::save: cannot open " + path);
    for (const auto& [left, right] : rules) out << left << ' ' << right << '\n';
}

MergeTable MergeTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("MergeTable::load: cannot open " + path);
    MergeTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t space = line.find(' ');
        if (space == std::string::npos || space == 0 || space + 1 >= line.size()) {
            throw IoError("MergeTable::load: malformed rule at line " + std::to_string(line_no));
        }
        table.rules.emplace_back(line.substr(0, space), line.substr(space + 1));
    }
    return table;
}

SubwordVocab train_subword_vocab(const std::vector<std::string>& corpus, std::size_t target_size,
                                 MergeScoring scoring, bool lowercase) {
    if (corpus.empty()) throw InputError("train_subword_vocab: empty corpus");

    // Word frequencies, each word as a piece sequence.
    std::map<std::string, long long> word_freq;
    for (const auto& text : corpus) {
        for (auto& w : pre_tokenize(text, lowercase)) ++word_freq[w];
    }
    if (word_freq.empty()) throw InputError("train_subword_vocab: corpus has no tokens");

    std::vector<std::vector<Piece>> words;
    std::vector<long long> freqs;
    for (const auto& [word, freq] : word_freq) {
        std::vector<Piece> pieces;
        bool first = true;
        for (auto& cp : word_codepoints(word)) {
            pieces.push_back({cp, !first});
            first = false;
        }
        words.push_back(std::move(pieces));
        freqs.push_back(freq);
    }

    SubwordVocab result;
    Vocabulary& vocab = result.vocab;

    // Alphabet: every realized single-character piece, both forms, sorted.
    std::map<std::string, bool> alphabet;  // rendered form -> seen
    for (const auto& pieces : words) {
        for (const auto& p : pieces) alphabet[p.rendered()] = true;
    }
    for (const auto& [rendered, _] : alphabet) vocab.add(rendered);

    if (target_size <= vocab.size()) {
        throw ValueError("train_subword_vocab: target_size must exceed alphabet size + " +
                         std::to_string(Vocabulary::kNumSpecials) + " (= " + std::to_string(vocab.size()) + ")");
    }

    while (vocab.size() < target_size) {
        // Count adjacent pairs (by surface) and piece occurrences.
        std::map<std::pair<std::string, std::string>, long long> pair_count;
        std::map<std::string, long long> piece_count;
        for (std::size_t w = 0; w < words.size(); ++w) {
            const auto& pieces = words[w];
            const long long f = freqs[w];
            for (std::size_t i = 0; i < pieces.size(); ++i) {
                piece_count[pieces[i].surface] += f;
                if (i + 1 < pieces.size()) {
                    pair_count[{pieces[i].surface, pieces[i + 1].surface}] += f;
                }
            }
        }

        const std::pair<std::string, std::string>* best = nullptr;
        double best_score = 0.0;
        for (const auto& [pair, count] : pair_count) {
            if (count < 2) continue;
            double score;
            if (scoring == MergeScoring::kFrequency) {
                score = static_cast<double>(count);
            } else {
                score = static_cast<double>(count) /
                        (static_cast<double>(piece_count[pair.first]) * static_cast<double>(piece_count[pair.second]));
            }
            // Ties break toward the lexicographically smallest pair; the map
            // iterates in that order, so strict > keeps the first winner.
            if (best == nullptr || score > best_score) {
                best = &pair;
                best_score = score;
            }
        }
        if (best == nullptr) break;  // no pair occurs at least twice

        const std::string left = best->first;
        const std::string right = best->second;
        const std::string merged = left + right;

        bool realized_plain = false, realized_cont = false;
        for (auto& pieces : words) {
            std::vector<Piece> out;
            out.reserve(pieces.size());
            for (std::size_t i = 0; i < pieces.size(); ++i) {
                if (i + 1 < pieces.size() && pieces[i].surface == left && pieces[i + 1].surface == right) {
                    out.push_back({merged, pieces[i].continuation});
                    (pieces[i].continuation ? realized_cont : realized_plain) = true;
                    ++i;
                } else {
                    out.push_back(pieces[i]);
                }
            }
            pieces = std::move(out);
        }

        std::size_t additions = (realized_plain && vocab.id(merged) < 0 ? 1 : 0) +
                                (realized_cont && vocab.id("##" + merged) < 0 ? 1 : 0);
        if (vocab.size() + additions > target_size) break;
        if (realized_plain) vocab.add(merged);
        if (realized_cont) vocab.add("##" + merged);
        result.merges.rules.emplace_back(left, right);
    }
    return result;
}

std::vector<int> SubwordTokenizer::tokenize(const std::string& text, bool lowercase) const {
    std::vector<int> ids;
    for (const auto& word : pre_tokenize(text, lowercase)) {
        const auto cps = word_codepoints(word);
        std::vector<int> word_ids;
        std::size_t pos = 0;
        bool failed = false;
        while (pos < cps.size()) {
            // Greedy longest match against the vocabulary.
            std::size_t best_len = 0;
            int best_id = -1;
            std::string candidate = pos == 0 ? "" : "##";
            for (std::size_t end = pos; end < cps.size(); ++end) {
                candidate += cps[end];
                const int id = vocab_.id(candidate);
                if (id >= 0) {
                    best_len = end - pos + 1;
                    best_id = id;
                }
            }
            if (best_id < 0) {
                failed = true;
                break;
            }
            word_ids.push_back(best_id);
            pos += best_len;
        }
        if (failed) {
            ids.push_back(Vocabulary::kUnk);
        } else {
            ids.insert(ids.end(), word_ids.begin(), word_ids.end());
        }
    }
    return ids;
}

EncodedSequence SubwordTokenizer::encode(const std::string& text, const EncodeOptions& options,
                                         const std::string* pair) const {
    if (options.max_len < 3) throw ValueError("encode: max_len must be at least 3");
    const std::size_t overhead = pair ? 3 : 2;  // [CLS] and one [SEP] per segment
    if (pair && options.max_len < 4) throw ValueError("encode: max_len must be at least 4 for pairs");
    const std::size_t budget = options.max_len - overhead;

    std::vector<int> first = tokenize(text, options.lowercase);
    std::vector<int> second = pair ? tokenize(*pair, options.lowercase) : std::vector<int>{};

    // Truncate over the combined content stream, tracking the segment split.
    std::vector<int> combined = first;
    combined.insert(combined.end(), second.begin(), second.end());
    const std::size_t boundary = first.size();

    std::vector<std::size_t> kept;
    if (combined.size() <= budget) {
        kept.resize(combined.size());
        for (std::size_t i = 0; i < kept.size(); ++i) kept[i] = i;
    } else if (options.truncation.mode == TruncationPolicy::kTail) {
        for (std::size_t i = combined.size() - budget; i < combined.size(); ++i) kept.push_back(i);
    } else {
        const std::size_t head_keep = std::min(options.truncation.head, budget);
        const std::size_t tail_keep = std::min(options.truncation.tail, budget - head_keep);
        for (std::size_t i = 0; i < head_keep; ++i) kept.push_back(i);
        for (std::size_t i = combined.size() - tail_keep; i < combined.size(); ++i) kept.push_back(i);
    }

    EncodedSequence seq;
    seq.token_ids.assign(options.max_len, Vocabulary::kPad);
    seq.segment_ids.assign(options.max_len, 0);
    seq.position_ids.resize(options.max_len);
    for (std::size_t i = 0; i < options.max_len; ++i) seq.position_ids[i] = static_cast<int>(i);
    seq.attention_mask.assign(options.max_len, 0);

    std::size_t w = 0;
    seq.token_ids[w++] = Vocabulary::kCls;
    for (std::size_t idx : kept) {
        if (idx >= boundary) break;
        seq.token_ids[w++] = combined[idx];
    }
    seq.token_ids[w] = Vocabulary::kSep;
    ++w;
    if (pair) {
        const std::size_t second_start = w;
        for (std::size_t idx : kept) {
            if (idx < boundary) continue;
            seq.token_ids[w] = combined[idx];
            seq.segment_ids[w] = 1;
            ++w;
        }
        seq.token_ids[w] = Vocabulary::kSep;
        seq.segment_ids[w] = 1;
        ++w;
        (void)second_start;
    }
    seq.true_length = w;
    for (std::size_t i = 0; i < w; ++i) seq.attention_mask[i] = 1;
    return seq;
}

std::string SubwordTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        const std::string& term = vocab_.term(id);  // validates range
        if (Vocabulary::is_special(id)) continue;
        if (term.rfind("##", 0) == 0) {
            out += term.substr(2);
        } else {
            if (!out.empty()) out += ' ';
            out += term;
        }
    }
    return out;
}

}  // namespace textlearn
