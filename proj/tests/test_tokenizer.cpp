#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "textlearn/common.hpp"
#include "textlearn/tokenizer.hpp"

using namespace textlearn;

namespace {

std::string temp_path(const std::string& tag) {
    static int counter = 0;
    return "/tmp/textlearn_tok_" + tag + "_" + std::to_string(counter++) + ".txt";
}

void check_encoded_invariants(const EncodedSequence& seq, bool has_pair) {
    REQUIRE(seq.token_ids.size() == seq.segment_ids.size());
    REQUIRE(seq.token_ids.size() == seq.attention_mask.size());
    REQUIRE(seq.true_length <= seq.max_len());
    CHECK(seq.token_ids[0] == Vocabulary::kCls);
    std::size_t sep_count = 0, mask_ones = 0;
    for (std::size_t i = 0; i < seq.max_len(); ++i) {
        if (seq.token_ids[i] == Vocabulary::kSep) ++sep_count;
        mask_ones += static_cast<std::size_t>(seq.attention_mask[i]);
        if (i >= seq.true_length) {
            CHECK(seq.token_ids[i] == Vocabulary::kPad);
            CHECK(seq.attention_mask[i] == 0);
        } else {
            CHECK(seq.attention_mask[i] == 1);
        }
        CHECK(seq.position_ids[i] == static_cast<int>(i));
    }
    CHECK(sep_count == (has_pair ? 2 : 1));
    CHECK(mask_ones == seq.true_length);
    // segment ids: a run of 0s then (for pairs) a run of 1s over real tokens
    bool seen_one = false;
    for (std::size_t i = 0; i < seq.true_length; ++i) {
        if (seq.segment_ids[i] == 1) seen_one = true;
        if (seen_one) CHECK(seq.segment_ids[i] == 1);
    }
    CHECK(seen_one == has_pair);
}

}  // namespace

TEST_CASE("pre_tokenize lowercases, splits whitespace and punctuation") {
    auto toks = pre_tokenize("Hello, World!  next\tline");
    CHECK(toks == std::vector<std::string>{"hello", ",", "world", "!", "next", "line"});
    CHECK(pre_tokenize("").empty());
    CHECK(pre_tokenize("   \n ").empty());
}

TEST_CASE("first merge on aaab corpus is the most frequent pair") {
    // Adjacent character pairs in "aaab aaab": ("a","a") occurs 4 times.
    auto sv = train_subword_vocab({"aaab aaab"}, 9, MergeScoring::kFrequency);
    REQUIRE(sv.merges.rules.size() == 1);
    CHECK(sv.merges.rules[0] == std::pair<std::string, std::string>{"a", "a"});
    CHECK(sv.vocab.contains("aa"));
    CHECK(sv.vocab.size() == 9);  // 5 specials + {##a, ##b, a} + {aa}
}

TEST_CASE("single-character corpus merges runs until pairs run out") {
    auto sv = train_subword_vocab({"bbbb"}, 50, MergeScoring::kFrequency);
    CHECK(sv.vocab.contains("b"));
    CHECK(sv.vocab.contains("##b"));
    // The only repeated pair is (b, b); after merging it once nothing occurs twice.
    REQUIRE(sv.merges.rules.size() == 1);
    CHECK(sv.merges.rules[0] == std::pair<std::string, std::string>{"b", "b"});
}

TEST_CASE("training is deterministic") {
    const std::vector<std::string> corpus = {"the cat sat on the mat", "the hat of the cat", "mats and hats"};
    auto a = train_subword_vocab(corpus, 40);
    auto b = train_subword_vocab(corpus, 40);
    CHECK(a.merges.rules == b.merges.rules);
    REQUIRE(a.vocab.size() == b.vocab.size());
    for (std::size_t i = 0; i < a.vocab.size(); ++i) {
        CHECK(a.vocab.term(static_cast<int>(i)) == b.vocab.term(static_cast<int>(i)));
    }
}

TEST_CASE("likelihood scoring prefers exclusive pairs over frequent ones") {
    // "xy" always co-occur (exclusively), "th" is frequent but t and h also
    // appear in many other contexts.
    std::vector<std::string> corpus;
    corpus.push_back("xy xy xy");
    corpus.push_back("th te ta to th ti th td th tz hh ha he hi ho th");
    auto freq = train_subword_vocab(corpus, 40, MergeScoring::kFrequency);
    auto like = train_subword_vocab(corpus, 40, MergeScoring::kLikelihood);
    REQUIRE(!freq.merges.rules.empty());
    REQUIRE(!like.merges.rules.empty());
    CHECK(freq.merges.rules[0] == std::pair<std::string, std::string>{"t", "h"});
    CHECK(like.merges.rules[0] == std::pair<std::string, std::string>{"x", "y"});
}

TEST_CASE("training rejects bad inputs") {
    CHECK_THROWS_AS(train_subword_vocab({}, 100), InputError);
    CHECK_THROWS_AS(train_subword_vocab({"ab"}, 6), ValueError);  // <= alphabet + specials
}

TEST_CASE("vocabulary is monotone: merged pieces have earlier constituents") {
    auto sv = train_subword_vocab({"banana bandana and cabana", "a man a plan a canal", "banana and banana"}, 60);
    for (const auto& [left, right] : sv.merges.rules) {
        const std::string merged = left + right;
        const auto min_id = [&](const std::string& surface) {
            int best = -1;
            for (const std::string& form : {surface, "##" + surface}) {
                const int id = sv.vocab.id(form);
                if (id >= 0 && (best < 0 || id < best)) best = id;
            }
            return best;
        };
        const int merged_id = min_id(merged);
        REQUIRE(merged_id >= 0);
        REQUIRE(min_id(left) >= 0);
        REQUIRE(min_id(right) >= 0);
        CHECK(min_id(left) < merged_id);
        CHECK(min_id(right) < merged_id);
    }
}

TEST_CASE("greedy longest-match tokenization is deterministic and prefers long pieces") {
    auto tok = SubwordTokenizer::train({"aaab aaab"}, 9);
    auto ids = tok.tokenize("aaab");
    CHECK(ids == tok.tokenize("aaab"));
    REQUIRE(ids.size() == 3);
    CHECK(tok.vocab().term(ids[0]) == "aa");
    CHECK(tok.vocab().term(ids[1]) == "##a");
    CHECK(tok.vocab().term(ids[2]) == "##b");
    // Characters outside the training alphabet become [UNK] for the word.
    CHECK(tok.tokenize("zzz") == std::vector<int>{Vocabulary::kUnk});
}

TEST_CASE("encode of empty text pads out with mask zeros") {
    auto tok = SubwordTokenizer::train({"some words"}, 30);
    EncodeOptions opts;
    opts.max_len = 8;
    auto seq = tok.encode("", opts);
    CHECK(seq.token_ids == std::vector<int>{Vocabulary::kCls, Vocabulary::kSep, 0, 0, 0, 0, 0, 0});
    CHECK(seq.attention_mask == std::vector<int>{1, 1, 0, 0, 0, 0, 0, 0});
    CHECK(seq.true_length == 2);
    check_encoded_invariants(seq, false);
}

TEST_CASE("head-tail truncation keeps the first 128 and last 382 content tokens") {
    auto tok = SubwordTokenizer::train({"a b c d e f g h"}, 40);
    std::string text;
    const char letters[] = {'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'};
    for (int i = 0; i < 600; ++i) {
        text += letters[i % 8];
        text += ' ';
    }
    auto all = tok.tokenize(text);
    REQUIRE(all.size() == 600);

    EncodeOptions opts;
    opts.max_len = 512;
    auto seq = tok.encode(text, opts);
    CHECK(seq.true_length == 512);
    check_encoded_invariants(seq, false);

    std::vector<int> kept(seq.token_ids.begin() + 1, seq.token_ids.begin() + 511);
    std::vector<int> expected(all.begin(), all.begin() + 128);
    expected.insert(expected.end(), all.begin() + 218, all.end());
    CHECK(kept == expected);
}

TEST_CASE("tail truncation keeps the trailing tokens") {
    auto tok = SubwordTokenizer::train({"a b c d"}, 30);
    EncodeOptions opts;
    opts.max_len = 5;
    opts.truncation.mode = TruncationPolicy::kTail;
    auto seq = tok.encode("a b c d a b c d", opts);
    auto all = tok.tokenize("a b c d a b c d");
    std::vector<int> kept(seq.token_ids.begin() + 1, seq.token_ids.begin() + 4);
    CHECK(kept == std::vector<int>(all.end() - 3, all.end()));
}

TEST_CASE("pair encoding carries segment ids and two separators") {
    auto tok = SubwordTokenizer::train({"one two three four"}, 40);
    EncodeOptions opts;
    opts.max_len = 16;
    std::string second = "three four";
    auto seq = tok.encode("one two", opts, &second);
    check_encoded_invariants(seq, true);
    CHECK(seq.segment_ids[0] == 0);
    CHECK(seq.segment_ids[seq.true_length - 1] == 1);
}

TEST_CASE("decode joins continuation pieces and drops specials") {
    Vocabulary vocab;
    const int hel = vocab.add("hel");
    const int lo = vocab.add("##lo");
    SubwordTokenizer tok(vocab, MergeTable{});
    CHECK(tok.decode({Vocabulary::kCls, hel, lo, Vocabulary::kSep}) == "hello");
    CHECK(tok.decode({Vocabulary::kCls, Vocabulary::kSep}) == "");
    CHECK_THROWS_AS(tok.decode({999}), IndexError);
}

TEST_CASE("round trip over an in-vocabulary corpus") {
    Rng rng(2024);
    const std::string alphabet = "abcdefg";
    auto random_word = [&] {
        std::string w;
        const std::size_t len = 1 + rng.uniform_index(6);
        for (std::size_t i = 0; i < len; ++i) w += alphabet[rng.uniform_index(alphabet.size())];
        return w;
    };
    std::vector<std::string> corpus;
    for (int i = 0; i < 30; ++i) {
        std::string line;
        for (int w = 0; w < 8; ++w) {
            if (w) line += ' ';
            line += random_word();
        }
        corpus.push_back(line);
    }
    auto tok = SubwordTokenizer::train(corpus, 120);
    EncodeOptions opts;
    opts.max_len = 64;
    for (int trial = 0; trial < 40; ++trial) {
        std::string text;
        for (int w = 0; w < 6; ++w) {
            if (w) text += "  ";
            text += random_word();
        }
        auto seq = tok.encode(text, opts);
        check_encoded_invariants(seq, false);
        // whitespace-normalized lowercased round trip
        std::string norm;
        for (const auto& w : pre_tokenize(text)) {
            if (!norm.empty()) norm += ' ';
            norm += w;
        }
        CHECK(tok.decode(seq.token_ids) == norm);
    }
}

TEST_CASE("encode invariants hold for arbitrary text") {
    auto tok = SubwordTokenizer::train({"plain training words here"}, 40);
    Rng rng(7);
    EncodeOptions opts;
    opts.max_len = 12;
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        const std::size_t len = rng.uniform_index(40);
        for (std::size_t i = 0; i < len; ++i) {
            text += static_cast<char>(32 + rng.uniform_index(95));  // printable ascii
        }
        auto seq = tok.encode(text, opts);
        check_encoded_invariants(seq, false);
    }
    CHECK_THROWS_AS(tok.encode("x", EncodeOptions{2, {}, true}), ValueError);
}

TEST_CASE("vocabulary and merge files reload bit-exactly") {
    auto sv = train_subword_vocab({"the cat sat on the mat", "a cat and a hat"}, 40);
    const std::string vp = temp_path("vocab"), mp = temp_path("merges");
    sv.vocab.save(vp);
    sv.merges.save(mp);

    auto vocab2 = Vocabulary::load(vp);
    auto merges2 = MergeTable::load(mp);
    REQUIRE(vocab2.size() == sv.vocab.size());
    for (std::size_t i = 0; i < vocab2.size(); ++i) {
        CHECK(vocab2.term(static_cast<int>(i)) == sv.vocab.term(static_cast<int>(i)));
    }
    CHECK(merges2.rules == sv.merges.rules);

    // byte-exact re-save
    const std::string vp2 = temp_path("vocab2");
    vocab2.save(vp2);
    std::ifstream f1(vp, std::ios::binary), f2(vp2, std::ios::binary);
    std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(c1 == c2);

    CHECK_THROWS_AS(Vocabulary::load("/nonexistent/vocab.txt"), IoError);
    std::remove(vp.c_str());
    std::remove(vp2.c_str());
    std::remove(mp.c_str());
}
