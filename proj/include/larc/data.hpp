#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "larc/common.hpp"
#include "larc/rng.hpp"

// Dataset plumbing: whitespace tokenizer over a fixed vocabulary, JSONL
// dataset I/O, deterministic splits, and the synthetic confusable-class
// generator. Labels are 1..K internally; JSONL files carry 0-based labels.

namespace larc {

struct Example {
    std::string text;
    int label = 0; // 1..K
};

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kUnk = 2;

    Vocabulary();

    // returns the id, inserting the token if new
    int add(const std::string& token);
    // [UNK] when the token is absent
    int lookup(const std::string& token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

    // file format: one content token per line, line i holds id i+3
    static Vocabulary from_file(const std::string& path);
    void save(const std::string& path) const;

    bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

    const std::vector<std::string>& tokens() const { return id_to_token_; }

private:
    std::unordered_map<std::string, int> to_id_;
    std::vector<std::string> id_to_token_;
};

struct TokenizedExample {
    std::vector<int> ids;               // length max_len
    std::vector<std::uint8_t> mask;     // 1 = [CLS] or real token, 0 = padding
    bool truncated = false;
};

// lowercase, split on whitespace, [CLS] first, truncate/pad to max_len
TokenizedExample tokenize(const std::string& text, const Vocabulary& vocab, int max_len);

// inverse up to case folding, truncation, and [UNK] collapse
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

struct SplitSpec {
    double train = 0.64;
    double val = 0.16;
    double test = 0.20;
};

struct DataSplits {
    std::vector<Example> train, val, test;
};

// seeded shuffle then contiguous slicing at rounded boundaries; the test
// split absorbs the rounding remainder
DataSplits split_dataset(std::vector<Example> data, const SplitSpec& spec, RngStream& rng);

// JSONL: {"text": ..., "label": <0-based int>} per line
std::vector<Example> load_jsonl(const std::string& path, int num_classes);
void write_jsonl(const std::string& path, const std::vector<Example>& examples);

struct SyntheticData {
    std::vector<Example> examples; // class-major order, exactly n_per_class each
    Vocabulary vocab;
};

// Confusable-class corpus: the non-special vocabulary is cut into K class
// ranges plus one shared range; each token of a class-k text comes from the
// shared range with probability `overlap`, else from range k. Lengths are
// uniform in [8, max_len].
SyntheticData generate_synthetic(int num_classes, int vocab_size, int n_per_class, double overlap,
                                 int max_len, RngStream& rng);

} // namespace larc
