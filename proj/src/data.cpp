#include "larc/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace larc {

Vocabulary::Vocabulary() {
    id_to_token_ = {"[PAD]", "[CLS]", "[UNK]"};
    for (int i = 0; i < 3; ++i) to_id_[id_to_token_[i]] = i;
}

int Vocabulary::add(const std::string& token) {
    auto it = to_id_.find(token);
    if (it != to_id_.end()) return it->second;
    const int id = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(token);
    to_id_[token] = id;
    return id;
}

int Vocabulary::lookup(const std::string& token) const {
    auto it = to_id_.find(token);
    return it == to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw DataError("vocabulary id out of range: " + std::to_string(id));
    return id_to_token_[id];
}

Vocabulary Vocabulary::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) throw DataError("empty vocabulary line in " + path);
        if (v.to_id_.count(line)) throw DataError("duplicate vocabulary token: " + line);
        v.add(line);
    }
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    for (int id = 3; id < size(); ++id) out << id_to_token_[id] << '\n';
    if (!out) throw DataError("write failure on vocabulary file: " + path);
}

TokenizedExample tokenize(const std::string& text, const Vocabulary& vocab, int max_len) {
    if (max_len < 2) throw ConfigError("tokenize: max_len must be >= 2");
    TokenizedExample out;
    out.ids.reserve(max_len);
    out.ids.push_back(Vocabulary::kCls);

    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        if (static_cast<int>(out.ids.size()) < max_len)
            out.ids.push_back(vocab.lookup(word));
        else
            out.truncated = true;
        word.clear();
    };
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch)))
            flush();
        else
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    flush();

    out.mask.assign(max_len, 0);
    std::fill(out.mask.begin(), out.mask.begin() + out.ids.size(), 1);
    out.ids.resize(max_len, Vocabulary::kPad);
    return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string text;
    for (int id : ids) {
        if (id == Vocabulary::kPad || id == Vocabulary::kCls) continue;
        if (!text.empty()) text.push_back(' ');
        text += vocab.token(id);
    }
    return text;
}

DataSplits split_dataset(std::vector<Example> data, const SplitSpec& spec, RngStream& rng) {
    if (spec.train <= 0.0 || spec.val <= 0.0 || spec.test <= 0.0)
        throw ConfigError("split fractions must each be > 0");
    if (std::fabs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");

    rng.shuffle(data);
    const auto n = static_cast<long long>(data.size());
    const long long n_train = std::llround(n * spec.train);
    const long long n_val = std::llround(n * spec.val);
    const long long n_test = n - n_train - n_val;
    if (n_train <= 0 || n_val <= 0 || n_test <= 0)
        throw ConfigError("dataset too small: a split would be empty");

    DataSplits s;
    s.train.assign(data.begin(), data.begin() + n_train);
    s.val.assign(data.begin() + n_train, data.begin() + n_train + n_val);
    s.test.assign(data.begin() + n_train + n_val, data.end());
    return s;
}

std::vector<Example> load_jsonl(const std::string& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::vector<Example> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        if (!doc.is_object() || !doc.contains("text") || !doc.contains("label") ||
            !doc["text"].is_string() || !doc["label"].is_number_integer())
            throw DataError(path + ":" + std::to_string(lineno) +
                            ": expected {\"text\": string, \"label\": int}");
        Example ex;
        ex.text = doc["text"].get<std::string>();
        const int raw = doc["label"].get<int>();
        if (ex.text.empty())
            throw DataError(path + ":" + std::to_string(lineno) + ": empty text");
        if (raw < 0 || raw >= num_classes)
            throw DataError(path + ":" + std::to_string(lineno) + ": label " +
                            std::to_string(raw) + " outside [0," + std::to_string(num_classes) +
                            ")");
        ex.label = raw + 1;
        out.push_back(std::move(ex));
    }
    return out;
}

void write_jsonl(const std::string& path, const std::vector<Example>& examples) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    for (const auto& ex : examples) {
        nlohmann::json doc;
        doc["text"] = ex.text;
        doc["label"] = ex.label - 1;
        out << doc.dump() << '\n';
    }
    if (!out) throw DataError("write failure on dataset file: " + path);
}

SyntheticData generate_synthetic(int num_classes, int vocab_size, int n_per_class, double overlap,
                                 int max_len, RngStream& rng) {
    if (num_classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
    if (vocab_size < 10 * num_classes)
        throw ConfigError("generate_synthetic: vocab_size must be >= 10 * num_classes");
    if (overlap < 0.0 || overlap > 1.0)
        throw ConfigError("generate_synthetic: overlap must be in [0,1]");
    if (n_per_class < 1) throw ConfigError("generate_synthetic: n_per_class must be >= 1");
    if (max_len < 8) throw ConfigError("generate_synthetic: max_len must be >= 8");

    SyntheticData out;
    const int content = vocab_size - 3;
    for (int i = 0; i < content; ++i) {
        std::ostringstream word;
        word << "tok" << std::setw(4) << std::setfill('0') << i;
        out.vocab.add(word.str());
    }

    // K class ranges plus one shared range over the content ids
    const int chunks = num_classes + 1;
    auto chunk_lo = [&](int c) { return static_cast<int>(static_cast<long long>(content) * c / chunks); };
    const int shared_lo = chunk_lo(num_classes);
    const int shared_n = content - shared_lo;

    out.examples.reserve(static_cast<std::size_t>(num_classes) * n_per_class);
    for (int k = 0; k < num_classes; ++k) {
        const int lo = chunk_lo(k);
        const int n_range = chunk_lo(k + 1) - lo;
        for (int i = 0; i < n_per_class; ++i) {
            const int len = rng.range_int(8, max_len);
            std::string text;
            for (int t = 0; t < len; ++t) {
                const bool shared = rng.u01() < overlap;
                const int idx = shared ? shared_lo + static_cast<int>(rng.below(shared_n))
                                       : lo + static_cast<int>(rng.below(n_range));
                if (!text.empty()) text.push_back(' ');
                text += out.vocab.token(idx + 3);
            }
            out.examples.push_back({std::move(text), k + 1});
        }
    }
    return out;
}

} // namespace larc
