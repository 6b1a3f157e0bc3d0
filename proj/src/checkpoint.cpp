#include "larc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "larc/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace larc {

namespace {

constexpr char kMagic[4] = {'L', 'A', 'R', 'C'};

template <class T>
void write_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint truncated");
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json rng = nlohmann::json::object();
    for (const auto& [name, st] : ck.rng_states) rng[name] = st;
    nlohmann::json meta = {{"config", to_json(ck.config)},
                           {"step", ck.step},
                           {"epoch", ck.epoch},
                           {"vocab", ck.vocab_tokens},
                           {"rng", rng},
                           {"num_tensors", ck.tensors.size()}};
    const std::string meta_str = meta.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    write_raw<std::uint32_t>(out, kCheckpointVersion);
    write_raw<std::uint64_t>(out, meta_str.size());
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    for (const auto& [name, t] : ck.tensors) {
        if (name.size() > 0xffff) throw ConfigError("tensor name too long for checkpoint");
        write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (int d : t.shape()) write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ConfigError("not a checkpoint file (bad magic): " + path);
    const auto version = read_raw<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw ConfigError("unsupported checkpoint version " + std::to_string(version));

    const auto meta_len = read_raw<std::uint64_t>(in);
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw DataError("checkpoint truncated in metadata");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }

    Checkpoint ck;
    try {
        ck.config = training_config_from_json(meta.at("config"));
        ck.step = meta.at("step").get<long long>();
        ck.epoch = meta.at("epoch").get<int>();
        ck.vocab_tokens = meta.at("vocab").get<std::vector<std::string>>();
        for (const auto& [name, st] : meta.at("rng").items())
            ck.rng_states[name] = st.get<std::array<std::uint64_t, 4>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint metadata incomplete: ") + e.what());
    }
    const auto expect = meta.value("num_tensors", std::size_t{0});

    while (true) {
        std::uint16_t name_len;
        in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (in.eof() && in.gcount() == 0) break;
        if (!in) throw DataError("checkpoint truncated in tensor table");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = read_raw<std::uint8_t>(in);
        Shape shape(rank);
        std::size_t n = 1;
        for (int d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(read_raw<std::uint32_t>(in));
            n *= static_cast<std::size_t>(shape[d]);
        }
        Tensor t = Tensor::zeros(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!in) throw DataError("checkpoint truncated in tensor payload");
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (expect != 0 && ck.tensors.size() != expect)
        throw DataError("checkpoint tensor count does not match metadata");
    return ck;
}

Vocabulary vocab_from_checkpoint(const Checkpoint& ck) {
    Vocabulary v;
    for (const auto& tok : ck.vocab_tokens) v.add(tok);
    return v;
}

Model model_from_checkpoint(const Checkpoint& ck) {
    const TrainingConfig& cfg = ck.config;
    auto init = make_stream(cfg.seed, StreamId::init);
    Model m(cfg.model, cfg.enable_fusion, cfg.enable_contrastive, init,
            cfg.contrastive.tau_base, cfg.contrastive.tau_beta);

    std::map<std::string, Tensor> table;
    for (const auto& [name, t] : ck.tensors) {
        if (!table.emplace(name, t).second)
            throw DataError("checkpoint holds duplicate tensor: " + name);
    }
    for (auto& p : m.params()) {
        auto it = table.find(p.name);
        if (it == table.end())
            throw ConfigError("checkpoint is missing parameter: " + p.name);
        Tensor& src = it->second;
        if (src.shape() != p.tensor.shape())
            throw ConfigError("checkpoint shape mismatch for " + p.name);
        std::memcpy(p.tensor.data(), src.data(), src.size() * sizeof(float));
        table.erase(it);
    }
    if (!table.empty())
        throw ConfigError("checkpoint holds unknown parameter: " + table.begin()->first);
    return m;
}

Checkpoint make_checkpoint(const Model& model, const TrainingConfig& cfg, long long step,
                           int epoch, const Vocabulary& vocab,
                           const std::map<std::string, std::array<std::uint64_t, 4>>& rng_states) {
    Checkpoint ck;
    ck.config = cfg;
    ck.step = step;
    ck.epoch = epoch;
    ck.rng_states = rng_states;
    const auto& toks = vocab.tokens();
    for (std::size_t i = 3; i < toks.size(); ++i) ck.vocab_tokens.push_back(toks[i]);
    for (const auto& p : model.params()) {
        // Deep copy so the snapshot stays frozen while training continues.
        Tensor copy = Tensor::zeros(p.tensor.shape());
        std::memcpy(copy.data(), p.tensor.data(), p.tensor.size() * sizeof(float));
        ck.tensors.emplace_back(p.name, std::move(copy));
    }
    return ck;
}

} // namespace larc
