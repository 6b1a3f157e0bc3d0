#include "larc/config.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace larc {

void TrainingConfig::validate() const {
    const auto& m = model;
    if (m.num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (m.hidden_dim < 2) throw ConfigError("hidden_dim must be >= 2");
    if (m.num_heads < 1 || m.hidden_dim % m.num_heads != 0)
        throw ConfigError("hidden_dim must be divisible by num_heads");
    if (m.ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
    if (m.vocab_size < 4) throw ConfigError("vocab_size must cover the 3 specials plus content");
    if (m.max_seq_len < 2) throw ConfigError("max_seq_len must be >= 2");
    if (m.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (m.contrastive_dim < 2) throw ConfigError("contrastive_dim must be >= 2");
    if (m.head_hidden < 1) throw ConfigError("head_hidden must be >= 1");
    if (m.dropout_rate < 0.0 || m.dropout_rate >= 1.0)
        throw ConfigError("dropout_rate must be in [0,1)");
    if (m.pooler != "tanh" && m.pooler != "identity")
        throw ConfigError("pooler must be 'tanh' or 'identity'");

    const auto& o = optim;
    if (o.lr_backbone <= 0.0 || o.lr_new <= 0.0) throw ConfigError("learning rates must be > 0");
    if (o.beta1 < 0.0 || o.beta1 >= 1.0 || o.beta2 < 0.0 || o.beta2 >= 1.0)
        throw ConfigError("adam betas must be in [0,1)");
    if (o.adam_eps <= 0.0) throw ConfigError("adam_eps must be > 0");
    if (o.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (o.clip_max_norm <= 0.0) throw ConfigError("clip_max_norm must be > 0");
    if (o.accum_steps < 1) throw ConfigError("accum_steps must be >= 1");
    if (o.warmup_fraction < 0.0 || o.warmup_fraction >= 1.0)
        throw ConfigError("warmup_fraction must be in [0,1)");

    const auto& c = contrastive;
    if (c.lambda_max < 0.0) throw ConfigError("lambda_max must be >= 0");
    if (c.t_ramp <= 0.0) throw ConfigError("t_ramp must be > 0");
    if (c.tau_base <= 0.0) throw ConfigError("tau_base must be > 0");
    if (c.tau_beta < 0.0) throw ConfigError("tau_beta must be >= 0");
    if (c.ramp_granularity != "step" && c.ramp_granularity != "epoch")
        throw ConfigError("ramp_granularity must be 'step' or 'epoch'");

    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
}

namespace {

// One row per config key: reader applies a JSON value onto the struct,
// writer emits the current value. Keeping both in one table means the
// unknown-key check and to_json can never drift apart.
struct KeyBinding {
    std::function<void(TrainingConfig&, const nlohmann::json&)> read;
    std::function<nlohmann::json(const TrainingConfig&)> write;
};

template <class T>
T get_checked(const nlohmann::json& v, const char* key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
}

const std::map<std::string, KeyBinding>& bindings() {
    static const std::map<std::string, KeyBinding> table = [] {
        std::map<std::string, KeyBinding> t;
        auto bind = [&t](const char* key, auto member) {
            using Field = std::remove_reference_t<decltype(member(std::declval<TrainingConfig&>()))>;
            t[key] = KeyBinding{
                [key, member](TrainingConfig& c, const nlohmann::json& v) {
                    member(c) = get_checked<Field>(v, key);
                },
                [member](const TrainingConfig& c) {
                    return nlohmann::json(member(const_cast<TrainingConfig&>(c)));
                }};
        };
        // clang-format off
        bind("num_layers",        [](TrainingConfig& c) -> int& { return c.model.num_layers; });
        bind("hidden_dim",        [](TrainingConfig& c) -> int& { return c.model.hidden_dim; });
        bind("num_heads",         [](TrainingConfig& c) -> int& { return c.model.num_heads; });
        bind("ffn_dim",           [](TrainingConfig& c) -> int& { return c.model.ffn_dim; });
        bind("vocab_size",        [](TrainingConfig& c) -> int& { return c.model.vocab_size; });
        bind("max_seq_len",       [](TrainingConfig& c) -> int& { return c.model.max_seq_len; });
        bind("num_classes",       [](TrainingConfig& c) -> int& { return c.model.num_classes; });
        bind("contrastive_dim",   [](TrainingConfig& c) -> int& { return c.model.contrastive_dim; });
        bind("head_hidden",       [](TrainingConfig& c) -> int& { return c.model.head_hidden; });
        bind("dropout_rate",      [](TrainingConfig& c) -> double& { return c.model.dropout_rate; });
        bind("pooler",            [](TrainingConfig& c) -> std::string& { return c.model.pooler; });
        bind("lr_backbone",       [](TrainingConfig& c) -> double& { return c.optim.lr_backbone; });
        bind("lr_new",            [](TrainingConfig& c) -> double& { return c.optim.lr_new; });
        bind("beta1",             [](TrainingConfig& c) -> double& { return c.optim.beta1; });
        bind("beta2",             [](TrainingConfig& c) -> double& { return c.optim.beta2; });
        bind("adam_eps",          [](TrainingConfig& c) -> double& { return c.optim.adam_eps; });
        bind("weight_decay",      [](TrainingConfig& c) -> double& { return c.optim.weight_decay; });
        bind("clip_max_norm",     [](TrainingConfig& c) -> double& { return c.optim.clip_max_norm; });
        bind("accum_steps",       [](TrainingConfig& c) -> int& { return c.optim.accum_steps; });
        bind("warmup_fraction",   [](TrainingConfig& c) -> double& { return c.optim.warmup_fraction; });
        bind("lambda_max",        [](TrainingConfig& c) -> double& { return c.contrastive.lambda_max; });
        bind("t_ramp",            [](TrainingConfig& c) -> double& { return c.contrastive.t_ramp; });
        bind("tau_base",          [](TrainingConfig& c) -> double& { return c.contrastive.tau_base; });
        bind("tau_beta",          [](TrainingConfig& c) -> double& { return c.contrastive.tau_beta; });
        bind("ramp_granularity",  [](TrainingConfig& c) -> std::string& { return c.contrastive.ramp_granularity; });
        bind("batch_size",        [](TrainingConfig& c) -> int& { return c.batch_size; });
        bind("epochs",            [](TrainingConfig& c) -> int& { return c.epochs; });
        bind("seed",              [](TrainingConfig& c) -> std::uint64_t& { return c.seed; });
        bind("enable_fusion",     [](TrainingConfig& c) -> bool& { return c.enable_fusion; });
        bind("enable_contrastive",[](TrainingConfig& c) -> bool& { return c.enable_contrastive; });
        bind("train_data",        [](TrainingConfig& c) -> std::string& { return c.train_data; });
        bind("val_data",          [](TrainingConfig& c) -> std::string& { return c.val_data; });
        bind("test_data",         [](TrainingConfig& c) -> std::string& { return c.test_data; });
        bind("vocab_file",        [](TrainingConfig& c) -> std::string& { return c.vocab_file; });
        bind("out_dir",           [](TrainingConfig& c) -> std::string& { return c.out_dir; });
        // clang-format on
        return t;
    }();
    return table;
}

} // namespace

nlohmann::json to_json(const TrainingConfig& cfg) {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [key, binding] : bindings()) doc[key] = binding.write(cfg);
    return doc;
}

TrainingConfig training_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    TrainingConfig cfg;
    const auto& table = bindings();
    for (const auto& [key, value] : doc.items()) {
        auto it = table.find(key);
        if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second.read(cfg, value);
    }
    cfg.validate();
    return cfg;
}

TrainingConfig load_training_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse failure in " + path + ": " + e.what());
    }
    return training_config_from_json(doc);
}

} // namespace larc
