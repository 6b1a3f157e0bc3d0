#pragma once

#include <string>

#include <json.hpp>

#include "larc/common.hpp"

// Run configuration. One flat JSON document, every key optional, unknown
// keys rejected so typos fail loudly instead of silently training with a
// default.

namespace larc {

struct ModelConfig {
    int num_layers = 4;
    int hidden_dim = 64;
    int num_heads = 4;
    int ffn_dim = 128;
    int vocab_size = 256;
    int max_seq_len = 32;
    int num_classes = 3;
    int contrastive_dim = 32;
    int head_hidden = 64;
    double dropout_rate = 0.4;
    std::string pooler = "tanh"; // tanh | identity
};

struct OptimizerConfig {
    double lr_backbone = 2e-6;
    double lr_new = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    double clip_max_norm = 1.0;
    int accum_steps = 2;
    double warmup_fraction = 0.10;
    long long total_steps = 0; // derived by the trainer, not a config key
};

struct ContrastiveConfig {
    double lambda_max = 0.15;
    double t_ramp = 5.0;
    double tau_base = 0.05;
    double tau_beta = 0.1;
    std::string ramp_granularity = "step"; // step | epoch
};

struct TrainingConfig {
    ModelConfig model;
    OptimizerConfig optim;
    ContrastiveConfig contrastive;

    int batch_size = 16;
    int epochs = 15;
    std::uint64_t seed = 42;
    bool enable_fusion = true;
    bool enable_contrastive = true;

    std::string train_data;
    std::string val_data;
    std::string test_data;
    std::string vocab_file;
    std::string out_dir = "out";

    void validate() const;
};

nlohmann::json to_json(const TrainingConfig& cfg);
TrainingConfig training_config_from_json(const nlohmann::json& doc);
TrainingConfig load_training_config(const std::string& path);

} // namespace larc
