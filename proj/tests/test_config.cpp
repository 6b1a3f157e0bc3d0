#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "larc/config.hpp"

using nlohmann::json;

TEST_CASE("defaults survive an empty document") {
    auto cfg = larc::training_config_from_json(json::object());
    CHECK(cfg.model.num_layers == 4);
    CHECK(cfg.model.hidden_dim == 64);
    CHECK(cfg.model.dropout_rate == doctest::Approx(0.4));
    CHECK(cfg.optim.lr_backbone == doctest::Approx(2e-6));
    CHECK(cfg.optim.lr_new == doctest::Approx(1e-5));
    CHECK(cfg.contrastive.lambda_max == doctest::Approx(0.15));
    CHECK(cfg.contrastive.t_ramp == doctest::Approx(5.0));
    CHECK(cfg.contrastive.tau_base == doctest::Approx(0.05));
    CHECK(cfg.batch_size == 16);
    CHECK(cfg.epochs == 15);
    CHECK(cfg.enable_fusion);
    CHECK(cfg.enable_contrastive);
}

TEST_CASE("every key round-trips through to_json") {
    larc::TrainingConfig cfg;
    cfg.model.num_layers = 2;
    cfg.model.hidden_dim = 16;
    cfg.model.num_heads = 2;
    cfg.model.ffn_dim = 24;
    cfg.model.vocab_size = 48;
    cfg.model.max_seq_len = 9;
    cfg.model.num_classes = 5;
    cfg.model.contrastive_dim = 6;
    cfg.model.head_hidden = 11;
    cfg.model.dropout_rate = 0.2;
    cfg.model.pooler = "identity";
    cfg.optim.lr_backbone = 3e-4;
    cfg.optim.lr_new = 7e-4;
    cfg.optim.beta1 = 0.85;
    cfg.optim.beta2 = 0.95;
    cfg.optim.adam_eps = 1e-7;
    cfg.optim.weight_decay = 0.02;
    cfg.optim.clip_max_norm = 0.5;
    cfg.optim.accum_steps = 3;
    cfg.optim.warmup_fraction = 0.25;
    cfg.contrastive.lambda_max = 0.3;
    cfg.contrastive.t_ramp = 2.0;
    cfg.contrastive.tau_base = 0.07;
    cfg.contrastive.tau_beta = 0.2;
    cfg.contrastive.ramp_granularity = "epoch";
    cfg.batch_size = 4;
    cfg.epochs = 3;
    cfg.seed = 987654321;
    cfg.enable_fusion = false;
    cfg.enable_contrastive = false;
    cfg.train_data = "a.jsonl";
    cfg.val_data = "b.jsonl";
    cfg.test_data = "c.jsonl";
    cfg.vocab_file = "v.txt";
    cfg.out_dir = "runs/x";

    auto doc = larc::to_json(cfg);
    auto back = larc::training_config_from_json(doc);
    CHECK(larc::to_json(back) == doc);
    CHECK(back.model.pooler == "identity");
    CHECK(back.seed == 987654321);
    CHECK_FALSE(back.enable_fusion);
    CHECK(back.out_dir == "runs/x");
}

TEST_CASE("unknown keys and wrong types are rejected") {
    CHECK_THROWS_AS(larc::training_config_from_json({{"hiden_dim", 64}}), larc::ConfigError);
    CHECK_THROWS_AS(larc::training_config_from_json({{"num_layers", "four"}}),
                    larc::ConfigError);
    CHECK_THROWS_AS(larc::training_config_from_json(json::array({1, 2})), larc::ConfigError);
}

TEST_CASE("validation rejects out-of-range values") {
    auto with = [](const char* key, json v) {
        return larc::training_config_from_json({{key, std::move(v)}});
    };
    CHECK_THROWS_AS(with("num_layers", 0), larc::ConfigError);
    CHECK_THROWS_AS(with("num_heads", 3), larc::ConfigError); // 64 % 3 != 0
    CHECK_THROWS_AS(with("dropout_rate", 1.0), larc::ConfigError);
    CHECK_THROWS_AS(with("pooler", "mean"), larc::ConfigError);
    CHECK_THROWS_AS(with("lr_backbone", 0.0), larc::ConfigError);
    CHECK_THROWS_AS(with("beta2", 1.0), larc::ConfigError);
    CHECK_THROWS_AS(with("warmup_fraction", 1.0), larc::ConfigError);
    CHECK_THROWS_AS(with("t_ramp", 0.0), larc::ConfigError);
    CHECK_THROWS_AS(with("ramp_granularity", "batch"), larc::ConfigError);
    CHECK_THROWS_AS(with("num_classes", 1), larc::ConfigError);
    CHECK_THROWS_AS(with("batch_size", 0), larc::ConfigError);
}

TEST_CASE("file loading surfaces open and parse failures") {
    CHECK_THROWS_AS(larc::load_training_config("/nonexistent/cfg.json"), larc::ConfigError);

    const std::string path = "bad_config_test.json";
    {
        std::ofstream out(path);
        out << "{ not json";
    }
    CHECK_THROWS_AS(larc::load_training_config(path), larc::ConfigError);
    std::remove(path.c_str());

    {
        std::ofstream out(path);
        out << R"({"hidden_dim": 32, "num_heads": 4, "epochs": 1})";
    }
    auto cfg = larc::load_training_config(path);
    CHECK(cfg.model.hidden_dim == 32);
    CHECK(cfg.epochs == 1);
    std::remove(path.c_str());
}
