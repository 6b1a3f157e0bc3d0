#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "larc/checkpoint.hpp"
#include "larc/config.hpp"
#include "larc/data.hpp"
#include "larc/metrics.hpp"
#include "larc/rng.hpp"
#include "larc/trainer.hpp"

// Subcommand front end. Exit codes: 0 success, 2 config error, 3 data
// error, 4 numerical failure (a failed gradient audit counts as one).

namespace {

// LARC_THREADS caps intra-op parallelism. Every kernel in this build is
// single-threaded, so any legal value runs on one thread; the variable is
// still validated so a typo fails loudly instead of silently.
void check_thread_cap() {
    const char* raw = std::getenv("LARC_THREADS");
    if (raw == nullptr) return;
    char* end = nullptr;
    const long v = std::strtol(raw, &end, 10);
    if (end == raw || *end != '\0' || v < 1)
        throw larc::ConfigError("LARC_THREADS must be a positive integer, got '" +
                                std::string(raw) + "'");
}

struct GenDataArgs {
    int classes = 0;
    double overlap = 0.0;
    int n_per_class = 0;
    std::uint64_t seed = 42;
    std::string out_dir;
    int vocab_size = 256;
    int max_len = 32;
    double train_frac = 0.64;
    double val_frac = 0.16;
    double test_frac = 0.20;
};

void run_gen_data(const GenDataArgs& a) {
    auto synth_rng = larc::make_stream(a.seed, larc::StreamId::synth);
    auto sd = larc::generate_synthetic(a.classes, a.vocab_size, a.n_per_class, a.overlap,
                                       a.max_len, synth_rng);

    larc::SplitSpec spec{a.train_frac, a.val_frac, a.test_frac};
    auto shuffle_rng = larc::make_stream(a.seed, larc::StreamId::shuffle);
    auto splits = larc::split_dataset(sd.examples, spec, shuffle_rng);

    std::filesystem::create_directories(a.out_dir);
    larc::write_jsonl(a.out_dir + "/train.jsonl", splits.train);
    larc::write_jsonl(a.out_dir + "/val.jsonl", splits.val);
    larc::write_jsonl(a.out_dir + "/test.jsonl", splits.test);
    sd.vocab.save(a.out_dir + "/vocab.txt");

    std::cout << "wrote " << splits.train.size() << "/" << splits.val.size() << "/"
              << splits.test.size() << " examples (vocab " << sd.vocab.size() << ") to "
              << a.out_dir << "\n";
}

void run_train(const std::string& config_path) {
    auto cfg = larc::load_training_config(config_path);
    auto result = larc::train(cfg, std::cout);
    std::cout << "best epoch " << result.best_epoch << " val weighted F1 "
              << result.best_val_f1 << "\n";
    std::cout << "best checkpoint:  " << result.best_path << "\n";
    std::cout << "final checkpoint: " << result.final_path << "\n";
    std::cout << "training log:     " << result.log_path << "\n";
}

void run_eval(const std::string& ckpt_path, const std::string& data_path,
              const std::string& confusion_out) {
    auto ck = larc::load_checkpoint(ckpt_path);
    auto model = larc::model_from_checkpoint(ck);
    auto vocab = larc::vocab_from_checkpoint(ck);
    auto data = larc::load_jsonl(data_path, ck.config.model.num_classes);

    auto report = larc::evaluate(model, data, vocab, ck.config.model, ck.config.batch_size);
    std::cout << larc::to_json(report).dump(2) << "\n";
    if (!confusion_out.empty()) {
        std::ofstream out(confusion_out);
        if (!out) throw larc::DataError("cannot open " + confusion_out + " for writing");
        out << larc::confusion_csv(report);
    }
}

void run_inspect_layers(const std::string& ckpt_path) {
    auto ck = larc::load_checkpoint(ckpt_path);
    auto model = larc::model_from_checkpoint(ck);
    larc::write_layer_csv(larc::layer_attention(model), std::cout);
}

void run_export_embeddings(const std::string& ckpt_path, const std::string& data_path,
                           const std::string& space, const std::string& out_path) {
    auto ck = larc::load_checkpoint(ckpt_path);
    auto model = larc::model_from_checkpoint(ck);
    auto vocab = larc::vocab_from_checkpoint(ck);
    auto data = larc::load_jsonl(data_path, ck.config.model.num_classes);

    auto dump = larc::compute_embeddings(model, data, vocab, ck.config.model,
                                         ck.config.batch_size, space);
    std::ofstream out(out_path);
    if (!out) throw larc::DataError("cannot open " + out_path + " for writing");
    larc::write_embeddings_csv(dump, out);
    std::cout << "wrote " << dump.rows.size() << " " << space << " vectors to " << out_path
              << "\n";
}

int run_gradcheck_cmd(double h, double tol, std::uint64_t seed) {
    auto report = larc::run_gradcheck(h, tol, seed);
    std::cout << "backbone group:  worst rel err " << report.worst_backbone << " ("
              << report.worst_backbone_param << ")\n";
    std::cout << "new-param group: worst rel err " << report.worst_new << " ("
              << report.worst_new_param << ")\n";
    std::cout << "dead contrastive branch at lambda=0: "
              << (report.dead_branch_ok ? "ok" : "FAILED") << "\n";
    std::cout << "temperature net receives gradient:   "
              << (report.signet_live_ok ? "ok" : "FAILED") << "\n";
    std::cout << (report.pass ? "PASS" : "FAIL") << " (tolerance " << report.tolerance << ")\n";
    return report.pass ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"layer-attentive residual classifier with contrastive training"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", config_path, "JSON config file")->required();

    std::string ckpt_path, data_path, confusion_out;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a JSONL dataset");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval_cmd->add_option("--data", data_path, "JSONL dataset")->required();
    eval_cmd->add_option("--confusion-out", confusion_out, "also write the confusion matrix CSV");

    std::string il_ckpt;
    auto* il_cmd = app.add_subcommand("inspect-layers", "print layer attention weights as CSV");
    il_cmd->add_option("--ckpt", il_ckpt, "checkpoint file")->required();

    std::string ee_ckpt, ee_data, ee_space, ee_out;
    auto* ee_cmd = app.add_subcommand("export-embeddings", "dump per-example vectors as CSV");
    ee_cmd->add_option("--ckpt", ee_ckpt, "checkpoint file")->required();
    ee_cmd->add_option("--data", ee_data, "JSONL dataset")->required();
    ee_cmd->add_option("--space", ee_space, "fused (width d) or contrastive (width d_c)")
        ->required()
        ->check(CLI::IsMember({"fused", "contrastive"}));
    ee_cmd->add_option("--out", ee_out, "output CSV path")->required();

    double gc_h = 1e-3, gc_tol = 1e-3;
    std::uint64_t gc_seed = 42;
    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference audit of the joint loss");
    gc_cmd->add_option("--step", gc_h, "central-difference step");
    gc_cmd->add_option("--tol", gc_tol, "worst relative error allowed per group");
    gc_cmd->add_option("--seed", gc_seed, "init seed for the audited model");

    GenDataArgs gd;
    auto* gd_cmd = app.add_subcommand("gen-data", "write a synthetic confusable-class corpus");
    gd_cmd->add_option("--classes", gd.classes, "number of classes")->required();
    gd_cmd->add_option("--overlap", gd.overlap, "shared-vocabulary probability in [0,1]");
    gd_cmd->add_option("--n", gd.n_per_class, "examples per class")->required();
    gd_cmd->add_option("--seed", gd.seed, "generator seed");
    gd_cmd->add_option("--out", gd.out_dir, "output directory")->required();
    gd_cmd->add_option("--vocab-size", gd.vocab_size, "total vocabulary size incl. specials");
    gd_cmd->add_option("--max-len", gd.max_len, "maximum text length in tokens");
    gd_cmd->add_option("--train-frac", gd.train_frac, "train split fraction");
    gd_cmd->add_option("--val-frac", gd.val_frac, "validation split fraction");
    gd_cmd->add_option("--test-frac", gd.test_frac, "test split fraction");

    try {
        app.parse(argc, argv);
        check_thread_cap();

        if (*train_cmd) run_train(config_path);
        if (*eval_cmd) run_eval(ckpt_path, data_path, confusion_out);
        if (*il_cmd) run_inspect_layers(il_ckpt);
        if (*ee_cmd) run_export_embeddings(ee_ckpt, ee_data, ee_space, ee_out);
        if (*gc_cmd) return run_gradcheck_cmd(gc_h, gc_tol, gc_seed);
        if (*gd_cmd) run_gen_data(gd);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const larc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const larc::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const larc::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const larc::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
