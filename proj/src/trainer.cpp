#include "larc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "larc/contrastive.hpp"
#include "larc/gradcheck.hpp"
#include "larc/optim.hpp"
#include "larc/rng.hpp"

namespace larc {

namespace {

struct TokenizedSet {
    std::vector<TokenizedExample> toks;
    std::vector<int> labels; // 1-based
};

TokenizedSet tokenize_all(const std::vector<Example>& data, const Vocabulary& vocab,
                          const ModelConfig& mc) {
    if (vocab.size() > mc.vocab_size)
        throw ConfigError("vocabulary (" + std::to_string(vocab.size()) +
                          " tokens) exceeds the model's vocab_size " +
                          std::to_string(mc.vocab_size));
    TokenizedSet set;
    set.toks.reserve(data.size());
    set.labels.reserve(data.size());
    for (const auto& ex : data) {
        if (ex.label < 1 || ex.label > mc.num_classes)
            throw DataError("example label " + std::to_string(ex.label) +
                            " outside 1.." + std::to_string(mc.num_classes));
        set.toks.push_back(tokenize(ex.text, vocab, mc.max_seq_len));
        set.labels.push_back(ex.label);
    }
    return set;
}

struct FlatBatch {
    std::vector<int> ids;
    std::vector<std::uint8_t> mask;
    std::vector<int> labels;
    int batch = 0;
};

FlatBatch gather(const TokenizedSet& set, const std::vector<int>& order, std::size_t lo,
                 std::size_t hi, int max_len) {
    FlatBatch b;
    b.batch = static_cast<int>(hi - lo);
    b.ids.reserve(static_cast<std::size_t>(b.batch) * max_len);
    b.mask.reserve(static_cast<std::size_t>(b.batch) * max_len);
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& t = set.toks[order[i]];
        b.ids.insert(b.ids.end(), t.ids.begin(), t.ids.end());
        b.mask.insert(b.mask.end(), t.mask.begin(), t.mask.end());
        b.labels.push_back(set.labels[order[i]]);
    }
    return b;
}

std::map<std::string, std::array<std::uint64_t, 4>> stream_states(const RngStream& dropout,
                                                                  const RngStream& shuffle) {
    return {{"dropout", dropout.state()}, {"shuffle", shuffle.state()}};
}

} // namespace

TrainResult train_on(const TrainingConfig& cfg, const std::vector<Example>& train_examples,
                     const std::vector<Example>& val_examples, const Vocabulary& vocab,
                     std::ostream& info) {
    cfg.validate();
    if (train_examples.empty()) throw DataError("training split is empty");
    if (val_examples.empty()) throw DataError("validation split is empty");

    const auto train_set = tokenize_all(train_examples, vocab, cfg.model);
    const auto val_set = tokenize_all(val_examples, vocab, cfg.model);
    (void)val_set; // evaluate() re-tokenizes; this validates the split early

    auto init = make_stream(cfg.seed, StreamId::init);
    Model model(cfg.model, cfg.enable_fusion, cfg.enable_contrastive, init,
                cfg.contrastive.tau_base, cfg.contrastive.tau_beta);
    auto dropout = make_stream(cfg.seed, StreamId::dropout);
    auto shuffle = make_stream(cfg.seed, StreamId::shuffle);

    const std::size_t n = train_examples.size();
    const long long batches_per_epoch =
        static_cast<long long>((n + cfg.batch_size - 1) / cfg.batch_size);
    const long long windows_per_epoch =
        (batches_per_epoch + cfg.optim.accum_steps - 1) / cfg.optim.accum_steps;

    OptimizerConfig oc = cfg.optim;
    oc.total_steps = static_cast<long long>(cfg.epochs) * windows_per_epoch;
    validate(oc);

    AdamW opt(model.params(), oc);
    const auto& params = opt.params();

    std::filesystem::create_directories(cfg.out_dir);
    TrainResult result;
    result.log_path = cfg.out_dir + "/train_log.csv";
    result.best_path = cfg.out_dir + "/best.larc";
    result.final_path = cfg.out_dir + "/final.larc";
    std::ofstream log(result.log_path, std::ios::trunc);
    if (!log) throw DataError("cannot open log for writing: " + result.log_path);
    log << "step,epoch,lambda,ce,con,total,lr_backbone,lr_new,grad_norm,clip_scale\n";
    log << std::setprecision(10);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    long long opt_step = 0;
    Checkpoint last_good =
        make_checkpoint(model, cfg, 0, 0, vocab, stream_states(dropout, shuffle));
    const bool ramp_by_epoch = cfg.contrastive.ramp_granularity == "epoch";

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle.shuffle(order);
        double ep_total = 0.0, ep_ce = 0.0, ep_con = 0.0;
        long long ep_windows = 0;

        std::size_t cursor = 0;
        while (cursor < n) {
            const double t = ramp_by_epoch
                                 ? static_cast<double>(epoch)
                                 : static_cast<double>(opt_step) /
                                       static_cast<double>(windows_per_epoch);
            const double lambda = cfg.enable_contrastive
                                      ? schedule_lambda(t, cfg.contrastive.lambda_max,
                                                        cfg.contrastive.t_ramp)
                                      : 0.0;

            zero_grads(params);
            double win_total = 0.0, win_ce = 0.0, win_con = 0.0;
            int micros = 0;
            try {
                for (; micros < cfg.optim.accum_steps && cursor < n; ++micros) {
                    const std::size_t hi =
                        std::min(cursor + static_cast<std::size_t>(cfg.batch_size), n);
                    auto b = gather(train_set, order, cursor, hi, cfg.model.max_seq_len);
                    cursor = hi;

                    Tape tape;
                    auto out = model.forward(b.ids, b.mask, b.batch, b.labels, lambda, true,
                                             dropout, &tape);
                    auto total = out.loss.total;
                    tape.backward(total);
                    win_total += static_cast<double>(total.item());
                    win_ce += static_cast<double>(out.loss.ce.item());
                    win_con += static_cast<double>(out.loss.con.item());
                }
                // Snapshot before the update: these params just produced finite
                // losses, while the post-step params are unvalidated until the
                // next window's forward pass.
                last_good = make_checkpoint(model, cfg, opt_step, epoch, vocab,
                                            stream_states(dropout, shuffle));
                scale_grads(params, 1.0 / micros);
                const double grad_norm = global_grad_norm(params);
                const double clip_scale = clip_global_norm(params, oc.clip_max_norm);
                const auto lrs = lr_at(opt_step, oc);
                opt.step(lrs);

                log << opt_step << ',' << epoch << ',' << lambda << ',' << win_ce / micros
                    << ',' << win_con / micros << ',' << win_total / micros << ','
                    << lrs.backbone << ',' << lrs.new_group << ',' << grad_norm << ','
                    << clip_scale << '\n';
            } catch (const NumericError&) {
                save_checkpoint(cfg.out_dir + "/last_good.larc", last_good);
                info << "numerical failure at step " << opt_step
                     << "; last good state saved to " << cfg.out_dir << "/last_good.larc\n";
                throw;
            }

            ep_total += win_total / micros;
            ep_ce += win_ce / micros;
            ep_con += win_con / micros;
            ++ep_windows;
            ++opt_step;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_total = ep_total / static_cast<double>(ep_windows);
        stats.mean_ce = ep_ce / static_cast<double>(ep_windows);
        stats.mean_con = ep_con / static_cast<double>(ep_windows);
        auto report = evaluate(model, val_examples, vocab, cfg.model, cfg.batch_size);
        stats.val_weighted_f1 = report.weighted_f1;
        result.epochs.push_back(stats);
        info << "epoch " << epoch << " loss " << std::setprecision(6) << stats.mean_total
             << " val weighted_f1 " << stats.val_weighted_f1 << "\n";

        if (stats.val_weighted_f1 > result.best_val_f1 || result.best_epoch < 0) {
            result.best_val_f1 = stats.val_weighted_f1;
            result.best_epoch = epoch;
            save_checkpoint(result.best_path,
                            make_checkpoint(model, cfg, opt_step, epoch, vocab,
                                            stream_states(dropout, shuffle)));
        }
    }

    save_checkpoint(result.final_path,
                    make_checkpoint(model, cfg, opt_step, cfg.epochs - 1, vocab,
                                    stream_states(dropout, shuffle)));
    return result;
}

TrainResult train(const TrainingConfig& cfg, std::ostream& info) {
    cfg.validate();
    if (cfg.train_data.empty() || cfg.val_data.empty())
        throw ConfigError("train_data and val_data paths are required");
    if (cfg.vocab_file.empty()) throw ConfigError("vocab_file path is required");
    auto vocab = Vocabulary::from_file(cfg.vocab_file);
    auto train_examples = load_jsonl(cfg.train_data, cfg.model.num_classes);
    auto val_examples = load_jsonl(cfg.val_data, cfg.model.num_classes);
    return train_on(cfg, train_examples, val_examples, vocab, info);
}

EvalReport evaluate(const Model& model, const std::vector<Example>& data,
                    const Vocabulary& vocab, const ModelConfig& mc, int batch_size) {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    const auto set = tokenize_all(data, vocab, mc);
    const std::size_t n = data.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<int> y_true, y_pred;
    y_true.reserve(n);
    y_pred.reserve(n);
    auto dropout = make_stream(0, StreamId::dropout); // unused: dropout off
    for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi = std::min(lo + static_cast<std::size_t>(batch_size), n);
        auto b = gather(set, order, lo, hi, mc.max_seq_len);
        auto out = model.forward(b.ids, b.mask, b.batch, {}, 0.0, false, dropout, nullptr);
        const int k = mc.num_classes;
        for (int i = 0; i < b.batch; ++i) {
            const float* row = out.logits.data() + static_cast<std::size_t>(i) * k;
            int arg = 0;
            for (int j = 1; j < k; ++j)
                if (row[j] > row[arg]) arg = j;
            y_pred.push_back(arg);
            y_true.push_back(b.labels[i] - 1);
        }
    }
    return weighted_f1(y_true, y_pred, mc.num_classes);
}

EmbeddingDump compute_embeddings(const Model& model, const std::vector<Example>& data,
                                 const Vocabulary& vocab, const ModelConfig& mc, int batch_size,
                                 const std::string& space) {
    if (space != "fused" && space != "contrastive")
        throw ConfigError("space must be 'fused' or 'contrastive', got '" + space + "'");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    const auto set = tokenize_all(data, vocab, mc);
    const std::size_t n = data.size();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    EmbeddingDump dump;
    dump.rows.reserve(n);
    dump.labels0.reserve(n);
    auto dropout = make_stream(0, StreamId::dropout);
    for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi = std::min(lo + static_cast<std::size_t>(batch_size), n);
        auto b = gather(set, order, lo, hi, mc.max_seq_len);
        auto out = model.forward(b.ids, b.mask, b.batch, {}, 0.0, false, dropout, nullptr);
        // The projection head exists in every arm (identical init draws), so
        // the contrastive space is well-defined even when that branch never
        // trained; apply it directly rather than relying on the loss gate.
        Tensor rows = space == "fused" ? out.z : model.proj_head.project(out.z, nullptr);
        const int width = rows.shape()[1];
        for (int i = 0; i < b.batch; ++i) {
            std::vector<double> row(width);
            for (int j = 0; j < width; ++j)
                row[j] = static_cast<double>(
                    rows.data()[static_cast<std::size_t>(i) * width + j]);
            dump.rows.push_back(std::move(row));
            dump.labels0.push_back(b.labels[i] - 1);
        }
    }
    return dump;
}

void write_embeddings_csv(const EmbeddingDump& dump, std::ostream& out) {
    if (dump.rows.empty()) throw DataError("no embeddings to write");
    const std::size_t width = dump.rows[0].size();
    out << "id,label";
    for (std::size_t j = 0; j < width; ++j) out << ",v_" << j;
    out << "\n";
    out << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (std::size_t i = 0; i < dump.rows.size(); ++i) {
        out << i << ',' << dump.labels0[i];
        for (double v : dump.rows[i]) out << ',' << v;
        out << "\n";
    }
}

std::vector<std::pair<int, double>> layer_attention(const Model& model) {
    if (!model.fusion_enabled())
        throw ConfigError("layer attention requires a fusion-enabled checkpoint");
    auto alpha = model.fusion.attention_weights(nullptr);
    std::vector<std::pair<int, double>> rows;
    rows.reserve(alpha.size());
    for (std::size_t i = 0; i < alpha.size(); ++i)
        rows.emplace_back(static_cast<int>(i) + 1, static_cast<double>(alpha.data()[i]));
    return rows;
}

void write_layer_csv(const std::vector<std::pair<int, double>>& rows, std::ostream& out) {
    out << "layer_index,alpha\n";
    out << std::setprecision(10);
    for (const auto& [idx, a] : rows) out << idx << ',' << a << "\n";
}

GradcheckReport run_gradcheck(double h, double tolerance, std::uint64_t seed) {
    ModelConfig mc;
    mc.num_layers = 2;
    mc.hidden_dim = 16;
    mc.num_heads = 2;
    mc.ffn_dim = 32;
    mc.vocab_size = 24;
    mc.max_seq_len = 6;
    mc.num_classes = 2;
    mc.contrastive_dim = 16;
    mc.head_hidden = 16;

    auto init = make_stream(seed, StreamId::init);
    ModelT<double> model(mc, true, true, init);

    // The training init (sigma=0.02 weights, zero biases) is a nearly
    // singular audit point: projection norms land around 5e-3, so an h=1e-3
    // central difference straddles the l2-normalize curvature and measures
    // truncation instead of gradient correctness. Jitter every parameter to
    // a generic O(0.3) neighborhood of its init (gains stay near 1, biases
    // become nonzero, projection norms become O(1)); analytic gradients are
    // point-independent, and the training-init point is still audited at a
    // finer step by the model tests.
    // 0.12 keeps activations in the smooth regions of relu/tanh/softmax;
    // larger jitters sharpen the contrastive softmax (third derivatives grow
    // like 1/tau^3) and push central differences at coarse steps off the
    // quadratic regime.
    for (auto& p : model.params()) {
        auto* d = p.tensor.data();
        for (std::size_t i = 0; i < p.tensor.size(); ++i) d[i] += init.normal(0.0, 0.12);
    }

    const int B = 4, T = 6;
    auto synth = make_stream(seed, StreamId::synth);
    std::vector<int> ids(B * T);
    for (auto& id : ids) id = 1 + static_cast<int>(synth.below(23));
    std::vector<std::uint8_t> mask(B * T, 1);
    mask[T - 1] = 0; // one padded position keeps masking on the audited path
    const std::vector<int> labels = {1, 1, 2, 2};

    auto dropout = make_stream(seed, StreamId::dropout);
    auto loss_fn = [&](TapeT<double>* tape) {
        return model
            .forward(ids, mask, B, labels, 0.15, false, dropout, tape)
            .loss.total;
    };

    std::vector<TensorT<double>> backbone, fresh;
    std::vector<std::string> backbone_names, fresh_names;
    for (auto& p : model.params()) {
        (p.backbone ? backbone : fresh).push_back(p.tensor);
        (p.backbone ? backbone_names : fresh_names).push_back(p.name);
    }

    GradcheckReport report;
    report.tolerance = tolerance;
    auto ab = finite_diff_audit<double>(loss_fn, backbone, h, 1e-8, 1e-4);
    report.worst_backbone = ab.max_rel_err;
    report.worst_backbone_param = backbone_names[ab.worst_param];
    auto an = finite_diff_audit<double>(loss_fn, fresh, h, 1e-8, 1e-4);
    report.worst_new = an.max_rel_err;
    report.worst_new_param = fresh_names[an.worst_param];

    // lambda = 0 must leave the contrastive branch out of the graph entirely.
    for (auto& p : model.params()) p.tensor.zero_grad();
    {
        TapeT<double> tape;
        auto dead = model.forward(ids, mask, B, labels, 0.0, false, dropout, &tape).loss.total;
        tape.backward(dead);
    }
    report.dead_branch_ok = true;
    for (auto& p : model.params()) {
        const bool contrastive_param =
            p.name.rfind("proj.", 0) == 0 || p.name.rfind("signet.", 0) == 0;
        if (!contrastive_param) continue;
        if (!p.tensor.has_grad()) continue;
        for (std::size_t i = 0; i < p.tensor.size(); ++i)
            if (p.tensor.grad()[i] != 0.0) report.dead_branch_ok = false;
    }

    // and lambda > 0 must reach the temperature net.
    for (auto& p : model.params()) p.tensor.zero_grad();
    {
        TapeT<double> tape;
        auto live = loss_fn(&tape);
        tape.backward(live);
    }
    report.signet_live_ok = false;
    for (auto& p : model.params()) {
        if (p.name.rfind("signet.", 0) != 0 || !p.tensor.has_grad()) continue;
        for (std::size_t i = 0; i < p.tensor.size(); ++i)
            if (p.tensor.grad()[i] != 0.0) report.signet_live_ok = true;
    }

    report.pass = report.worst_backbone < tolerance && report.worst_new < tolerance &&
                  report.dead_branch_ok && report.signet_live_ok;
    return report;
}

} // namespace larc
