#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "larc/checkpoint.hpp"
#include "larc/config.hpp"
#include "larc/data.hpp"
#include "larc/metrics.hpp"
#include "larc/model.hpp"

// Training-loop orchestration: epoch/batch iteration with gradient
// accumulation, the lambda ramp, grouped AdamW with the warmup/decay
// schedule, per-step CSV logging, per-epoch validation, and best/final
// checkpointing. Also the evaluation, embedding-export, layer-inspection,
// and gradient-audit entry points the CLI exposes.

namespace larc {

struct EpochStats {
    int epoch = 0;
    double mean_total = 0.0;
    double mean_ce = 0.0;
    double mean_con = 0.0;
    double val_weighted_f1 = 0.0;
};

struct TrainResult {
    std::string best_path;
    std::string final_path;
    std::string log_path;
    int best_epoch = -1;
    double best_val_f1 = 0.0;
    std::vector<EpochStats> epochs;
};

// Trains on pre-tokenized in-memory splits. The vocabulary must already be
// consistent with cfg.model.vocab_size. Writes train_log.csv, best.larc and
// final.larc under cfg.out_dir.
TrainResult train_on(const TrainingConfig& cfg, const std::vector<Example>& train_examples,
                     const std::vector<Example>& val_examples, const Vocabulary& vocab,
                     std::ostream& info);

// File-based entry point: loads JSONL splits and the vocabulary from the
// paths in cfg, then delegates to train_on.
TrainResult train(const TrainingConfig& cfg, std::ostream& info);

// Batched argmax evaluation, dropout off. Labels in the report are 0-based.
EvalReport evaluate(const Model& model, const std::vector<Example>& data,
                    const Vocabulary& vocab, const ModelConfig& mc, int batch_size);

// Projections of every example: fused z rows (space "fused", width d) or
// contrastive head outputs (space "contrastive", width d_c). Rows come back
// in dataset order alongside 0-based labels.
struct EmbeddingDump {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels0;
};
EmbeddingDump compute_embeddings(const Model& model, const std::vector<Example>& data,
                                 const Vocabulary& vocab, const ModelConfig& mc, int batch_size,
                                 const std::string& space);
void write_embeddings_csv(const EmbeddingDump& dump, std::ostream& out);

// Layer-attention weights of a fusion-enabled model as (layer_index, alpha)
// rows, one per fused representation.
std::vector<std::pair<int, double>> layer_attention(const Model& model);
void write_layer_csv(const std::vector<std::pair<int, double>>& rows, std::ostream& out);

// Finite-difference audit of the full joint loss on a tiny double-precision
// model, reported per parameter group.
struct GradcheckReport {
    double worst_backbone = 0.0;
    double worst_new = 0.0;
    std::string worst_backbone_param;
    std::string worst_new_param;
    bool dead_branch_ok = false;  // lambda=0 leaves contrastive params without gradient
    bool signet_live_ok = false;  // lambda>0 reaches the temperature net
    double tolerance = 0.0;
    bool pass = false;
};
GradcheckReport run_gradcheck(double h, double tolerance, std::uint64_t seed);

} // namespace larc
