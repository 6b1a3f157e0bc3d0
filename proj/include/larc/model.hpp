#pragma once

// Full model: encoder -> (optional) fusion -> classification path and
// (optional) contrastive path, plus the parameter registry that drives the
// optimizer groups and the checkpoint format.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "larc/classifier.hpp"
#include "larc/common.hpp"
#include "larc/config.hpp"
#include "larc/contrastive.hpp"
#include "larc/encoder.hpp"
#include "larc/fusion.hpp"
#include "larc/ops.hpp"
#include "larc/rng.hpp"
#include "larc/tensor.hpp"

namespace larc {

template <class S>
struct ParamInfoT {
    std::string name;
    TensorT<S> tensor;
    bool backbone = false; // encoder blocks + embeddings; everything else is "new"
    bool decay = false;    // weight decay applies to rank-2 tensors only
};

using ParamInfo = ParamInfoT<float>;

template <class S>
struct ModelOutputT {
    TensorT<S> logits; // [B, K]
    TensorT<S> z;      // representation fed to both heads, [B, d]
    TensorT<S> proj;   // contrastive projections [B, contrastive_dim], when computed
    TensorT<S> tau;    // per-anchor temperatures [B], when computed
    LossBreakdownT<S> loss;
    bool has_loss = false;
};

template <class S>
class ModelT {
public:
    ModelT(const ModelConfig& cfg, bool enable_fusion, bool enable_contrastive, RngStream& init,
           double tau_base = kTauBase, double tau_beta = kTauBeta)
        : encoder(cfg, init), fusion(cfg.num_layers + 1, cfg.hidden_dim),
          proj_head(cfg.hidden_dim, cfg.head_hidden, cfg.contrastive_dim, init),
          signet(cfg.hidden_dim, init),
          classifier(cfg.hidden_dim, cfg.head_hidden, cfg.num_classes, cfg.dropout_rate, init),
          cfg_(cfg), fusion_on_(enable_fusion), contrastive_on_(enable_contrastive),
          tau_base_(tau_base), tau_beta_(tau_beta) {
        // Only parameters of active branches are registered: the optimizer
        // must not decay weights that no loss term can reach. Construction
        // above always draws every module from the init stream, so disabled
        // modules sit at the same initialization in every ablation arm.
        auto reg = [&](bool backbone) {
            return [this, backbone](const std::string& name, TensorT<S>& t) {
                t.set_requires_grad(true);
                params_.push_back({name, t, backbone, t.rank() == 2});
            };
        };
        encoder.visit([&](const std::string& name, TensorT<S>& t) {
            t.set_requires_grad(true);
            const bool backbone = name.rfind("encoder.pooler.", 0) != 0;
            params_.push_back({name, t, backbone, t.rank() == 2});
        });
        if (fusion_on_) fusion.visit(reg(false));
        if (contrastive_on_) {
            proj_head.visit(reg(false));
            signet.visit(reg(false));
        }
        classifier.visit(reg(false));

        std::set<std::string> names;
        for (const auto& p : params_)
            if (!names.insert(p.name).second)
                throw ConfigError("model: duplicate parameter name " + p.name);
    }

    // labels are 1-based and may be empty (inference). lambda weighs the
    // contrastive term; it only matters when labels are present and the
    // contrastive branch is enabled.
    ModelOutputT<S> forward(const std::vector<int>& ids, const std::vector<std::uint8_t>& mask,
                            int batch, const std::vector<int>& labels, double lambda,
                            bool training, RngStream& dropout_rng,
                            TapeT<std::type_identity_t<S>>* tape,
                            std::vector<std::vector<S>>* attn_probs = nullptr,
                            bool want_projections = false) const {
        if (!labels.empty() && static_cast<int>(labels.size()) != batch)
            throw ShapeError("model: labels/batch size mismatch");

        ModelOutputT<S> out;
        auto stack = encoder.forward(ids, mask, batch, tape, attn_probs);
        out.z = fusion_on_ ? fusion.forward(stack, tape) : stack.back();
        out.logits = classifier.classify(out.z, training, dropout_rng, tape);

        const bool loss_needs_proj =
            contrastive_on_ && lambda > 0.0 && batch >= 2 && !labels.empty();
        if (loss_needs_proj || (contrastive_on_ && want_projections)) {
            out.proj = proj_head.project(out.z, tape);
            out.tau = signet.temperatures(out.z, tau_base_, tau_beta_, tape);
        }

        if (!labels.empty()) {
            std::vector<int> zero_based(labels.size());
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] < 1 || labels[i] > cfg_.num_classes)
                    throw DataError("model: label out of range: " + std::to_string(labels[i]));
                zero_based[i] = labels[i] - 1;
            }
            auto& loss = out.loss;
            loss.lambda_t = contrastive_on_ ? lambda : 0.0;
            loss.ce = ops::cross_entropy(out.logits, zero_based, tape);
            if (loss_needs_proj) {
                bool degenerate = false;
                loss.con = ops::supcon_loss(out.proj, labels, out.tau, tape, &degenerate);
                loss.degenerate = degenerate;
            } else {
                // contrastive term contributes nothing; keep it out of the graph
                loss.con = TensorT<S>::scalar(static_cast<S>(0));
                loss.degenerate = batch < 2;
                loss.lambda_t = 0.0;
            }
            loss.total = joint_total(loss.ce, loss.con, loss.lambda_t, tape);
            out.has_loss = true;
        }
        return out;
    }

    std::vector<ParamInfoT<S>>& params() { return params_; }
    const std::vector<ParamInfoT<S>>& params() const { return params_; }

    const ModelConfig& config() const { return cfg_; }
    bool fusion_enabled() const { return fusion_on_; }
    bool contrastive_enabled() const { return contrastive_on_; }

    EncoderT<S> encoder;
    FusionT<S> fusion;
    ProjectionHeadT<S> proj_head;
    SigmaNetT<S> signet;
    ClassifierHeadT<S> classifier;

private:
    ModelConfig cfg_;
    bool fusion_on_ = true;
    bool contrastive_on_ = true;
    double tau_base_ = kTauBase;
    double tau_beta_ = kTauBeta;
    std::vector<ParamInfoT<S>> params_;
};

using Model = ModelT<float>;

} // namespace larc
