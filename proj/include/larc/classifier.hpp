#pragma once

// Classification head (GELU hidden layer, dropout, logits) and the joint
// objective total = ce + lambda * con.

#include <functional>
#include <string>

#include "larc/common.hpp"
#include "larc/ops.hpp"
#include "larc/rng.hpp"
#include "larc/tensor.hpp"

namespace larc {

template <class S>
struct LossBreakdownT {
    TensorT<S> ce;
    TensorT<S> con;
    TensorT<S> total;
    double lambda_t = 0.0;
    bool degenerate = false; // contrastive batch had no usable anchors
};

using LossBreakdown = LossBreakdownT<float>;

template <class S>
class ClassifierHeadT {
public:
    ClassifierHeadT(int dim, int hidden, int classes, double dropout_rate, RngStream& init)
        : rate_(dropout_rate) {
        const double sd = 0.02;
        w3 = TensorT<S>::randn({hidden, dim}, init, sd);
        b3 = TensorT<S>::zeros({hidden});
        w4 = TensorT<S>::randn({classes, hidden}, init, sd);
        b4 = TensorT<S>::zeros({classes});
    }

    // o = W4 . dropout(gelu(W3 . z + b3)) + b4
    TensorT<S> classify(const TensorT<S>& z, bool training, RngStream& dropout_rng,
                        TapeT<std::type_identity_t<S>>* tape) const {
        auto h = ops::gelu(ops::linear(z, w3, b3, tape), tape);
        return ops::linear(ops::dropout(h, rate_, training, dropout_rng, tape), w4, b4, tape);
    }

    void visit(const std::function<void(const std::string&, TensorT<S>&)>& fn) {
        fn("classifier.w3", w3);
        fn("classifier.b3", b3);
        fn("classifier.w4", w4);
        fn("classifier.b4", b4);
    }

    double dropout_rate() const { return rate_; }

    TensorT<S> w3, b3, w4, b4;

private:
    double rate_ = 0.4;
};

using ClassifierHead = ClassifierHeadT<float>;

// Combines the two losses. With lambda == 0 the contrastive term is not in
// the graph at all: total is the ce node itself.
template <class S>
TensorT<S> joint_total(const TensorT<S>& ce, const TensorT<S>& con, double lambda,
                       TapeT<std::type_identity_t<S>>* tape) {
    if (!(lambda >= 0.0)) throw ConfigError("joint_total: lambda must be >= 0");
    if (lambda == 0.0) return ce;
    return ops::add(ce, ops::affine_const(con, static_cast<S>(lambda), static_cast<S>(0), tape),
                    tape);
}

} // namespace larc
