#pragma once

// Layer-attentive residual fusion: learnable per-layer scores, softmax
// normalization, convex combination of the layer stack, and a residual add of
// the layer-normalized final entry.

#include <functional>
#include <string>
#include <vector>

#include "larc/common.hpp"
#include "larc/ops.hpp"
#include "larc/tensor.hpp"

namespace larc {

template <class S>
class FusionT {
public:
    FusionT(int stack_size, int dim) : stack_size_(stack_size) {
        if (stack_size < 1) throw ConfigError("fusion: stack size must be >= 1");
        if (dim < 1) throw ConfigError("fusion: dim must be >= 1");
        // zero scores give exactly uniform attention at step 0
        w = TensorT<S>::zeros({stack_size});
        ln_gain = TensorT<S>::full({dim}, static_cast<S>(1));
        ln_bias = TensorT<S>::zeros({dim});
    }

    // normalized attention over the stack entries
    TensorT<S> attention_weights(TapeT<std::type_identity_t<S>>* tape) const {
        return ops::softmax_rows(w, tape);
    }

    // z = sum_l alpha_l h^l + layer_norm(h_last)
    TensorT<S> forward(const std::vector<TensorT<S>>& stack,
                       TapeT<std::type_identity_t<S>>* tape) const {
        if (static_cast<int>(stack.size()) != stack_size_)
            throw ShapeError("fusion: expected " + std::to_string(stack_size_) +
                             " stack entries, got " + std::to_string(stack.size()));
        auto fused = ops::weighted_layer_sum(stack, attention_weights(tape), tape);
        auto residual = ops::layer_norm(stack.back(), ln_gain, ln_bias, tape);
        return ops::add(fused, residual, tape);
    }

    void visit(const std::function<void(const std::string&, TensorT<S>&)>& fn) {
        fn("fusion.w", w);
        fn("fusion.ln.gain", ln_gain);
        fn("fusion.ln.bias", ln_bias);
    }

    int stack_size() const { return stack_size_; }

    TensorT<S> w, ln_gain, ln_bias;

private:
    int stack_size_ = 0;
};

using Fusion = FusionT<float>;

} // namespace larc
