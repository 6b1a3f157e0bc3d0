#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "larc/ops.hpp"
#include "larc/rng.hpp"
#include "larc/tensor.hpp"

// Supervised contrastive pieces: cosine similarity, row normalization, the
// batch loss with per-anchor temperature, the adaptive temperature squash,
// and the linear ramp schedule for the loss weight.

namespace larc {

inline constexpr double kTauBase = 0.05;
inline constexpr double kTauBeta = 0.1;
inline constexpr double kLambdaMax = 0.15;
inline constexpr double kRampEpochs = 5.0;
inline constexpr double kCosineEps = 1e-8;

// plain (non-tape) cosine similarity with epsilon-floored norms
template <class S>
double cosine_sim(const S* u, const S* v, std::size_t n) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    return dot / (std::max(std::sqrt(nu), kCosineEps) * std::max(std::sqrt(nv), kCosineEps));
}

template <class S>
double cosine_sim(const TensorT<S>& u, const TensorT<S>& v) {
    if (u.size() != v.size()) throw ShapeError("cosine_sim: length mismatch");
    return cosine_sim(u.data(), v.data(), u.size());
}

namespace ops {

// Row-wise x / max(||x||, eps). Below the epsilon floor the divisor is the
// constant eps, so the backward there is just g/eps.
template <class S>
TensorT<S> l2_normalize_rows(const TensorT<S>& x, TapeT<std::type_identity_t<S>>* tape) {
    if (x.rank() != 2) throw ShapeError("l2_normalize_rows: input must be rank 2");
    const int n = x.dim(0), d = x.dim(1);
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    std::vector<double> radius(n);
    std::vector<std::uint8_t> floored(n);
    for (int i = 0; i < n; ++i) {
        const S* xr = x.data() + static_cast<std::size_t>(i) * d;
        double nrm = 0.0;
        for (int j = 0; j < d; ++j) nrm += static_cast<double>(xr[j]) * xr[j];
        nrm = std::sqrt(nrm);
        floored[i] = nrm <= kCosineEps ? 1 : 0;
        radius[i] = floored[i] ? kCosineEps : nrm;
        S* orow = out.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) orow[j] = static_cast<S>(xr[j] / radius[i]);
    }
    check_finite(out, "l2_normalize_rows");
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc, radius = std::move(radius), floored = std::move(floored), n,
                      d]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gx = xc.grad().data();
            for (int i = 0; i < n; ++i) {
                const S* gr = g + static_cast<std::size_t>(i) * d;
                const S* nr = oc.data() + static_cast<std::size_t>(i) * d;
                S* gxr = gx + static_cast<std::size_t>(i) * d;
                if (floored[i]) {
                    for (int j = 0; j < d; ++j)
                        gxr[j] += static_cast<S>(gr[j] / radius[i]);
                    continue;
                }
                double ng = 0.0;
                for (int j = 0; j < d; ++j) ng += static_cast<double>(nr[j]) * gr[j];
                for (int j = 0; j < d; ++j)
                    gxr[j] += static_cast<S>((static_cast<double>(gr[j]) - nr[j] * ng) / radius[i]);
            }
        });
    }
    return out;
}

// Batch supervised contrastive loss. proj rows are raw projections; cosine
// similarity is realized as normalize-then-dot. For each anchor i with at
// least one same-label partner, the term is the mean over its positives p of
//   -log( exp(s_ip / tau_i) / sum_{a != i} exp(s_ia / tau_i) )
// and the loss is the mean of those terms over anchors that have positives.
// Anchors without positives are dropped from the average entirely; a batch
// where every anchor is positive-less yields loss 0 and sets *degenerate.
template <class S>
TensorT<S> supcon_loss(const TensorT<S>& proj, const std::vector<int>& labels,
                       const TensorT<S>& tau, TapeT<std::type_identity_t<S>>* tape, bool* degenerate = nullptr) {
    if (proj.rank() != 2) throw ShapeError("supcon_loss: projections must be rank 2");
    const int b = proj.dim(0);
    if (b < 2) throw ShapeError("supcon_loss: batch must have at least 2 rows");
    if (labels.size() != static_cast<std::size_t>(b)) throw ShapeError("supcon_loss: label count mismatch");
    if (tau.size() != static_cast<std::size_t>(b)) throw ShapeError("supcon_loss: tau count mismatch");
    for (std::size_t i = 0; i < tau.size(); ++i)
        if (!(tau.data()[i] > S(0))) throw NumericError("supcon_loss: tau must be positive");
    if (degenerate) *degenerate = false;

    TensorT<S> normed = l2_normalize_rows(proj, tape);
    const int d = normed.dim(1);

    // pairwise cosine similarities, double accumulated
    std::vector<double> sim(static_cast<std::size_t>(b) * b, 0.0);
    for (int i = 0; i < b; ++i) {
        const S* ni = normed.data() + static_cast<std::size_t>(i) * d;
        for (int a = i + 1; a < b; ++a) {
            const S* na = normed.data() + static_cast<std::size_t>(a) * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += static_cast<double>(ni[j]) * na[j];
            sim[static_cast<std::size_t>(i) * b + a] = dot;
            sim[static_cast<std::size_t>(a) * b + i] = dot;
        }
    }

    std::vector<int> valid;
    double total = 0.0;
    std::vector<double> lse(b, 0.0);
    for (int i = 0; i < b; ++i) {
        int pos = 0;
        for (int a = 0; a < b; ++a)
            if (a != i && labels[a] == labels[i]) ++pos;
        if (pos == 0) continue;
        valid.push_back(i);
        const double ti = static_cast<double>(tau.data()[i]);
        double mx = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < b; ++a)
            if (a != i) mx = std::max(mx, sim[static_cast<std::size_t>(i) * b + a] / ti);
        double denom = 0.0;
        for (int a = 0; a < b; ++a)
            if (a != i) denom += std::exp(sim[static_cast<std::size_t>(i) * b + a] / ti - mx);
        lse[i] = mx + std::log(denom);
        double term = 0.0;
        for (int a = 0; a < b; ++a)
            if (a != i && labels[a] == labels[i])
                term += lse[i] - sim[static_cast<std::size_t>(i) * b + a] / ti;
        total += term / pos;
    }

    if (valid.empty()) {
        if (degenerate) *degenerate = true;
        return TensorT<S>::scalar(S(0));
    }
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(total / valid.size()));
    check_finite(out, "supcon_loss");

    if (want_tape(tape, {normed.requires_grad(), tau.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> nc = normed, tc = tau, oc = out;
        tape->record([nc, tc, oc, labels, sim = std::move(sim), lse = std::move(lse),
                      valid = std::move(valid), b, d]() mutable {
            if (!oc.has_grad()) return;
            const double g = static_cast<double>(oc.grad()[0]) / valid.size();
            std::vector<double> gn(static_cast<std::size_t>(b) * d, 0.0);
            std::vector<double> gt(b, 0.0);
            for (int i : valid) {
                const double ti = static_cast<double>(tc.data()[i]);
                int pos = 0;
                for (int a = 0; a < b; ++a)
                    if (a != i && labels[a] == labels[i]) ++pos;
                double wsum_s = 0.0;  // sum_a w_ia * s_ia
                double psum_s = 0.0;  // sum_{p in P(i)} s_ip
                for (int a = 0; a < b; ++a) {
                    if (a == i) continue;
                    const double s = sim[static_cast<std::size_t>(i) * b + a];
                    const double w = std::exp(s / ti - lse[i]);
                    const bool is_pos = labels[a] == labels[i];
                    wsum_s += w * s;
                    if (is_pos) psum_s += s;
                    // d(term_i)/d(s_ia), then fan out to both normalized rows
                    const double gs = g * (w / ti - (is_pos ? 1.0 / (pos * ti) : 0.0));
                    if (gs == 0.0) continue;
                    const S* ni = nc.data() + static_cast<std::size_t>(i) * d;
                    const S* na = nc.data() + static_cast<std::size_t>(a) * d;
                    double* gni = gn.data() + static_cast<std::size_t>(i) * d;
                    double* gna = gn.data() + static_cast<std::size_t>(a) * d;
                    for (int j = 0; j < d; ++j) {
                        gni[j] += gs * na[j];
                        gna[j] += gs * ni[j];
                    }
                }
                gt[i] += g * (-wsum_s / (ti * ti) + psum_s / (ti * ti * pos));
            }
            if (nc.requires_grad()) {
                S* dst = nc.grad().data();
                for (std::size_t k = 0; k < gn.size(); ++k) dst[k] += static_cast<S>(gn[k]);
            }
            if (tc.requires_grad()) {
                S* dst = tc.grad().data();
                for (int i = 0; i < b; ++i) dst[i] += static_cast<S>(gt[i]);
            }
        });
    }
    return out;
}

// tau_i = tau_base * (1 + beta * sigmoid(u_i)), elementwise over the score
// vector coming out of the difficulty net. The sigmoid output is clamped to
// [1e-4, 1 - 1e-4] before use: the temperature contract is the open interval
// (tau_base, tau_base*(1+beta)) and a saturated sigmoid would otherwise land
// exactly on a bound in floating point.
template <class S>
TensorT<S> adaptive_tau(const TensorT<S>& u, double tau_base, double beta, TapeT<std::type_identity_t<S>>* tape) {
    constexpr double kSigmaClamp = 1e-4;
    const int n = static_cast<int>(u.size());
    TensorT<S> out = TensorT<S>::zeros({n});
    std::vector<double> sig(n);
    std::vector<std::uint8_t> clamped(n);
    for (int i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-static_cast<double>(u.data()[i])));
        clamped[i] = (s < kSigmaClamp || s > 1.0 - kSigmaClamp) ? 1 : 0;
        s = std::clamp(s, kSigmaClamp, 1.0 - kSigmaClamp);
        sig[i] = s;
        out.data()[i] = static_cast<S>(tau_base * (1.0 + beta * s));
    }
    check_finite(out, "adaptive_tau");
    if (want_tape(tape, {u.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> uc = u, oc = out;
        tape->record([uc, oc, sig = std::move(sig), clamped = std::move(clamped), tau_base, beta,
                      n]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gu = uc.grad().data();
            for (int i = 0; i < n; ++i) {
                if (clamped[i]) continue;
                gu[i] += static_cast<S>(static_cast<double>(g[i]) * tau_base * beta * sig[i] *
                                        (1.0 - sig[i]));
            }
        });
    }
    return out;
}

} // namespace ops

// lambda(t) = lambda_max * min(1, t / t_ramp), t in (possibly fractional) epochs
inline double schedule_lambda(double t, double lambda_max = kLambdaMax,
                              double t_ramp = kRampEpochs) {
    if (t < 0.0) throw ConfigError("schedule_lambda: negative epoch");
    return lambda_max * std::min(1.0, t / t_ramp);
}

// Two-layer projection into the contrastive space. No normalization here;
// cosine similarity normalizes downstream.
template <class S>
class ProjectionHeadT {
public:
    ProjectionHeadT(int dim, int hidden, int out_dim, RngStream& init) {
        const double sd = 0.02;
        w1 = TensorT<S>::randn({hidden, dim}, init, sd);
        b1 = TensorT<S>::zeros({hidden});
        w2 = TensorT<S>::randn({out_dim, hidden}, init, sd);
        b2 = TensorT<S>::zeros({out_dim});
    }

    TensorT<S> project(const TensorT<S>& z, TapeT<std::type_identity_t<S>>* tape) const {
        return ops::linear(ops::gelu(ops::linear(z, w1, b1, tape), tape), w2, b2, tape);
    }

    void visit(const std::function<void(const std::string&, TensorT<S>&)>& fn) {
        fn("proj.w1", w1);
        fn("proj.b1", b1);
        fn("proj.w2", w2);
        fn("proj.b2", b2);
    }

    TensorT<S> w1, b1, w2, b2;
};

// Learnable affine map d -> 1 whose logistic squash drives the per-anchor
// temperature through adaptive_tau.
template <class S>
class SigmaNetT {
public:
    SigmaNetT(int dim, RngStream& init) {
        a = TensorT<S>::randn({1, dim}, init, 0.02);
        b = TensorT<S>::zeros({1});
    }

    // per-row temperatures, shape [B, 1], each in (tau_base, tau_base*(1+beta))
    TensorT<S> temperatures(const TensorT<S>& z, double tau_base, double beta,
                            TapeT<std::type_identity_t<S>>* tape) const {
        return ops::adaptive_tau(ops::linear(z, a, b, tape), tau_base, beta, tape);
    }

    void visit(const std::function<void(const std::string&, TensorT<S>&)>& fn) {
        fn("signet.a", a);
        fn("signet.b", b);
    }

    TensorT<S> a, b;
};

} // namespace larc
