#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "larc/common.hpp"
#include "larc/rng.hpp"
#include "larc/tensor.hpp"

// Differentiable op set. Each op validates shapes, computes the forward
// result, and (when a tape is supplied and some input requires grad) records
// one closure that pushes the output adjoint back to its inputs. Reductions
// accumulate in double regardless of the storage scalar; the big GEMM-like
// kernels accumulate in S so the float instantiation stays fast.

namespace larc {
namespace ops {

inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}

template <class S>
void check_finite(const TensorT<S>& t, const char* op) {
    if (!finite_checks()) return;
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value produced");
}

inline bool want_tape(const void* tape, std::initializer_list<bool> reqs) {
    if (!tape) return false;
    for (bool r : reqs)
        if (r) return true;
    return false;
}

// ---------------------------------------------------------------- matmul

// a[m,k] * b[k,n] -> [m,n]; backward a.grad += g*b^T, b.grad += a^T*g
template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b, TapeT<std::type_identity_t<S>>* tape) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<S> out = TensorT<S>::zeros({m, n});
    const S* ap = a.data();
    const S* bp = b.data();
    S* op = out.data();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const S av = ap[i * k + kk];
            const S* brow = bp + kk * n;
            S* orow = op + i * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    check_finite(out, "matmul");
    if (want_tape(tape, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, m, k, n]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            if (ac.requires_grad()) {
                S* ga = ac.grad().data();
                const S* bp2 = bc.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        S acc = 0;
                        const S* grow = g + i * n;
                        const S* brow = bp2 + kk * n;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
            }
            if (bc.requires_grad()) {
                S* gb = bc.grad().data();
                const S* ap2 = ac.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const S av = ap2[i * k + kk];
                        const S* grow = g + i * n;
                        S* gbrow = gb + kk * n;
                        for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
            }
        });
    }
    return out;
}

// x[n,in] * w[out,in]^T + b[out] -> [n,out]. The standard affine layer; one
// tape node instead of three.
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b, TapeT<std::type_identity_t<S>>* tape) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw ShapeError("linear: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0)))
        throw ShapeError("linear: bias shape " + shape_str(b.shape()));
    const int n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    TensorT<S> out = TensorT<S>::zeros({n, out_dim});
    const S* xp = x.data();
    const S* wp = w.data();
    const S* bp = b.defined() ? b.data() : nullptr;
    S* op = out.data();
    for (int i = 0; i < n; ++i) {
        const S* xrow = xp + i * in;
        S* orow = op + i * out_dim;
        for (int o = 0; o < out_dim; ++o) {
            const S* wrow = wp + o * in;
            S acc = 0;
            for (int j = 0; j < in; ++j) acc += xrow[j] * wrow[j];
            orow[o] = acc + (bp ? bp[o] : S(0));
        }
    }
    check_finite(out, "linear");
    const bool breq = b.defined() && b.requires_grad();
    if (want_tape(tape, {x.requires_grad(), w.requires_grad(), breq})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, wc = w, bc = b, oc = out;
        tape->record([xc, wc, bc, oc, n, in, out_dim]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            if (xc.requires_grad()) {
                S* gx = xc.grad().data();
                const S* wp2 = wc.data();
                for (int i = 0; i < n; ++i) {
                    const S* grow = g + i * out_dim;
                    S* gxrow = gx + i * in;
                    for (int o = 0; o < out_dim; ++o) {
                        const S gv = grow[o];
                        if (gv == S(0)) continue;
                        const S* wrow = wp2 + o * in;
                        for (int j = 0; j < in; ++j) gxrow[j] += gv * wrow[j];
                    }
                }
            }
            if (wc.requires_grad()) {
                S* gw = wc.grad().data();
                const S* xp2 = xc.data();
                for (int i = 0; i < n; ++i) {
                    const S* grow = g + i * out_dim;
                    const S* xrow = xp2 + i * in;
                    for (int o = 0; o < out_dim; ++o) {
                        const S gv = grow[o];
                        if (gv == S(0)) continue;
                        S* gwrow = gw + o * in;
                        for (int j = 0; j < in; ++j) gwrow[j] += gv * xrow[j];
                    }
                }
            }
            if (bc.defined() && bc.requires_grad()) {
                S* gb = bc.grad().data();
                for (int i = 0; i < n; ++i) {
                    const S* grow = g + i * out_dim;
                    for (int o = 0; o < out_dim; ++o) gb[o] += grow[o];
                }
            }
        });
    }
    return out;
}

// ------------------------------------------------------------- elementwise

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b, TapeT<std::type_identity_t<S>>* tape) {
    if (a.shape() != b.shape())
        throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    TensorT<S> out = TensorT<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    check_finite(out, "add");
    if (want_tape(tape, {a.requires_grad(), b.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            if (ac.requires_grad()) {
                S* ga = ac.grad().data();
                for (std::size_t i = 0; i < ac.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                S* gb = bc.grad().data();
                for (std::size_t i = 0; i < bc.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

// y = x*mul + shift, elementwise with scalar constants
template <class S>
TensorT<S> affine_const(const TensorT<S>& x, S mul, S shift, TapeT<std::type_identity_t<S>>* tape) {
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] * mul + shift;
    check_finite(out, "affine_const");
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc, mul]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gx = xc.grad().data();
            for (std::size_t i = 0; i < xc.size(); ++i) gx[i] += g[i] * mul;
        });
    }
    return out;
}

// x * phi(x), erf-exact form
template <class S>
TensorT<S> gelu(const TensorT<S>& x, TapeT<std::type_identity_t<S>>* tape) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x.data()[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        out.data()[i] = static_cast<S>(v * cdf);
    }
    check_finite(out, "gelu");
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gx = xc.grad().data();
            for (std::size_t i = 0; i < xc.size(); ++i) {
                const double v = static_cast<double>(xc.data()[i]);
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                gx[i] += g[i] * static_cast<S>(cdf + v * pdf);
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> tanh_act(const TensorT<S>& x, TapeT<std::type_identity_t<S>>* tape) {
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        out.data()[i] = static_cast<S>(std::tanh(static_cast<double>(x.data()[i])));
    check_finite(out, "tanh");
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gx = xc.grad().data();
            for (std::size_t i = 0; i < xc.size(); ++i) {
                const S y = oc.data()[i];
                gx[i] += g[i] * (S(1) - y * y);
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x, TapeT<std::type_identity_t<S>>* tape) {
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x.data()[i]);
        out.data()[i] = static_cast<S>(1.0 / (1.0 + std::exp(-v)));
    }
    check_finite(out, "sigmoid");
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gx = xc.grad().data();
            for (std::size_t i = 0; i < xc.size(); ++i) {
                const S y = oc.data()[i];
                gx[i] += g[i] * y * (S(1) - y);
            }
        });
    }
    return out;
}

// Scalar projection sum_i x_i * coeff_i against fixed coefficients; the
// scalarizer the finite-difference property tests drive ops through.
template <class S>
TensorT<S> weighted_sum(const TensorT<S>& x, const std::vector<S>& coeffs, TapeT<std::type_identity_t<S>>* tape) {
    if (coeffs.size() != x.size()) throw ShapeError("weighted_sum: coefficient count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        acc += static_cast<double>(x.data()[i]) * static_cast<double>(coeffs[i]);
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(acc));
    check_finite(out, "weighted_sum");
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc, coeffs]() mutable {
            if (!oc.has_grad()) return;
            const S g = oc.grad()[0];
            S* gx = xc.grad().data();
            for (std::size_t i = 0; i < xc.size(); ++i) gx[i] += g * coeffs[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------- softmax

// softmax over the last dimension (rank 1 or 2), max-subtracted
template <class S>
TensorT<S> softmax_rows(const TensorT<S>& x, TapeT<std::type_identity_t<S>>* tape) {
    if (x.rank() < 1 || x.rank() > 2) throw ShapeError("softmax: rank must be 1 or 2");
    const int n = x.rank() == 2 ? x.dim(0) : 1;
    const int d = x.rank() == 2 ? x.dim(1) : x.dim(0);
    if (d < 1) throw ShapeError("softmax: empty row");
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    for (int r = 0; r < n; ++r) {
        const S* xr = x.data() + static_cast<std::size_t>(r) * d;
        S* orow = out.data() + static_cast<std::size_t>(r) * d;
        S mx = xr[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
        double denom = 0.0;
        for (int j = 0; j < d; ++j) {
            const double e = std::exp(static_cast<double>(xr[j] - mx));
            orow[j] = static_cast<S>(e);
            denom += e;
        }
        for (int j = 0; j < d; ++j) orow[j] = static_cast<S>(static_cast<double>(orow[j]) / denom);
    }
    check_finite(out, "softmax");
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc, n, d]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gx = xc.grad().data();
            for (int r = 0; r < n; ++r) {
                const S* p = oc.data() + static_cast<std::size_t>(r) * d;
                const S* gr = g + static_cast<std::size_t>(r) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += static_cast<double>(gr[j]) * p[j];
                S* gxr = gx + static_cast<std::size_t>(r) * d;
                for (int j = 0; j < d; ++j)
                    gxr[j] += p[j] * static_cast<S>(static_cast<double>(gr[j]) - dot);
            }
        });
    }
    return out;
}

// ------------------------------------------------------------- layer norm

inline constexpr double kLayerNormEps = 1e-5;

// Per-row normalization over the last dimension with learnable gain/bias.
// Population (biased) variance, eps = 1e-5.
template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain, const TensorT<S>& bias,
                      TapeT<std::type_identity_t<S>>* tape) {
    if (x.rank() < 1 || x.rank() > 2) throw ShapeError("layer_norm: rank must be 1 or 2");
    const int n = x.rank() == 2 ? x.dim(0) : 1;
    const int d = x.rank() == 2 ? x.dim(1) : x.dim(0);
    if (d < 2) throw ShapeError("layer_norm: needs at least 2 features");
    if (gain.size() != static_cast<std::size_t>(d) || bias.size() != static_cast<std::size_t>(d))
        throw ShapeError("layer_norm: gain/bias must have dim " + std::to_string(d));

    TensorT<S> out = TensorT<S>::zeros(x.shape());
    std::vector<S> xhat(x.size());
    std::vector<S> inv_std(n);
    for (int r = 0; r < n; ++r) {
        const S* xr = x.data() + static_cast<std::size_t>(r) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        var /= d;
        const double istd = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[r] = static_cast<S>(istd);
        S* orow = out.data() + static_cast<std::size_t>(r) * d;
        S* xh = xhat.data() + static_cast<std::size_t>(r) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = static_cast<S>((xr[j] - mean) * istd);
            orow[j] = xh[j] * gain.data()[j] + bias.data()[j];
        }
    }
    check_finite(out, "layer_norm");
    if (want_tape(tape, {x.requires_grad(), gain.requires_grad(), bias.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, gc = gain, bc = bias, oc = out;
        tape->record([xc, gc, bc, oc, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
                      d]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            for (int r = 0; r < n; ++r) {
                const S* gr = g + static_cast<std::size_t>(r) * d;
                const S* xh = xhat.data() + static_cast<std::size_t>(r) * d;
                if (gc.requires_grad()) {
                    S* gg = gc.grad().data();
                    for (int j = 0; j < d; ++j) gg[j] += gr[j] * xh[j];
                }
                if (bc.requires_grad()) {
                    S* gb = bc.grad().data();
                    for (int j = 0; j < d; ++j) gb[j] += gr[j];
                }
                if (xc.requires_grad()) {
                    double mean_gh = 0.0, mean_ghx = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double gh = static_cast<double>(gr[j]) * gc.data()[j];
                        mean_gh += gh;
                        mean_ghx += gh * xh[j];
                    }
                    mean_gh /= d;
                    mean_ghx /= d;
                    S* gx = xc.grad().data() + static_cast<std::size_t>(r) * d;
                    for (int j = 0; j < d; ++j) {
                        const double gh = static_cast<double>(gr[j]) * gc.data()[j];
                        gx[j] += static_cast<S>((gh - mean_gh - xh[j] * mean_ghx) * inv_std[r]);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------- dropout

// Inverted dropout: survivors scaled by 1/(1-rate) at training time so that
// evaluation is the exact identity (the input handle is returned untouched).
template <class S>
TensorT<S> dropout(const TensorT<S>& x, double rate, bool training, RngStream& rng,
                   TapeT<std::type_identity_t<S>>* tape) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
    if (!training || rate == 0.0) return x;
    const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
    TensorT<S> out = TensorT<S>::zeros(x.shape());
    std::vector<S> mask(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = rng.u01() < rate ? S(0) : keep_scale;
        out.data()[i] = x.data()[i] * mask[i];
    }
    check_finite(out, "dropout");
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc, mask = std::move(mask)]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gx = xc.grad().data();
            for (std::size_t i = 0; i < xc.size(); ++i) gx[i] += g[i] * mask[i];
        });
    }
    return out;
}

// ------------------------------------------------------------ row lookups

// table[v,d] row lookup -> [ids.size(), d]; backward scatter-adds into table
template <class S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int>& ids, TapeT<std::type_identity_t<S>>* tape) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v) throw DataError("embedding: id " + std::to_string(id) + " out of range");
    TensorT<S> out = TensorT<S>::zeros({static_cast<int>(ids.size()), d});
    for (std::size_t r = 0; r < ids.size(); ++r)
        std::copy_n(table.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
    if (want_tape(tape, {table.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> tc = table, oc = out;
        tape->record([tc, oc, ids, d]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gt = tc.grad().data();
            for (std::size_t r = 0; r < ids.size(); ++r) {
                S* trow = gt + static_cast<std::size_t>(ids[r]) * d;
                const S* grow = g + r * d;
                for (int j = 0; j < d; ++j) trow[j] += grow[j];
            }
        });
    }
    return out;
}

// activation row gather, same backward structure as embedding
template <class S>
TensorT<S> gather_rows(const TensorT<S>& x, const std::vector<int>& rows, TapeT<std::type_identity_t<S>>* tape) {
    if (x.rank() != 2) throw ShapeError("gather_rows: input must be rank 2");
    const int n = x.dim(0), d = x.dim(1);
    for (int r : rows)
        if (r < 0 || r >= n) throw ShapeError("gather_rows: row out of range");
    TensorT<S> out = TensorT<S>::zeros({static_cast<int>(rows.size()), d});
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(x.data() + static_cast<std::size_t>(rows[r]) * d, d, out.data() + r * d);
    if (want_tape(tape, {x.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> xc = x, oc = out;
        tape->record([xc, oc, rows, d]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gx = xc.grad().data();
            for (std::size_t r = 0; r < rows.size(); ++r) {
                S* xrow = gx + static_cast<std::size_t>(rows[r]) * d;
                const S* grow = g + r * d;
                for (int j = 0; j < d; ++j) xrow[j] += grow[j];
            }
        });
    }
    return out;
}

// -------------------------------------------------------------- attention

// Multi-head scaled dot-product attention over already-projected q/k/v of
// shape [batch*seq, dim]. key_mask[b*seq+t] == 0 excludes position t of item
// b as a key; masked keys are skipped outright, so a padded batch computes
// the exact same float ops as a physically shorter one.
template <class S>
TensorT<S> attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                     const std::vector<std::uint8_t>& key_mask, int batch, int seq, int heads,
                     TapeT<std::type_identity_t<S>>* tape, std::vector<S>* probs_out = nullptr) {
    if (q.shape() != k.shape() || q.shape() != v.shape() || q.rank() != 2)
        throw ShapeError("attention: q/k/v shapes must match");
    const int dim = q.dim(1);
    if (q.dim(0) != batch * seq || dim % heads != 0)
        throw ShapeError("attention: bad batch/seq/heads layout");
    if (key_mask.size() != static_cast<std::size_t>(batch * seq))
        throw ShapeError("attention: mask size mismatch");
    const int hd = dim / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

    TensorT<S> out = TensorT<S>::zeros(q.shape());
    // probs stored per (b, h): seq x seq, masked columns zero
    std::vector<S> probs(static_cast<std::size_t>(batch) * heads * seq * seq, S(0));

    for (int b = 0; b < batch; ++b) {
        const int row0 = b * seq;
        for (int h = 0; h < heads; ++h) {
            const int col0 = h * hd;
            S* pmat = probs.data() + (static_cast<std::size_t>(b) * heads + h) * seq * seq;
            for (int t1 = 0; t1 < seq; ++t1) {
                const S* qrow = q.data() + static_cast<std::size_t>(row0 + t1) * dim + col0;
                S* prow = pmat + static_cast<std::size_t>(t1) * seq;
                S mx = std::numeric_limits<S>::lowest();
                for (int t2 = 0; t2 < seq; ++t2) {
                    if (!key_mask[row0 + t2]) continue;
                    const S* krow = k.data() + static_cast<std::size_t>(row0 + t2) * dim + col0;
                    S acc = 0;
                    for (int j = 0; j < hd; ++j) acc += qrow[j] * krow[j];
                    prow[t2] = acc * scale;
                    mx = std::max(mx, prow[t2]);
                }
                double denom = 0.0;
                for (int t2 = 0; t2 < seq; ++t2) {
                    if (!key_mask[row0 + t2]) continue;
                    const double e = std::exp(static_cast<double>(prow[t2] - mx));
                    prow[t2] = static_cast<S>(e);
                    denom += e;
                }
                S* orow = out.data() + static_cast<std::size_t>(row0 + t1) * dim + col0;
                for (int t2 = 0; t2 < seq; ++t2) {
                    if (!key_mask[row0 + t2]) {
                        prow[t2] = S(0);
                        continue;
                    }
                    prow[t2] = static_cast<S>(static_cast<double>(prow[t2]) / denom);
                    const S* vrow = v.data() + static_cast<std::size_t>(row0 + t2) * dim + col0;
                    const S p = prow[t2];
                    for (int j = 0; j < hd; ++j) orow[j] += p * vrow[j];
                }
            }
        }
    }
    check_finite(out, "attention");
    if (probs_out) *probs_out = probs;

    if (want_tape(tape, {q.requires_grad(), k.requires_grad(), v.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> qc = q, kc = k, vc = v, oc = out;
        tape->record([qc, kc, vc, oc, probs = std::move(probs), key_mask, batch, seq, heads, hd,
                      dim, scale]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            S* gq = qc.requires_grad() ? qc.grad().data() : nullptr;
            S* gk = kc.requires_grad() ? kc.grad().data() : nullptr;
            S* gv = vc.requires_grad() ? vc.grad().data() : nullptr;
            std::vector<S> dp(static_cast<std::size_t>(seq), S(0));
            for (int b = 0; b < batch; ++b) {
                const int row0 = b * seq;
                for (int h = 0; h < heads; ++h) {
                    const int col0 = h * hd;
                    const S* pmat = probs.data() + (static_cast<std::size_t>(b) * heads + h) * seq * seq;
                    for (int t1 = 0; t1 < seq; ++t1) {
                        const S* prow = pmat + static_cast<std::size_t>(t1) * seq;
                        const S* grow = g + static_cast<std::size_t>(row0 + t1) * dim + col0;
                        // dP and the softmax backward dot product
                        double gp_dot = 0.0;
                        for (int t2 = 0; t2 < seq; ++t2) {
                            if (!key_mask[row0 + t2]) continue;
                            const S* vrow = vc.data() + static_cast<std::size_t>(row0 + t2) * dim + col0;
                            S acc = 0;
                            for (int j = 0; j < hd; ++j) acc += grow[j] * vrow[j];
                            dp[t2] = acc;
                            gp_dot += static_cast<double>(acc) * prow[t2];
                            if (gv) {
                                S* gvrow = gv + static_cast<std::size_t>(row0 + t2) * dim + col0;
                                const S p = prow[t2];
                                for (int j = 0; j < hd; ++j) gvrow[j] += p * grow[j];
                            }
                        }
                        if (!gq && !gk) continue;
                        const S* qrow = qc.data() + static_cast<std::size_t>(row0 + t1) * dim + col0;
                        S* gqrow = gq ? gq + static_cast<std::size_t>(row0 + t1) * dim + col0 : nullptr;
                        for (int t2 = 0; t2 < seq; ++t2) {
                            if (!key_mask[row0 + t2]) continue;
                            const S ds = prow[t2] * static_cast<S>(static_cast<double>(dp[t2]) - gp_dot) * scale;
                            if (ds == S(0)) continue;
                            const S* krow = kc.data() + static_cast<std::size_t>(row0 + t2) * dim + col0;
                            if (gqrow)
                                for (int j = 0; j < hd; ++j) gqrow[j] += ds * krow[j];
                            if (gk) {
                                S* gkrow = gk + static_cast<std::size_t>(row0 + t2) * dim + col0;
                                for (int j = 0; j < hd; ++j) gkrow[j] += ds * qrow[j];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ------------------------------------------------------- layer fusion sum

// out = sum_l alpha[l] * layers[l]; layers all share a shape, alpha is rank 1
template <class S>
TensorT<S> weighted_layer_sum(const std::vector<TensorT<S>>& layers, const TensorT<S>& alpha,
                              TapeT<std::type_identity_t<S>>* tape) {
    if (layers.empty()) throw ShapeError("weighted_layer_sum: no layers");
    if (alpha.rank() != 1 || alpha.size() != layers.size())
        throw ShapeError("weighted_layer_sum: alpha length " + std::to_string(alpha.size()) +
                         " vs " + std::to_string(layers.size()) + " layers");
    const Shape& sh = layers[0].shape();
    for (const auto& l : layers)
        if (l.shape() != sh) throw ShapeError("weighted_layer_sum: layer shape mismatch");

    TensorT<S> out = TensorT<S>::zeros(sh);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const S a = alpha.data()[l];
        const S* xp = layers[l].data();
        S* op = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) op[i] += a * xp[i];
    }
    check_finite(out, "weighted_layer_sum");

    bool any = alpha.requires_grad();
    for (const auto& l : layers) any = any || l.requires_grad();
    if (tape && any) {
        out.set_requires_grad(true);
        TensorT<S> ac = alpha, oc = out;
        std::vector<TensorT<S>> lc = layers;
        tape->record([lc, ac, oc]() mutable {
            if (!oc.has_grad()) return;
            const S* g = oc.grad().data();
            for (std::size_t l = 0; l < lc.size(); ++l) {
                if (ac.requires_grad()) {
                    double acc = 0.0;
                    const S* xp = lc[l].data();
                    for (std::size_t i = 0; i < oc.size(); ++i)
                        acc += static_cast<double>(g[i]) * xp[i];
                    ac.grad()[l] += static_cast<S>(acc);
                }
                if (lc[l].requires_grad()) {
                    const S a = ac.data()[l];
                    S* gx = lc[l].grad().data();
                    for (std::size_t i = 0; i < oc.size(); ++i) gx[i] += a * g[i];
                }
            }
        });
    }
    return out;
}

// ----------------------------------------------------------- cross entropy

// mean over the batch of -log softmax(logits)[class]; classes are 0-based
template <class S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int>& classes,
                         TapeT<std::type_identity_t<S>>* tape) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [batch, classes]");
    const int bsz = logits.dim(0), ncls = logits.dim(1);
    if (classes.size() != static_cast<std::size_t>(bsz))
        throw ShapeError("cross_entropy: label count mismatch");
    for (int c : classes)
        if (c < 0 || c >= ncls) throw DataError("cross_entropy: class out of range");

    std::vector<S> probs(logits.size());
    double total = 0.0;
    for (int i = 0; i < bsz; ++i) {
        const S* lrow = logits.data() + static_cast<std::size_t>(i) * ncls;
        S mx = lrow[0];
        for (int j = 1; j < ncls; ++j) mx = std::max(mx, lrow[j]);
        double denom = 0.0;
        for (int j = 0; j < ncls; ++j) denom += std::exp(static_cast<double>(lrow[j] - mx));
        const double lse = static_cast<double>(mx) + std::log(denom);
        S* prow = probs.data() + static_cast<std::size_t>(i) * ncls;
        for (int j = 0; j < ncls; ++j)
            prow[j] = static_cast<S>(std::exp(static_cast<double>(lrow[j]) - lse));
        total += lse - static_cast<double>(lrow[classes[i]]);
    }
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(total / bsz));
    check_finite(out, "cross_entropy");

    if (want_tape(tape, {logits.requires_grad()})) {
        out.set_requires_grad(true);
        TensorT<S> lc = logits, oc = out;
        tape->record([lc, oc, probs = std::move(probs), classes, bsz, ncls]() mutable {
            if (!oc.has_grad()) return;
            const S g = oc.grad()[0];
            S* gl = lc.grad().data();
            const S inv_b = static_cast<S>(1.0 / bsz);
            for (int i = 0; i < bsz; ++i) {
                const S* prow = probs.data() + static_cast<std::size_t>(i) * ncls;
                S* grow = gl + static_cast<std::size_t>(i) * ncls;
                for (int j = 0; j < ncls; ++j) {
                    S delta = prow[j];
                    if (j == classes[i]) delta -= S(1);
                    grow[j] += g * inv_b * delta;
                }
            }
        });
    }
    return out;
}

} // namespace ops
} // namespace larc
