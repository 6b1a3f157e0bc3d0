#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "larc/tensor.hpp"

// Central-difference gradient audit. The loss function must be a pure,
// re-runnable description of the computation: called with a tape it builds
// the graph for the analytic pass, called with nullptr it just evaluates.
// Anything stochastic inside (dropout) has to reseed itself per call so all
// evaluations see the same draws.

namespace larc {

template <class S>
struct GradAuditResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// rel_floor widens the relative-error denominator to rel_floor * (largest
// analytic gradient magnitude). Float-precision audits need it: a coordinate
// whose true gradient sits below the loss's rounding noise cannot be probed
// by central differences at all, and only its absolute error is meaningful.
// Double-precision audits should leave it at 0.
template <class S>
GradAuditResult<S> finite_diff_audit(const std::function<TensorT<S>(TapeT<S>*)>& loss_fn,
                                     std::vector<TensorT<S>> params, S h,
                                     double denom_floor = 1e-8, double rel_floor = 0.0) {
    GradAuditResult<S> res;

    // analytic gradients
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    TapeT<S> tape;
    TensorT<S> loss = loss_fn(&tape);
    tape.backward(loss);
    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    double grad_scale = 0.0;
    for (const auto& g : analytic)
        for (S v : g) grad_scale = std::max(grad_scale, std::fabs(static_cast<double>(v)));
    const double floor = std::max(denom_floor, rel_floor * grad_scale);

    // numeric gradients, one coordinate at a time
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const S orig = p.data()[i];
            p.data()[i] = orig + h;
            const S hi = p.data()[i];
            const double lp = static_cast<double>(loss_fn(nullptr).item());
            p.data()[i] = orig - h;
            const S lo = p.data()[i];
            const double lm = static_cast<double>(loss_fn(nullptr).item());
            p.data()[i] = orig;

            // use the realized step, not 2h: +/-h round through S
            const double numeric = (lp - lm) / static_cast<double>(hi - lo);
            const double a = static_cast<double>(analytic[pi][i]);
            const double denom = std::max({std::fabs(a), std::fabs(numeric), floor});
            const double rel = std::fabs(a - numeric) / denom;
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = pi;
                res.worst_index = i;
                res.worst_analytic = a;
                res.worst_numeric = numeric;
            }
        }
    }
    return res;
}

} // namespace larc
