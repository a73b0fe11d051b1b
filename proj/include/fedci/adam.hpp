#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fedci/param_store.hpp"

namespace fedci {

// Adam with bias correction (Kingma & Ba defaults except lr, which comes from
// the experiment config). Moments are kept per parameter in store order.
template <class R>
struct AdamState {
    R lr = R(1e-3);
    R beta1 = R(0.9);
    R beta2 = R(0.999);
    R eps = R(1e-8);
    int64_t t = 0;
    std::vector<Tensor<R>> m, v;

    void init(const ParamStore<R>& params) {
        m.clear();
        v.clear();
        for (size_t i = 0; i < params.size(); ++i) {
            m.push_back(Tensor<R>::zeros(params.var(i).dims()));
            v.push_back(Tensor<R>::zeros(params.var(i).dims()));
        }
        t = 0;
    }
};

template <class R>
void adam_step(ParamStore<R>& params, AdamState<R>& state) {
    if (state.lr <= R(0)) throw ConfigError("adam: lr must be > 0");
    if (state.m.size() != params.size()) throw ConfigError("adam: state not initialized for these params");
    const auto& bk = kernels::backend<R>();

    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor<R>& g = params.var(i).grad();
        if (!std::isfinite(static_cast<double>(bk.sum(g.ptr(), g.numel()))))
            throw NumericError("non-finite gradient for parameter " + params.name(i));
    }

    state.t += 1;
    const R bc1 = R(1) / (R(1) - static_cast<R>(std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t))));
    const R bc2 = R(1) / (R(1) - static_cast<R>(std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t))));

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<R>& p = params.var(i).value();
        const Tensor<R>& g = params.var(i).grad();
        if (p.dims != state.m[i].dims)
            throw ShapeError("adam: parameter " + params.name(i) + " changed shape");
        bk.adam_update(p.ptr(), g.ptr(), state.m[i].ptr(), state.v[i].ptr(), p.numel(),
                       state.lr, state.beta1, state.beta2, state.eps, bc1, bc2);
    }
}

}  // namespace fedci
