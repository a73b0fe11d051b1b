#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fedci/param_store.hpp"

namespace fedci {

// Central-difference gradient oracle. `f` must rebuild the forward pass from
// scratch on every call (it sees parameter perturbations through the store)
// and must be deterministic: run it with dropout off.
//
// Checks every element up to `max_elems` in total; above that a seeded random
// subsample of ~max_elems elements is used. Returns the max relative error
// |analytic - numeric| / max(|analytic|, |numeric|, 1).
template <class R>
double grad_check(const std::function<Var<R>(Tape<R>*)>& f, ParamStore<R>& params,
                  double step = 1e-5, int64_t max_elems = 10000, uint64_t seed = 42) {
    params.zero_grad();
    Tape<R> tape;
    Var<R> out = f(&tape);
    tape.backward(out);

    std::vector<std::vector<R>> analytic;
    int64_t total = 0;
    for (size_t i = 0; i < params.size(); ++i) {
        analytic.push_back(params.var(i).grad().data);
        total += params.var(i).value().numel();
    }

    const bool subsample = total > max_elems;
    const double keep = subsample ? static_cast<double>(max_elems) / static_cast<double>(total) : 1.0;
    Rng rng(seed);

    double max_rel = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        auto& data = params.var(i).value().data;
        for (size_t j = 0; j < data.size(); ++j) {
            if (subsample && rng.uniform() >= keep) continue;
            const R orig = data[j];
            data[j] = orig + static_cast<R>(step);
            const double fp = static_cast<double>(f(nullptr).value().data[0]);
            data[j] = orig - static_cast<R>(step);
            const double fm = static_cast<double>(f(nullptr).value().data[0]);
            data[j] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = static_cast<double>(analytic[i][j]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace fedci
