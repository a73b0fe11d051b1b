#pragma once

#include <string>
#include <vector>

#include "fedci/param_store.hpp"

namespace fedci {

// Detached named tensors: what travels between client and server.
template <class R>
struct NamedTensor {
    std::string name;
    Shape dims;
    std::vector<R> data;
};

template <class R>
using ParamSet = std::vector<NamedTensor<R>>;

// Snapshot in store order, minus excluded names (the personalized bias stays
// home; see serialize_params for the wire-level guard).
template <class R>
ParamSet<R> to_param_set(const ParamStore<R>& store, const std::vector<std::string>& exclude = {}) {
    ParamSet<R> out;
    for (size_t i = 0; i < store.size(); ++i) {
        bool skip = false;
        for (const auto& e : exclude)
            if (store.name(i) == e) skip = true;
        if (skip) continue;
        const auto& v = store.var(i).value();
        out.push_back(NamedTensor<R>{store.name(i), v.dims, v.data});
    }
    return out;
}

// Overwrites matching parameters; everything absent from `ps` (the
// personalized bias) keeps its current value.
template <class R>
void load_param_set(ParamStore<R>& store, const ParamSet<R>& ps) {
    for (const auto& t : ps) {
        if (!store.has(t.name)) throw ProtocolError("received unknown parameter '" + t.name + "'");
        auto& var = store.get(t.name);
        if (var.dims() != t.dims)
            throw ProtocolError("parameter '" + t.name + "' has shape " + t.dims.str() +
                                ", expected " + var.dims().str());
        var.value().data = t.data;
    }
}

template <class R>
int64_t param_set_elements(const ParamSet<R>& ps) {
    int64_t n = 0;
    for (const auto& t : ps) n += t.dims.numel();
    return n;
}

}  // namespace fedci
