#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "fedci/autograd.hpp"

namespace fedci {

// Ordered collection of named trainable tensors. Order is fixed at
// construction and defines the canonical serialization/aggregation order.
template <class R>
class ParamStore {
public:
    Var<R>& add(const std::string& name, Tensor<R> init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = names_.size();
        names_.push_back(name);
        vars_.emplace_back(std::move(init));
        return vars_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Var<R>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return vars_[it->second];
    }
    const Var<R>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return vars_[it->second];
    }

    size_t size() const { return vars_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Var<R>& var(size_t i) { return vars_[i]; }
    const Var<R>& var(size_t i) const { return vars_[i]; }

    void zero_grad() {
        for (auto& v : vars_) v.zero_grad();
    }

    // Total element count, optionally excluding some names (e.g. the
    // personalized bias, which never travels).
    int64_t element_count(const std::vector<std::string>& exclude = {}) const {
        int64_t n = 0;
        for (size_t i = 0; i < vars_.size(); ++i) {
            bool skip = false;
            for (const auto& e : exclude)
                if (names_[i] == e) skip = true;
            if (!skip) n += vars_[i].value().numel();
        }
        return n;
    }

private:
    std::vector<std::string> names_;
    std::vector<Var<R>> vars_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace fedci
