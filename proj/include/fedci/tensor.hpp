#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "fedci/errors.hpp"

namespace fedci {

// Up to 4 extents, row-major. Extents beyond ndim are kept at 1 so strides
// can be computed without branching.
struct Shape {
    std::array<int64_t, 4> ext{1, 1, 1, 1};
    int ndim = 0;

    Shape() = default;
    Shape(std::initializer_list<int64_t> dims) {
        if (dims.size() > 4) throw ShapeError("tensor rank > 4");
        for (int64_t d : dims) {
            if (d < 1) throw ShapeError("extent must be >= 1, got " + std::to_string(d));
            ext[ndim++] = d;
        }
    }

    int64_t operator[](int i) const { return ext[static_cast<size_t>(i)]; }
    int64_t numel() const {
        int64_t n = 1;
        for (int i = 0; i < ndim; ++i) n *= ext[static_cast<size_t>(i)];
        return n;
    }
    int64_t last() const { return ndim == 0 ? 1 : ext[static_cast<size_t>(ndim - 1)]; }

    bool operator==(const Shape& o) const {
        if (ndim != o.ndim) return false;
        for (int i = 0; i < ndim; ++i) if (ext[static_cast<size_t>(i)] != o.ext[static_cast<size_t>(i)]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        if (ndim == 0) return "scalar";
        std::string s;
        for (int i = 0; i < ndim; ++i) {
            if (i) s += 'x';
            s += std::to_string(ext[static_cast<size_t>(i)]);
        }
        return s;
    }
};

// Training allocates and frees MB-sized activation tensors every step. With
// glibc defaults those land in mmap/munmap and the page faults dominate the
// math; raising the mmap threshold keeps them on the reusable heap free-list.
// Idempotent, safe to call from any entry point.
void tune_allocator_for_tensors();

template <class R>
struct Tensor {
    Shape dims;
    std::vector<R> data;

    Tensor() = default;
    explicit Tensor(Shape s) : dims(s), data(static_cast<size_t>(s.numel()), R(0)) {}
    Tensor(Shape s, std::vector<R> values) : dims(s), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != dims.numel())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + dims.str());
    }

    static Tensor zeros(Shape s) { return Tensor(s); }
    static Tensor full(Shape s, R v) {
        Tensor t(s);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    int64_t numel() const { return dims.numel(); }
    R* ptr() { return data.data(); }
    const R* ptr() const { return data.data(); }

    R& at(std::initializer_list<int64_t> idx) {
        return data[static_cast<size_t>(flat(idx))];
    }
    R at(std::initializer_list<int64_t> idx) const {
        return data[static_cast<size_t>(flat(idx))];
    }

    int64_t flat(std::initializer_list<int64_t> idx) const {
        int64_t off = 0;
        int i = 0;
        for (int64_t v : idx) {
            off = off * dims.ext[static_cast<size_t>(i)] + v;
            ++i;
        }
        return off;
    }

    template <class R2>
    Tensor<R2> cast() const {
        Tensor<R2> out;
        out.dims = dims;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<R2>(data[i]);
        return out;
    }
};

// Integer index tensor (time-of-day, day-of-week, node slots).
struct ITensor {
    Shape dims;
    std::vector<int64_t> data;

    ITensor() = default;
    explicit ITensor(Shape s) : dims(s), data(static_cast<size_t>(s.numel()), 0) {}
    ITensor(Shape s, std::vector<int64_t> values) : dims(s), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != dims.numel())
            throw ShapeError("index data length does not match shape " + dims.str());
    }
    int64_t numel() const { return dims.numel(); }
};

}  // namespace fedci
