#include <cmath>

#include "fedci/kernels.hpp"

// Reference kernels. Plain loops, no reassociation tricks: these define the
// semantics the SIMD variants are tested against.

namespace fedci::kernels::scalar {

template <class R>
static void gemm_nn(int64_t m, int64_t k, int64_t n, const R* a, const R* b, R* c) {
    for (int64_t i = 0; i < m; ++i) {
        const R* ai = a + i * k;
        R* ci = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            R av = ai[p];
            const R* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <class R>
static void gemm_nt(int64_t m, int64_t k, int64_t n, const R* a, const R* b, R* c) {
    for (int64_t i = 0; i < m; ++i) {
        const R* ai = a + i * k;
        R* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const R* bj = b + j * k;
            R acc = R(0);
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

template <class R>
static void gemm_tn(int64_t m, int64_t k, int64_t n, const R* a, const R* b, R* c) {
    for (int64_t p = 0; p < k; ++p) {
        const R* ap = a + p * m;
        const R* bp = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            R av = ap[i];
            R* ci = c + i * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

template <class R>
static void relu_fwd(const R* x, R* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > R(0) ? x[i] : R(0);
}

template <class R>
static void relu_bwd(const R* x, const R* dy, R* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i)
        if (x[i] > R(0)) dx[i] += dy[i];
}

template <class R>
static void add(const R* x, R* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += x[i];
}

template <class R>
static void axpy(R a, const R* x, R* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class R>
static void mul_acc(const R* a, const R* b, R* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <class R>
static void col_sum_acc(const R* a, R* out, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) {
        const R* ai = a + i * cols;
        for (int64_t j = 0; j < cols; ++j) out[j] += ai[j];
    }
}

template <class R>
static R sum(const R* x, int64_t n) {
    R acc = R(0);
    for (int64_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <class R>
static R dot(const R* x, const R* y, int64_t n) {
    R acc = R(0);
    for (int64_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <class R>
static R sum_sq_dev(const R* x, R mean, int64_t n) {
    R acc = R(0);
    for (int64_t i = 0; i < n; ++i) {
        R d = x[i] - mean;
        acc += d * d;
    }
    return acc;
}

template <class R>
static R sum_abs_diff(const R* a, const R* b, int64_t n) {
    R acc = R(0);
    for (int64_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[i]);
    return acc;
}

template <class R>
static R sum_sq_diff(const R* a, const R* b, int64_t n) {
    R acc = R(0);
    for (int64_t i = 0; i < n; ++i) {
        R d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

template <class R>
static void norm_affine(const R* x, R mean, R inv_std, const R* gamma, const R* beta, R* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * inv_std * gamma[i] + beta[i];
}

template <class R>
static void layer_norm_fwd(const R* x, const R* gamma, const R* beta, R* y, R* means, R* istds,
                           int64_t rows, int64_t h, R eps) {
    for (int64_t r = 0; r < rows; ++r) {
        const R* xr = x + r * h;
        R* yr = y + r * h;
        R s = R(0);
        for (int64_t j = 0; j < h; ++j) s += xr[j];
        const R mean = s / static_cast<R>(h);
        R sq = R(0);
        for (int64_t j = 0; j < h; ++j) {
            R d = xr[j] - mean;
            sq += d * d;
        }
        const R istd = R(1) / std::sqrt(sq / static_cast<R>(h) + eps);
        means[r] = mean;
        istds[r] = istd;
        for (int64_t j = 0; j < h; ++j) yr[j] = (xr[j] - mean) * istd * gamma[j] + beta[j];
    }
}

template <class R>
static void layer_norm_bwd(const R* x, const R* gamma, const R* dy, const R* means, const R* istds,
                           R* dx, R* dgamma, R* dbeta, int64_t rows, int64_t h) {
    for (int64_t r = 0; r < rows; ++r) {
        const R* xr = x + r * h;
        const R* dyr = dy + r * h;
        R* dxr = dx + r * h;
        const R mean = means[r];
        const R istd = istds[r];
        R s1 = R(0), s2 = R(0);
        for (int64_t j = 0; j < h; ++j) {
            const R xhat = (xr[j] - mean) * istd;
            const R g = dyr[j] * gamma[j];
            s1 += g;
            s2 += g * xhat;
            dgamma[j] += dyr[j] * xhat;
            dbeta[j] += dyr[j];
        }
        s1 /= static_cast<R>(h);
        s2 /= static_cast<R>(h);
        for (int64_t j = 0; j < h; ++j) {
            const R xhat = (xr[j] - mean) * istd;
            const R g = dyr[j] * gamma[j];
            dxr[j] += istd * (g - s1 - xhat * s2);
        }
    }
}

template <class R>
static void adam_update(R* p, const R* g, R* m, R* v, int64_t n,
                        R lr, R beta1, R beta2, R eps, R bc1, R bc2) {
    for (int64_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (R(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (R(1) - beta2) * g[i] * g[i];
        R mhat = m[i] * bc1;
        R vhat = v[i] * bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

template <class R>
Backend<R> make_backend() {
    Backend<R> b{};
    b.name = "scalar";
    b.gemm_nn = &gemm_nn<R>;
    b.gemm_nt = &gemm_nt<R>;
    b.gemm_tn = &gemm_tn<R>;
    b.relu_fwd = &relu_fwd<R>;
    b.relu_bwd = &relu_bwd<R>;
    b.add = &add<R>;
    b.axpy = &axpy<R>;
    b.mul_acc = &mul_acc<R>;
    b.col_sum_acc = &col_sum_acc<R>;
    b.sum = &sum<R>;
    b.dot = &dot<R>;
    b.sum_sq_dev = &sum_sq_dev<R>;
    b.sum_abs_diff = &sum_abs_diff<R>;
    b.sum_sq_diff = &sum_sq_diff<R>;
    b.norm_affine = &norm_affine<R>;
    b.layer_norm_fwd = &layer_norm_fwd<R>;
    b.layer_norm_bwd = &layer_norm_bwd<R>;
    b.adam_update = &adam_update<R>;
    return b;
}

const Backend<float>& f32() {
    static const Backend<float> b = make_backend<float>();
    return b;
}

const Backend<double>& f64() {
    static const Backend<double> b = make_backend<double>();
    return b;
}

}  // namespace fedci::kernels::scalar
