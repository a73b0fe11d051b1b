#pragma once

#include <cstdint>
#include <string>

namespace fedci::kernels {

// Inner-loop primitives behind all tensor math. Each entry has a scalar
// reference implementation and, on x86-64 with AVX2+FMA, a vectorized variant
// selected at runtime. Variants of one op must agree to rounding-level
// tolerance; equivalence is enforced by tests/test_kernels.cpp.
//
// GEMM kernels accumulate into c (caller pre-fills with bias or zeros):
//   gemm_nn: c[m x n] += a[m x k] * b[k x n]
//   gemm_nt: c[m x n] += a[m x k] * b[n x k]^T
//   gemm_tn: c[m x n] += a[k x m]^T * b[k x n]
template <class R>
struct Backend {
    const char* name;

    void (*gemm_nn)(int64_t m, int64_t k, int64_t n, const R* a, const R* b, R* c);
    void (*gemm_nt)(int64_t m, int64_t k, int64_t n, const R* a, const R* b, R* c);
    void (*gemm_tn)(int64_t m, int64_t k, int64_t n, const R* a, const R* b, R* c);

    void (*relu_fwd)(const R* x, R* y, int64_t n);
    void (*relu_bwd)(const R* x, const R* dy, R* dx, int64_t n);  // dx += dy * (x > 0)

    void (*add)(const R* x, R* y, int64_t n);                    // y += x
    void (*axpy)(R a, const R* x, R* y, int64_t n);              // y += a * x
    void (*mul_acc)(const R* a, const R* b, R* y, int64_t n);    // y += a .* b
    void (*col_sum_acc)(const R* a, R* out, int64_t rows, int64_t cols);  // out[j] += sum_i a[i,j]

    R (*sum)(const R* x, int64_t n);
    R (*dot)(const R* x, const R* y, int64_t n);
    R (*sum_sq_dev)(const R* x, R mean, int64_t n);              // sum (x - mean)^2
    R (*sum_abs_diff)(const R* a, const R* b, int64_t n);
    R (*sum_sq_diff)(const R* a, const R* b, int64_t n);

    // y = (x - mean) * inv_std * gamma + beta   (one layer-norm row)
    void (*norm_affine)(const R* x, R mean, R inv_std, const R* gamma, const R* beta, R* y, int64_t n);

    // Fused layer-norm over `rows` rows of length h (population variance).
    // Forward records per-row mean/inv_std for the backward pass, which
    // accumulates into dx, dgamma, dbeta.
    void (*layer_norm_fwd)(const R* x, const R* gamma, const R* beta, R* y, R* means, R* istds,
                           int64_t rows, int64_t h, R eps);
    void (*layer_norm_bwd)(const R* x, const R* gamma, const R* dy, const R* means, const R* istds,
                           R* dx, R* dgamma, R* dbeta, int64_t rows, int64_t h);

    // In-place Adam update; bc1/bc2 are the 1/(1-beta^t) bias corrections.
    void (*adam_update)(R* p, const R* g, R* m, R* v, int64_t n,
                        R lr, R beta1, R beta2, R eps, R bc1, R bc2);
};

enum class Isa { scalar = 0, avx2 = 1 };

// Selection: FEDCI_KERNELS=scalar|avx2|auto, else best ISA the CPU supports.
Isa active_isa();
void force_isa(Isa isa);         // test hook; "auto" re-detection via reset_isa
void reset_isa();
std::string isa_name(Isa isa);
bool cpu_has_avx2();

template <class R>
const Backend<R>& backend();  // provided for float and double

template <>
const Backend<float>& backend<float>();
template <>
const Backend<double>& backend<double>();

}  // namespace fedci::kernels
