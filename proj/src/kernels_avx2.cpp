// AVX2+FMA variants. This TU is compiled with -mavx2 -mfma and must only be
// entered after a runtime cpu check (see kernels.cpp).

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

#include "fedci/kernels.hpp"

namespace fedci::kernels::avx2 {

static inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
}

static inline double hsum256d(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// ---- float ----

static void gemm_nn_f32(int64_t m, int64_t k, int64_t n, const float* a, const float* b, float* c) {
    for (int64_t i = 0; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            __m256 av = _mm256_set1_ps(ai[p]);
            const float* bp = b + p * n;
            int64_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 cv = _mm256_loadu_ps(ci + j);
                cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + j), cv);
                _mm256_storeu_ps(ci + j, cv);
            }
            for (; j < n; ++j) ci[j] += ai[p] * bp[j];
        }
    }
}

static void gemm_nt_f32(int64_t m, int64_t k, int64_t n, const float* a, const float* b, float* c) {
    for (int64_t i = 0; i < m; ++i) {
        const float* ai = a + i * k;
        float* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const float* bj = b + j * k;
            __m256 acc = _mm256_setzero_ps();
            int64_t p = 0;
            for (; p + 8 <= k; p += 8)
                acc = _mm256_fmadd_ps(_mm256_loadu_ps(ai + p), _mm256_loadu_ps(bj + p), acc);
            float s = hsum256(acc);
            for (; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

static void gemm_tn_f32(int64_t m, int64_t k, int64_t n, const float* a, const float* b, float* c) {
    for (int64_t p = 0; p < k; ++p) {
        const float* ap = a + p * m;
        const float* bp = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            __m256 av = _mm256_set1_ps(ap[i]);
            float* ci = c + i * n;
            int64_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 cv = _mm256_loadu_ps(ci + j);
                cv = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + j), cv);
                _mm256_storeu_ps(ci + j, cv);
            }
            for (; j < n; ++j) ci[j] += ap[i] * bp[j];
        }
    }
}

static void relu_fwd_f32(const float* x, float* y, int64_t n) {
    __m256 zero = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

static void relu_bwd_f32(const float* x, const float* dy, float* dx, int64_t n) {
    __m256 zero = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        __m256 g = _mm256_and_ps(_mm256_loadu_ps(dy + i), mask);
        _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), g));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0f) dx[i] += dy[i];
}

static void add_f32(const float* x, float* y, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] += x[i];
}

static void axpy_f32(float a, const float* x, float* y, int64_t n) {
    __m256 av = _mm256_set1_ps(a);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

static void mul_acc_f32(const float* a, const float* b, float* y, int64_t n) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i),
                                                _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

static void col_sum_acc_f32(const float* a, float* out, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) {
        const float* ai = a + i * cols;
        int64_t j = 0;
        for (; j + 8 <= cols; j += 8)
            _mm256_storeu_ps(out + j, _mm256_add_ps(_mm256_loadu_ps(out + j), _mm256_loadu_ps(ai + j)));
        for (; j < cols; ++j) out[j] += ai[j];
    }
}

static float sum_f32(const float* x, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

static float dot_f32(const float* x, const float* y, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

static float sum_sq_dev_f32(const float* x, float mean, int64_t n) {
    __m256 mv = _mm256_set1_ps(mean);
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), mv);
        acc = _mm256_fmadd_ps(d, d, acc);
    }
    float s = hsum256(acc);
    for (; i < n; ++i) {
        float d = x[i] - mean;
        s += d * d;
    }
    return s;
}

static float sum_abs_diff_f32(const float* a, const float* b, int64_t n) {
    const __m256 signmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
        acc = _mm256_add_ps(acc, _mm256_and_ps(d, signmask));
    }
    float s = hsum256(acc);
    for (; i < n; ++i) s += std::abs(a[i] - b[i]);
    return s;
}

static float sum_sq_diff_f32(const float* a, const float* b, int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
        acc = _mm256_fmadd_ps(d, d, acc);
    }
    float s = hsum256(acc);
    for (; i < n; ++i) {
        float d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

static void norm_affine_f32(const float* x, float mean, float inv_std, const float* gamma,
                            const float* beta, float* y, int64_t n) {
    __m256 mv = _mm256_set1_ps(mean);
    __m256 sv = _mm256_set1_ps(inv_std);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 xh = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(x + i), mv), sv);
        __m256 out = _mm256_fmadd_ps(xh, _mm256_loadu_ps(gamma + i), _mm256_loadu_ps(beta + i));
        _mm256_storeu_ps(y + i, out);
    }
    for (; i < n; ++i) y[i] = (x[i] - mean) * inv_std * gamma[i] + beta[i];
}

static void layer_norm_fwd_f32(const float* x, const float* gamma, const float* beta, float* y,
                               float* means, float* istds, int64_t rows, int64_t h, float eps) {
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x + r * h;
        float* yr = y + r * h;
        __m256 acc = _mm256_setzero_ps();
        int64_t j = 0;
        for (; j + 8 <= h; j += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(xr + j));
        float s = hsum256(acc);
        for (; j < h; ++j) s += xr[j];
        const float mean = s / static_cast<float>(h);

        __m256 mv = _mm256_set1_ps(mean);
        __m256 sqv = _mm256_setzero_ps();
        for (j = 0; j + 8 <= h; j += 8) {
            __m256 d = _mm256_sub_ps(_mm256_loadu_ps(xr + j), mv);
            sqv = _mm256_fmadd_ps(d, d, sqv);
        }
        float sq = hsum256(sqv);
        for (; j < h; ++j) {
            float d = xr[j] - mean;
            sq += d * d;
        }
        const float istd = 1.0f / std::sqrt(sq / static_cast<float>(h) + eps);
        means[r] = mean;
        istds[r] = istd;

        __m256 sv = _mm256_set1_ps(istd);
        for (j = 0; j + 8 <= h; j += 8) {
            __m256 xh = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + j), mv), sv);
            _mm256_storeu_ps(yr + j,
                             _mm256_fmadd_ps(xh, _mm256_loadu_ps(gamma + j), _mm256_loadu_ps(beta + j)));
        }
        for (; j < h; ++j) yr[j] = (xr[j] - mean) * istd * gamma[j] + beta[j];
    }
}

static void layer_norm_bwd_f32(const float* x, const float* gamma, const float* dy,
                               const float* means, const float* istds, float* dx, float* dgamma,
                               float* dbeta, int64_t rows, int64_t h) {
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x + r * h;
        const float* dyr = dy + r * h;
        float* dxr = dx + r * h;
        const float mean = means[r];
        const float istd = istds[r];
        __m256 mv = _mm256_set1_ps(mean);
        __m256 sv = _mm256_set1_ps(istd);
        __m256 s1v = _mm256_setzero_ps();
        __m256 s2v = _mm256_setzero_ps();
        int64_t j = 0;
        for (; j + 8 <= h; j += 8) {
            __m256 xh = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + j), mv), sv);
            __m256 dyv = _mm256_loadu_ps(dyr + j);
            __m256 g = _mm256_mul_ps(dyv, _mm256_loadu_ps(gamma + j));
            s1v = _mm256_add_ps(s1v, g);
            s2v = _mm256_fmadd_ps(g, xh, s2v);
            _mm256_storeu_ps(dgamma + j, _mm256_fmadd_ps(dyv, xh, _mm256_loadu_ps(dgamma + j)));
            _mm256_storeu_ps(dbeta + j, _mm256_add_ps(dyv, _mm256_loadu_ps(dbeta + j)));
        }
        float s1 = hsum256(s1v);
        float s2 = hsum256(s2v);
        for (; j < h; ++j) {
            const float xh = (xr[j] - mean) * istd;
            const float g = dyr[j] * gamma[j];
            s1 += g;
            s2 += g * xh;
            dgamma[j] += dyr[j] * xh;
            dbeta[j] += dyr[j];
        }
        s1 /= static_cast<float>(h);
        s2 /= static_cast<float>(h);
        __m256 s1b = _mm256_set1_ps(s1);
        __m256 s2b = _mm256_set1_ps(s2);
        for (j = 0; j + 8 <= h; j += 8) {
            __m256 xh = _mm256_mul_ps(_mm256_sub_ps(_mm256_loadu_ps(xr + j), mv), sv);
            __m256 g = _mm256_mul_ps(_mm256_loadu_ps(dyr + j), _mm256_loadu_ps(gamma + j));
            __m256 core = _mm256_sub_ps(_mm256_sub_ps(g, s1b), _mm256_mul_ps(xh, s2b));
            _mm256_storeu_ps(dxr + j, _mm256_fmadd_ps(sv, core, _mm256_loadu_ps(dxr + j)));
        }
        for (; j < h; ++j) {
            const float xh = (xr[j] - mean) * istd;
            const float g = dyr[j] * gamma[j];
            dxr[j] += istd * (g - s1 - xh * s2);
        }
    }
}

static void adam_update_f32(float* p, const float* g, float* m, float* v, int64_t n,
                            float lr, float beta1, float beta2, float eps, float bc1, float bc2) {
    __m256 b1 = _mm256_set1_ps(beta1);
    __m256 b2 = _mm256_set1_ps(beta2);
    __m256 ob1 = _mm256_set1_ps(1.0f - beta1);
    __m256 ob2 = _mm256_set1_ps(1.0f - beta2);
    __m256 lrv = _mm256_set1_ps(lr);
    __m256 epsv = _mm256_set1_ps(eps);
    __m256 bc1v = _mm256_set1_ps(bc1);
    __m256 bc2v = _mm256_set1_ps(bc2);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 gv = _mm256_loadu_ps(g + i);
        __m256 mv = _mm256_fmadd_ps(ob1, gv, _mm256_mul_ps(b1, _mm256_loadu_ps(m + i)));
        __m256 vv = _mm256_fmadd_ps(ob2, _mm256_mul_ps(gv, gv), _mm256_mul_ps(b2, _mm256_loadu_ps(v + i)));
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        __m256 mhat = _mm256_mul_ps(mv, bc1v);
        __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vv, bc2v)), epsv);
        __m256 pv = _mm256_loadu_ps(p + i);
        pv = _mm256_sub_ps(pv, _mm256_div_ps(_mm256_mul_ps(lrv, mhat), denom));
        _mm256_storeu_ps(p + i, pv);
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
    }
}

// ---- double ----

static void gemm_nn_f64(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            __m256d av = _mm256_set1_pd(ai[p]);
            const double* bp = b + p * n;
            int64_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d cv = _mm256_loadu_pd(ci + j);
                cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + j), cv);
                _mm256_storeu_pd(ci + j, cv);
            }
            for (; j < n; ++j) ci[j] += ai[p] * bp[j];
        }
    }
}

static void gemm_nt_f64(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c) {
    for (int64_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            __m256d acc = _mm256_setzero_pd();
            int64_t p = 0;
            for (; p + 4 <= k; p += 4)
                acc = _mm256_fmadd_pd(_mm256_loadu_pd(ai + p), _mm256_loadu_pd(bj + p), acc);
            double s = hsum256d(acc);
            for (; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

static void gemm_tn_f64(int64_t m, int64_t k, int64_t n, const double* a, const double* b, double* c) {
    for (int64_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            __m256d av = _mm256_set1_pd(ap[i]);
            double* ci = c + i * n;
            int64_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d cv = _mm256_loadu_pd(ci + j);
                cv = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + j), cv);
                _mm256_storeu_pd(ci + j, cv);
            }
            for (; j < n; ++j) ci[j] += ap[i] * bp[j];
        }
    }
}

static void relu_fwd_f64(const double* x, double* y, int64_t n) {
    __m256d zero = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

static void relu_bwd_f64(const double* x, const double* dy, double* dx, int64_t n) {
    __m256d zero = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        __m256d g = _mm256_and_pd(_mm256_loadu_pd(dy + i), mask);
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

static void add_f64(const double* x, double* y, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] += x[i];
}

static void axpy_f64(double a, const double* x, double* y, int64_t n) {
    __m256d av = _mm256_set1_pd(a);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a * x[i];
}

static void mul_acc_f64(const double* a, const double* b, double* y, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                                _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

static void col_sum_acc_f64(const double* a, double* out, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) {
        const double* ai = a + i * cols;
        int64_t j = 0;
        for (; j + 4 <= cols; j += 4)
            _mm256_storeu_pd(out + j, _mm256_add_pd(_mm256_loadu_pd(out + j), _mm256_loadu_pd(ai + j)));
        for (; j < cols; ++j) out[j] += ai[j];
    }
}

static double sum_f64(const double* x, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum256d(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

static double dot_f64(const double* x, const double* y, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    double s = hsum256d(acc);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

static double sum_sq_dev_f64(const double* x, double mean, int64_t n) {
    __m256d mv = _mm256_set1_pd(mean);
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), mv);
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum256d(acc);
    for (; i < n; ++i) {
        double d = x[i] - mean;
        s += d * d;
    }
    return s;
}

static double sum_abs_diff_f64(const double* a, const double* b, int64_t n) {
    const __m256d signmask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_and_pd(d, signmask));
    }
    double s = hsum256d(acc);
    for (; i < n; ++i) s += std::abs(a[i] - b[i]);
    return s;
}

static double sum_sq_diff_f64(const double* a, const double* b, int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum256d(acc);
    for (; i < n; ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

static void norm_affine_f64(const double* x, double mean, double inv_std, const double* gamma,
                            const double* beta, double* y, int64_t n) {
    __m256d mv = _mm256_set1_pd(mean);
    __m256d sv = _mm256_set1_pd(inv_std);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d xh = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), mv), sv);
        __m256d out = _mm256_fmadd_pd(xh, _mm256_loadu_pd(gamma + i), _mm256_loadu_pd(beta + i));
        _mm256_storeu_pd(y + i, out);
    }
    for (; i < n; ++i) y[i] = (x[i] - mean) * inv_std * gamma[i] + beta[i];
}

static void layer_norm_fwd_f64(const double* x, const double* gamma, const double* beta, double* y,
                               double* means, double* istds, int64_t rows, int64_t h, double eps) {
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * h;
        double* yr = y + r * h;
        __m256d acc = _mm256_setzero_pd();
        int64_t j = 0;
        for (; j + 4 <= h; j += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(xr + j));
        double s = hsum256d(acc);
        for (; j < h; ++j) s += xr[j];
        const double mean = s / static_cast<double>(h);

        __m256d mv = _mm256_set1_pd(mean);
        __m256d sqv = _mm256_setzero_pd();
        for (j = 0; j + 4 <= h; j += 4) {
            __m256d d = _mm256_sub_pd(_mm256_loadu_pd(xr + j), mv);
            sqv = _mm256_fmadd_pd(d, d, sqv);
        }
        double sq = hsum256d(sqv);
        for (; j < h; ++j) {
            double d = xr[j] - mean;
            sq += d * d;
        }
        const double istd = 1.0 / std::sqrt(sq / static_cast<double>(h) + eps);
        means[r] = mean;
        istds[r] = istd;

        __m256d sv = _mm256_set1_pd(istd);
        for (j = 0; j + 4 <= h; j += 4) {
            __m256d xh = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(xr + j), mv), sv);
            _mm256_storeu_pd(yr + j,
                             _mm256_fmadd_pd(xh, _mm256_loadu_pd(gamma + j), _mm256_loadu_pd(beta + j)));
        }
        for (; j < h; ++j) yr[j] = (xr[j] - mean) * istd * gamma[j] + beta[j];
    }
}

static void layer_norm_bwd_f64(const double* x, const double* gamma, const double* dy,
                               const double* means, const double* istds, double* dx, double* dgamma,
                               double* dbeta, int64_t rows, int64_t h) {
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * h;
        const double* dyr = dy + r * h;
        double* dxr = dx + r * h;
        const double mean = means[r];
        const double istd = istds[r];
        __m256d mv = _mm256_set1_pd(mean);
        __m256d sv = _mm256_set1_pd(istd);
        __m256d s1v = _mm256_setzero_pd();
        __m256d s2v = _mm256_setzero_pd();
        int64_t j = 0;
        for (; j + 4 <= h; j += 4) {
            __m256d xh = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(xr + j), mv), sv);
            __m256d dyv = _mm256_loadu_pd(dyr + j);
            __m256d g = _mm256_mul_pd(dyv, _mm256_loadu_pd(gamma + j));
            s1v = _mm256_add_pd(s1v, g);
            s2v = _mm256_fmadd_pd(g, xh, s2v);
            _mm256_storeu_pd(dgamma + j, _mm256_fmadd_pd(dyv, xh, _mm256_loadu_pd(dgamma + j)));
            _mm256_storeu_pd(dbeta + j, _mm256_add_pd(dyv, _mm256_loadu_pd(dbeta + j)));
        }
        double s1 = hsum256d(s1v);
        double s2 = hsum256d(s2v);
        for (; j < h; ++j) {
            const double xh = (xr[j] - mean) * istd;
            const double g = dyr[j] * gamma[j];
            s1 += g;
            s2 += g * xh;
            dgamma[j] += dyr[j] * xh;
            dbeta[j] += dyr[j];
        }
        s1 /= static_cast<double>(h);
        s2 /= static_cast<double>(h);
        __m256d s1b = _mm256_set1_pd(s1);
        __m256d s2b = _mm256_set1_pd(s2);
        for (j = 0; j + 4 <= h; j += 4) {
            __m256d xh = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(xr + j), mv), sv);
            __m256d g = _mm256_mul_pd(_mm256_loadu_pd(dyr + j), _mm256_loadu_pd(gamma + j));
            __m256d core = _mm256_sub_pd(_mm256_sub_pd(g, s1b), _mm256_mul_pd(xh, s2b));
            _mm256_storeu_pd(dxr + j, _mm256_fmadd_pd(sv, core, _mm256_loadu_pd(dxr + j)));
        }
        for (; j < h; ++j) {
            const double xh = (xr[j] - mean) * istd;
            const double g = dyr[j] * gamma[j];
            dxr[j] += istd * (g - s1 - xh * s2);
        }
    }
}

static void adam_update_f64(double* p, const double* g, double* m, double* v, int64_t n,
                            double lr, double beta1, double beta2, double eps, double bc1, double bc2) {
    __m256d b1 = _mm256_set1_pd(beta1);
    __m256d b2 = _mm256_set1_pd(beta2);
    __m256d ob1 = _mm256_set1_pd(1.0 - beta1);
    __m256d ob2 = _mm256_set1_pd(1.0 - beta2);
    __m256d lrv = _mm256_set1_pd(lr);
    __m256d epsv = _mm256_set1_pd(eps);
    __m256d bc1v = _mm256_set1_pd(bc1);
    __m256d bc2v = _mm256_set1_pd(bc2);
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_fmadd_pd(ob1, gv, _mm256_mul_pd(b1, _mm256_loadu_pd(m + i)));
        __m256d vv = _mm256_fmadd_pd(ob2, _mm256_mul_pd(gv, gv), _mm256_mul_pd(b2, _mm256_loadu_pd(v + i)));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        __m256d mhat = _mm256_mul_pd(mv, bc1v);
        __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vv, bc2v)), epsv);
        __m256d pv = _mm256_loadu_pd(p + i);
        pv = _mm256_sub_pd(pv, _mm256_div_pd(_mm256_mul_pd(lrv, mhat), denom));
        _mm256_storeu_pd(p + i, pv);
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] * bc1) / (std::sqrt(v[i] * bc2) + eps);
    }
}

const Backend<float>& f32() {
    static const Backend<float> b = [] {
        Backend<float> t{};
        t.name = "avx2";
        t.gemm_nn = &gemm_nn_f32;
        t.gemm_nt = &gemm_nt_f32;
        t.gemm_tn = &gemm_tn_f32;
        t.relu_fwd = &relu_fwd_f32;
        t.relu_bwd = &relu_bwd_f32;
        t.add = &add_f32;
        t.axpy = &axpy_f32;
        t.mul_acc = &mul_acc_f32;
        t.col_sum_acc = &col_sum_acc_f32;
        t.sum = &sum_f32;
        t.dot = &dot_f32;
        t.sum_sq_dev = &sum_sq_dev_f32;
        t.sum_abs_diff = &sum_abs_diff_f32;
        t.sum_sq_diff = &sum_sq_diff_f32;
        t.norm_affine = &norm_affine_f32;
        t.layer_norm_fwd = &layer_norm_fwd_f32;
        t.layer_norm_bwd = &layer_norm_bwd_f32;
        t.adam_update = &adam_update_f32;
        return t;
    }();
    return b;
}

const Backend<double>& f64() {
    static const Backend<double> b = [] {
        Backend<double> t{};
        t.name = "avx2";
        t.gemm_nn = &gemm_nn_f64;
        t.gemm_nt = &gemm_nt_f64;
        t.gemm_tn = &gemm_tn_f64;
        t.relu_fwd = &relu_fwd_f64;
        t.relu_bwd = &relu_bwd_f64;
        t.add = &add_f64;
        t.axpy = &axpy_f64;
        t.mul_acc = &mul_acc_f64;
        t.col_sum_acc = &col_sum_acc_f64;
        t.sum = &sum_f64;
        t.dot = &dot_f64;
        t.sum_sq_dev = &sum_sq_dev_f64;
        t.sum_abs_diff = &sum_abs_diff_f64;
        t.sum_sq_diff = &sum_sq_diff_f64;
        t.norm_affine = &norm_affine_f64;
        t.layer_norm_fwd = &layer_norm_fwd_f64;
        t.layer_norm_bwd = &layer_norm_bwd_f64;
        t.adam_update = &adam_update_f64;
        return t;
    }();
    return b;
}

}  // namespace fedci::kernels::avx2

#endif  // x86_64
