#include "fedci/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace fedci::kernels {

namespace scalar {
const Backend<float>& f32();
const Backend<double>& f64();
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
const Backend<float>& f32();
const Backend<double>& f64();
}  // namespace avx2
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

Isa detect() {
    if (const char* env = std::getenv("FEDCI_KERNELS")) {
        std::string v(env);
        if (v == "scalar") return Isa::scalar;
        if (v == "avx2") return Isa::avx2;
        // anything else (including "auto") falls through to detection
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<int> g_isa{-1};

}  // namespace

Isa active_isa() {
    int v = g_isa.load(std::memory_order_acquire);
    if (v < 0) {
        v = static_cast<int>(detect());
        g_isa.store(v, std::memory_order_release);
    }
    return static_cast<Isa>(v);
}

void force_isa(Isa isa) { g_isa.store(static_cast<int>(isa), std::memory_order_release); }

void reset_isa() { g_isa.store(-1, std::memory_order_release); }

std::string isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

template <>
const Backend<float>& backend<float>() {
#if defined(__x86_64__) || defined(_M_X64)
    if (active_isa() == Isa::avx2) return avx2::f32();
#endif
    return scalar::f32();
}

template <>
const Backend<double>& backend<double>() {
#if defined(__x86_64__) || defined(_M_X64)
    if (active_isa() == Isa::avx2) return avx2::f64();
#endif
    return scalar::f64();
}

}  // namespace fedci::kernels
