#include "fedci/tensor.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fedci {

void tune_allocator_for_tensors() {
#if defined(__GLIBC__)
    static bool done = false;
    if (done) return;
    done = true;
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace fedci
