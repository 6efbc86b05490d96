#include "blas.hpp"

#include <dlfcn.h>

#include <cstdlib>
#include <mutex>

#include "cq/error.hpp"

namespace cq::detail {
namespace {

// OpenBLAS picks its kernels from CPUID in a load-time constructor.
// Hypervisors often mask the model id, which drops the choice to the
// generic Prescott path (~6x slower than what the hardware can run), and
// by constructor time it is too late for this process to influence it.
// Loading the library lazily lets us hint the core family through
// OPENBLAS_CORETYPE first. An explicit value in the environment wins.
//
// CBLAS enum values per the netlib convention.
constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

using SgemmFn = void (*)(int, int, int, int, int, int, float, const float*, int, const float*,
                         int, float, float*, int);
using DgemmFn = void (*)(int, int, int, int, int, int, double, const double*, int, const double*,
                         int, double, double*, int);

SgemmFn sgemm_ = nullptr;
DgemmFn dgemm_ = nullptr;
std::once_flag load_once_;

void load_openblas() {
  if (std::getenv("OPENBLAS_CORETYPE") == nullptr) {
#if defined(__x86_64__)
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx512f")) {
      setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
    } else if (__builtin_cpu_supports("avx2")) {
      setenv("OPENBLAS_CORETYPE", "HASWELL", 0);
    }
#endif
  }
  void* handle = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
  if (handle == nullptr) handle = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
  if (handle == nullptr) {
    fail(ErrorCode::kIo, std::string("failed to load OpenBLAS: ") + dlerror());
  }
  sgemm_ = reinterpret_cast<SgemmFn>(dlsym(handle, "cblas_sgemm"));
  dgemm_ = reinterpret_cast<DgemmFn>(dlsym(handle, "cblas_dgemm"));
  if (sgemm_ == nullptr || dgemm_ == nullptr) {
    fail(ErrorCode::kIo, "OpenBLAS is missing cblas_sgemm/cblas_dgemm symbols");
  }
}

int flag(bool t) { return t ? kTrans : kNoTrans; }

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
          float beta, float* c, std::size_t ldc) {
  std::call_once(load_once_, load_openblas);
  sgemm_(kRowMajor, flag(trans_a), flag(trans_b), static_cast<int>(m), static_cast<int>(n),
         static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
         static_cast<int>(ldc));
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
  std::call_once(load_once_, load_openblas);
  dgemm_(kRowMajor, flag(trans_a), flag(trans_b), static_cast<int>(m), static_cast<int>(n),
         static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
         static_cast<int>(ldc));
}

}  // namespace cq::detail
