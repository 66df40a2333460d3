#pragma once
// Dense inner-loop kernels over row-major double arrays.
//
// Every kernel has a scalar reference implementation. An AVX2+FMA variant is
// compiled on x86-64 and selected at startup when the CPU supports it. The
// environment variable PKI_KERNELS=scalar|avx2 forces a choice. Results of the
// two variants agree to rounding (FMA contracts differently), and within one
// variant every kernel is deterministic.

#include <cstddef>
#include <span>
#include <string_view>

namespace inpk::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in.
const KernelTable* avx2_table();

bool cpu_supports(Isa isa);
std::string_view isa_name(Isa isa);

// The table used by all tensor ops.
const KernelTable& active();
// Switches the active table. Throws ConfigError when the ISA is unavailable.
// Not thread-safe; intended for process start-up and tests.
void select(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace inpk::kernels
