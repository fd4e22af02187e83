#pragma once
// Inner-loop arithmetic used by the transformer: dot products and axpy.
//
// Every kernel has a scalar reference implementation and, where the target
// supports it, a SIMD variant (AVX2+FMA on x86-64, NEON on aarch64). The
// active table is selected once at startup from the CPU features and can be
// forced with SALIENT_SIMD=scalar|avx2|neon or select_isa().

#include <cstddef>
#include <string_view>

namespace salient::kernels {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

template <typename Real>
struct Table {
  Isa isa;
  Real (*dot)(const Real* a, const Real* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(Real alpha, const Real* x, Real* y, std::size_t n);
  // y[r] = dot(W[r, :], x) for a row-major rows x cols matrix W
  void (*gemv)(const Real* W, const Real* x, Real* y, std::size_t rows, std::size_t cols);
};

bool isa_available(Isa isa);

// Active kernels for the current process.
template <typename Real>
const Table<Real>& active();

// Kernels for a specific ISA; throws std::invalid_argument when unavailable.
template <typename Real>
const Table<Real>& table_for(Isa isa);

// Switches the active table. Not thread-safe; call before spawning workers.
void select_isa(Isa isa);
Isa active_isa();

namespace scalar {
template <typename Real>
Real dot(const Real* a, const Real* b, std::size_t n);
template <typename Real>
void axpy(Real alpha, const Real* x, Real* y, std::size_t n);
template <typename Real>
void gemv(const Real* W, const Real* x, Real* y, std::size_t rows, std::size_t cols);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemv(const float* W, const float* x, float* y, std::size_t rows, std::size_t cols);
void gemv(const double* W, const double* x, double* y, std::size_t rows, std::size_t cols);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void gemv(const float* W, const float* x, float* y, std::size_t rows, std::size_t cols);
void gemv(const double* W, const double* x, double* y, std::size_t rows, std::size_t cols);
}  // namespace neon
#endif

}  // namespace salient::kernels
