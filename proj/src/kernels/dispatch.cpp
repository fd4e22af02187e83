#include <cstdlib>
#include <stdexcept>
#include <string>

#include "salient/kernels.hpp"

namespace salient::kernels {

namespace {

template <typename Real>
constexpr Table<Real> kScalar{Isa::scalar, &scalar::dot<Real>, &scalar::axpy<Real>, &scalar::gemv<Real>};

#if defined(__x86_64__) || defined(_M_X64)
template <typename Real>
constexpr Table<Real> kAvx2{
    Isa::avx2, static_cast<Real (*)(const Real*, const Real*, std::size_t)>(&avx2::dot),
    static_cast<void (*)(Real, const Real*, Real*, std::size_t)>(&avx2::axpy),
    static_cast<void (*)(const Real*, const Real*, Real*, std::size_t, std::size_t)>(&avx2::gemv)};
#endif

#if defined(__aarch64__)
template <typename Real>
constexpr Table<Real> kNeon{
    Isa::neon, static_cast<Real (*)(const Real*, const Real*, std::size_t)>(&neon::dot),
    static_cast<void (*)(Real, const Real*, Real*, std::size_t)>(&neon::axpy),
    static_cast<void (*)(const Real*, const Real*, Real*, std::size_t, std::size_t)>(&neon::gemv)};
#endif

Isa detect() {
  if (const char* forced = std::getenv("SALIENT_SIMD")) {
    const std::string name(forced);
    if (name == "scalar") return Isa::scalar;
    if (name == "avx2" && isa_available(Isa::avx2)) return Isa::avx2;
    if (name == "neon" && isa_available(Isa::neon)) return Isa::neon;
  }
  if (isa_available(Isa::avx2)) return Isa::avx2;
  if (isa_available(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

Isa& current() {
  static Isa isa = detect();
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

template <typename Real>
const Table<Real>& table_for(Isa isa) {
  if (!isa_available(isa))
    throw std::invalid_argument("kernel ISA not available: " + std::string(isa_name(isa)));
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::avx2: return kAvx2<Real>;
#endif
#if defined(__aarch64__)
    case Isa::neon: return kNeon<Real>;
#endif
    default: return kScalar<Real>;
  }
}

template <typename Real>
const Table<Real>*& active_slot() {
  static const Table<Real>* slot = &table_for<Real>(current());
  return slot;
}

template <typename Real>
const Table<Real>& active() {
  return *active_slot<Real>();
}

void select_isa(Isa isa) {
  if (!isa_available(isa))
    throw std::invalid_argument("kernel ISA not available: " + std::string(isa_name(isa)));
  current() = isa;
  active_slot<float>() = &table_for<float>(isa);
  active_slot<double>() = &table_for<double>(isa);
}

Isa active_isa() { return current(); }

template const Table<float>& table_for<float>(Isa);
template const Table<double>& table_for<double>(Isa);
template const Table<float>& active<float>();
template const Table<double>& active<double>();

}  // namespace salient::kernels
