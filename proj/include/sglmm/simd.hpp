#pragma once
// Data-parallel inner loops used by the density, network and sampler code.
//
// Every kernel has a scalar reference implementation and, where the CPU
// supports it, an AVX2+FMA variant. The active table is chosen once at
// startup; SGLMM_SIMD=scalar in the environment forces the reference path.
// Within one process the choice never changes, so results are bit-stable
// run to run on a given machine.

#include <cstddef>
#include <span>
#include <string_view>

namespace sglmm::simd {

struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out += c * (a - b)
  void (*axpy_diff)(double c, const double* a, const double* b, double* out, std::size_t n);
  // sum_i w_i (a_i - b_i)^2
  double (*weighted_sq_dist)(const double* a, const double* b, const double* w, std::size_t n);
  // y = A x + bias, A row-major rows x cols; bias may be null
  void (*gemv)(const double* A, const double* x, const double* bias, double* y,
               std::size_t rows, std::size_t cols);
  // y += A^T x, A row-major rows x cols
  void (*gemv_t_acc)(const double* A, const double* x, double* y, std::size_t rows,
                     std::size_t cols);
  // elementwise; out may alias in
  void (*exp)(const double* in, double* out, std::size_t n);
  void (*log)(const double* in, double* out, std::size_t n);
};

const KernelTable& scalar_kernels();
// nullptr when the running CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();
const KernelTable& active_kernels();

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active_kernels().dot(a.data(), b.data(), a.size());
}
inline double sum(std::span<const double> a) { return active_kernels().sum(a.data(), a.size()); }
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active_kernels().axpy(alpha, x.data(), y.data(), x.size());
}
inline void axpy_diff(double c, std::span<const double> a, std::span<const double> b,
                      std::span<double> out) {
  active_kernels().axpy_diff(c, a.data(), b.data(), out.data(), a.size());
}
inline double weighted_sq_dist(std::span<const double> a, std::span<const double> b,
                               std::span<const double> w) {
  return active_kernels().weighted_sq_dist(a.data(), b.data(), w.data(), a.size());
}
inline void exp(std::span<const double> in, std::span<double> out) {
  active_kernels().exp(in.data(), out.data(), in.size());
}
inline void log(std::span<const double> in, std::span<double> out) {
  active_kernels().log(in.data(), out.data(), in.size());
}

}  // namespace sglmm::simd
