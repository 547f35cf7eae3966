#pragma once

#include <cstddef>

#ifdef LPAE_USE_CBLAS
#include <cblas.h>
#endif

#ifdef LPAE_OPENBLAS
extern "C" void openblas_set_num_threads(int);
#endif

namespace lpae {

// Row-major C = alpha * op(A) * op(B) + beta * C with op = transpose when the
// corresponding flag is set. Dispatches to BLAS for float/double; the fallback
// is a plain blocked loop so the library still builds without a BLAS.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          int lda, const T* b, int ldb, T beta, T* c, int ldc);

namespace detail {

template <typename T>
inline void gemm_naive(bool trans_a, bool trans_b, int m, int n, int k, T alpha,
                       const T* a, int lda, const T* b, int ldb, T beta, T* c,
                       int ldc) {
  auto A = [&](int i, int p) { return trans_a ? a[p * lda + i] : a[i * lda + p]; };
  auto B = [&](int p, int j) { return trans_b ? b[j * ldb + p] : b[p * ldb + j]; };
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    for (int p = 0; p < k; ++p) {
      T av = alpha * A(i, p);
      if (av == T(0)) continue;
      for (int j = 0; j < n; ++j) c[i * ldc + j] += av * B(p, j);
    }
  }
}

}  // namespace detail

#ifdef LPAE_USE_CBLAS

template <>
inline void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k,
                        float alpha, const float* a, int lda, const float* b,
                        int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

template <>
inline void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k,
                         double alpha, const double* a, int lda, const double* b,
                         int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

#else

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          int lda, const T* b, int ldb, T beta, T* c, int ldc) {
  detail::gemm_naive(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

#endif

// Kernel thread count. BLAS-backed builds forward this to the BLAS runtime;
// everything else in the library is single-threaded by construction, which is
// what makes results reproducible run to run.
inline void set_num_threads(int n) {
#if defined(LPAE_USE_CBLAS) && defined(LPAE_OPENBLAS)
  openblas_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace lpae
