#pragma once

// Row-major matrix kernels. Every kernel accumulates each output element in a
// fixed order that depends only on that element's row and column, so a row's
// result is identical no matter how many other rows are in the call.

#include <cstddef>
#include <vector>

namespace wmc::nn::gemm {

/// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void nn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C, bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    if (!accumulate)
      for (std::size_t j = 0; j < N; ++j) c[j] = T{0};
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      if (av == T{0}) continue;
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

/// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename T>
void tn(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < M * N; ++i) C[i] = T{0};
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * M;
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T av = a[i];
      if (av == T{0}) continue;
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

/// C[M,N] (+)= A[M,K] * B[N,K]^T, via an explicit transpose of B.
template <typename T>
void nt(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C, bool accumulate) {
  std::vector<T> bt(K * N);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) bt[k * N + n] = B[n * K + k];
  gemm::nn(M, K, N, A, bt.data(), C, accumulate);
}

}  // namespace wmc::nn::gemm
