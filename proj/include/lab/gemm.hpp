#pragma once

#include <cstddef>

// Dense double-precision kernels for the three access patterns the autodiff
// ops need. All matrices are row-major and contiguous.
namespace lab::gemm {

// C[M,N] (+)= A[M,K] * B[N,K]^T   (rows of A dotted with rows of B)
void nt(size_t M, size_t N, size_t K, const double* A, const double* B, double* C,
        bool accumulate);

// C[M,N] (+)= A[M,K] * B[K,N]
void nn(size_t M, size_t N, size_t K, const double* A, const double* B, double* C,
        bool accumulate);

// C[M,N] += A[K,M]^T * B[K,N]     (used for weight gradients; always accumulates)
void tn_acc(size_t M, size_t N, size_t K, const double* A, const double* B, double* C);

}  // namespace lab::gemm
