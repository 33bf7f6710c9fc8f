#include "lab/gemm.hpp"

#include <cstring>

namespace lab::gemm {

namespace {

// Cache block sizes; K rows of A plus the B panel stay in L1/L2.
constexpr size_t kBlockM = 64;
constexpr size_t kBlockN = 64;
constexpr size_t kBlockK = 256;

inline double dot(const double* a, const double* b, size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3));
}

}  // namespace

void nt(size_t M, size_t N, size_t K, const double* A, const double* B, double* C,
        bool accumulate) {
    if (!accumulate) std::memset(C, 0, M * N * sizeof(double));
    for (size_t k0 = 0; k0 < K; k0 += kBlockK) {
        size_t kend = k0 + kBlockK < K ? k0 + kBlockK : K;
        size_t klen = kend - k0;
        for (size_t i0 = 0; i0 < M; i0 += kBlockM) {
            size_t iend = i0 + kBlockM < M ? i0 + kBlockM : M;
            for (size_t j0 = 0; j0 < N; j0 += kBlockN) {
                size_t jend = j0 + kBlockN < N ? j0 + kBlockN : N;
                for (size_t i = i0; i < iend; ++i) {
                    const double* ai = A + i * K + k0;
                    double* ci = C + i * N;
                    size_t j = j0;
                    // two rows of B at a time keeps the dot pipelines busy
                    for (; j + 2 <= jend; j += 2) {
                        const double* bj0 = B + j * K + k0;
                        const double* bj1 = B + (j + 1) * K + k0;
                        double s00 = 0.0, s01 = 0.0;
                        for (size_t k = 0; k < klen; ++k) {
                            double av = ai[k];
                            s00 += av * bj0[k];
                            s01 += av * bj1[k];
                        }
                        ci[j] += s00;
                        ci[j + 1] += s01;
                    }
                    for (; j < jend; ++j) {
                        ci[j] += dot(ai, B + j * K + k0, klen);
                    }
                }
            }
        }
    }
}

void nn(size_t M, size_t N, size_t K, const double* A, const double* B, double* C,
        bool accumulate) {
    if (!accumulate) std::memset(C, 0, M * N * sizeof(double));
    for (size_t k0 = 0; k0 < K; k0 += kBlockK) {
        size_t kend = k0 + kBlockK < K ? k0 + kBlockK : K;
        for (size_t i0 = 0; i0 < M; i0 += kBlockM) {
            size_t iend = i0 + kBlockM < M ? i0 + kBlockM : M;
            for (size_t i = i0; i < iend; ++i) {
                const double* ai = A + i * K;
                double* ci = C + i * N;
                size_t k = k0;
                for (; k + 2 <= kend; k += 2) {
                    double a0 = ai[k], a1 = ai[k + 1];
                    const double* b0 = B + k * N;
                    const double* b1 = B + (k + 1) * N;
                    for (size_t j = 0; j < N; ++j) ci[j] += a0 * b0[j] + a1 * b1[j];
                }
                for (; k < kend; ++k) {
                    double a0 = ai[k];
                    const double* b0 = B + k * N;
                    for (size_t j = 0; j < N; ++j) ci[j] += a0 * b0[j];
                }
            }
        }
    }
}

void tn_acc(size_t M, size_t N, size_t K, const double* A, const double* B, double* C) {
    // C[m,n] += sum_k A[k,m] * B[k,n]; rank-1 updates over k
    for (size_t k0 = 0; k0 < K; k0 += kBlockK) {
        size_t kend = k0 + kBlockK < K ? k0 + kBlockK : K;
        size_t k = k0;
        for (; k + 2 <= kend; k += 2) {
            const double* a0 = A + k * M;
            const double* a1 = A + (k + 1) * M;
            const double* b0 = B + k * N;
            const double* b1 = B + (k + 1) * N;
            for (size_t m = 0; m < M; ++m) {
                double av0 = a0[m], av1 = a1[m];
                double* cm = C + m * N;
                for (size_t j = 0; j < N; ++j) cm[j] += av0 * b0[j] + av1 * b1[j];
            }
        }
        for (; k < kend; ++k) {
            const double* a0 = A + k * M;
            const double* b0 = B + k * N;
            for (size_t m = 0; m < M; ++m) {
                double av0 = a0[m];
                double* cm = C + m * N;
                for (size_t j = 0; j < N; ++j) cm[j] += av0 * b0[j];
            }
        }
    }
}

}  // namespace lab::gemm
