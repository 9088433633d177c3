#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace dcelanm {

// Register-blocked GEMM, C[M,N] += A[M,K] * B[K,N], all row-major.
//
// The microkernel keeps an MR x NR accumulator block in registers and walks a
// KC-deep panel of B that stays L1/L2 resident. Accumulation order per output
// element is a fixed function of the loop structure, so results are bitwise
// reproducible run to run.

namespace detail {

template <typename T>
struct GemmTile {
    static constexpr int64_t MR = 4;
    static constexpr int64_t NR = sizeof(T) == 4 ? 32 : 16;  // two 64-byte lanes
    static constexpr int64_t KC = 512;
};

template <typename T>
inline void gemm_micro(int64_t mr, int64_t nr, int64_t kc, const T* A, int64_t lda, const T* B,
                       int64_t ldb, T* C, int64_t ldc) {
    constexpr int64_t MR = GemmTile<T>::MR;
    constexpr int64_t NR = GemmTile<T>::NR;
    if (mr == MR && nr == NR) {
        T acc[MR * NR] = {};
        for (int64_t k = 0; k < kc; ++k) {
            const T* brow = B + k * ldb;
            for (int64_t mi = 0; mi < MR; ++mi) {
                const T av = A[mi * lda + k];
                T* arow = acc + mi * NR;
                for (int64_t j = 0; j < NR; ++j) arow[j] += av * brow[j];
            }
        }
        for (int64_t mi = 0; mi < MR; ++mi) {
            T* crow = C + mi * ldc;
            const T* arow = acc + mi * NR;
            for (int64_t j = 0; j < NR; ++j) crow[j] += arow[j];
        }
        return;
    }
    // edge tile
    for (int64_t mi = 0; mi < mr; ++mi) {
        for (int64_t k = 0; k < kc; ++k) {
            const T av = A[mi * lda + k];
            const T* brow = B + k * ldb;
            T* crow = C + mi * ldc;
            for (int64_t j = 0; j < nr; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
inline std::vector<T>& gemm_scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

}  // namespace detail

/// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda, const T* B, int64_t ldb,
             T* C, int64_t ldc) {
    constexpr int64_t MR = detail::GemmTile<T>::MR;
    constexpr int64_t NR = detail::GemmTile<T>::NR;
    constexpr int64_t KC = detail::GemmTile<T>::KC;
    for (int64_t j0 = 0; j0 < N; j0 += NR) {
        const int64_t nr = std::min(NR, N - j0);
        for (int64_t k0 = 0; k0 < K; k0 += KC) {
            const int64_t kc = std::min(KC, K - k0);
            for (int64_t i0 = 0; i0 < M; i0 += MR) {
                const int64_t mr = std::min(MR, M - i0);
                detail::gemm_micro(mr, nr, kc, A + i0 * lda + k0, lda, B + k0 * ldb + j0, ldb,
                                   C + i0 * ldc + j0, ldc);
            }
        }
    }
}

/// Cache-blocked out-of-place transpose: dst[j,i] = src[i,j], src is R x Cd.
template <typename T>
void transpose_mat(int64_t R, int64_t Cd, const T* src, T* dst) {
    constexpr int64_t BT = 32;
    for (int64_t i0 = 0; i0 < R; i0 += BT)
        for (int64_t j0 = 0; j0 < Cd; j0 += BT) {
            const int64_t i1 = std::min(i0 + BT, R);
            const int64_t j1 = std::min(j0 + BT, Cd);
            for (int64_t i = i0; i < i1; ++i)
                for (int64_t j = j0; j < j1; ++j) dst[j * R + i] = src[i * Cd + j];
        }
}

/// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda, const T* B, int64_t ldb,
             T* C, int64_t ldc) {
    auto& buf = detail::gemm_scratch<T>();
    if (static_cast<int64_t>(buf.size()) < K * N) buf.resize(static_cast<size_t>(K * N));
    // pack B^T once; the nn kernel then streams it panel by panel
    if (ldb == K) {
        transpose_mat(N, K, B, buf.data());
    } else {
        for (int64_t j = 0; j < N; ++j)
            for (int64_t k = 0; k < K; ++k) buf[static_cast<size_t>(k * N + j)] = B[j * ldb + k];
    }
    gemm_nn(M, N, K, A, lda, buf.data(), N, C, ldc);
}

/// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, int64_t lda, const T* B, int64_t ldb,
             T* C, int64_t ldc) {
    auto& buf = detail::gemm_scratch<T>();
    if (static_cast<int64_t>(buf.size()) < K * M) buf.resize(static_cast<size_t>(K * M));
    if (lda == M) {
        transpose_mat(K, M, A, buf.data());
    } else {
        for (int64_t k = 0; k < K; ++k)
            for (int64_t i = 0; i < M; ++i) buf[static_cast<size_t>(i * K + k)] = A[k * lda + i];
    }
    gemm_nn(M, N, K, buf.data(), K, B, ldb, C, ldc);
}

}  // namespace dcelanm
