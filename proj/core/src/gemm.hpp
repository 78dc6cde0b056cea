#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace hvt::detail {

// C[M,N] += A[M,K] * B[K,N], all row-major and contiguous.
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C)
{
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
        T* c0 = C + i * N;
        T* c1 = c0 + N;
        T* c2 = c1 + N;
        T* c3 = c2 + N;
        const T* a0 = A + i * K;
        const T* a1 = a0 + K;
        const T* a2 = a1 + K;
        const T* a3 = a2 + K;
        for (std::size_t k = 0; k < K; ++k) {
            const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
            const T* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) {
                const T bj = b[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < M; ++i) {
        T* c = C + i * N;
        const T* a = A + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T v = a[k];
            const T* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j)
                c[j] += v * b[j];
        }
    }
}

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols)
{
    std::vector<T> out(rows * cols);
    constexpr std::size_t tile = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += tile)
        for (std::size_t c0 = 0; c0 < cols; c0 += tile)
            for (std::size_t r = r0; r < std::min(rows, r0 + tile); ++r)
                for (std::size_t c = c0; c < std::min(cols, c0 + tile); ++c)
                    out[c * rows + r] = src[r * cols + c];
    return out;
}

// C[M,N] += A[M,K] * B^T where B is stored [N,K].
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C)
{
    const auto bt = transposed(B, N, K);
    gemm_nn(M, N, K, A, bt.data(), C);
}

// C[M,N] += A^T * B where A is stored [K,M] and B is [K,N].
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C)
{
    const auto at = transposed(A, K, M);
    gemm_nn(M, N, K, at.data(), B, C);
}

} // namespace hvt::detail
