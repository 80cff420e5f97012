#include "vqseq/nn.hpp"

#include <cblas.h>

#include <mutex>

extern "C" void openblas_set_num_threads(int);

namespace vqseq::nn {

namespace {

// One BLAS thread, always: sequence-level parallelism lives above this layer
// and results must not depend on the machine's core count.
void pin_blas() {
    static std::once_flag flag;
    std::call_once(flag, [] { openblas_set_num_threads(1); });
}

}  // namespace

void matmul_nn(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
    pin_blas();
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(M),
                static_cast<int>(N), static_cast<int>(K), 1.0f, A, static_cast<int>(K),
                B, static_cast<int>(N), acc ? 1.0f : 0.0f, C, static_cast<int>(N));
}

void matmul_nn(size_t M, size_t N, size_t K, const double* A, const double* B, double* C, bool acc) {
    pin_blas();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(M),
                static_cast<int>(N), static_cast<int>(K), 1.0, A, static_cast<int>(K),
                B, static_cast<int>(N), acc ? 1.0 : 0.0, C, static_cast<int>(N));
}

void matmul_tn(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
    pin_blas();
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(M),
                static_cast<int>(N), static_cast<int>(K), 1.0f, A, static_cast<int>(M),
                B, static_cast<int>(N), acc ? 1.0f : 0.0f, C, static_cast<int>(N));
}

void matmul_tn(size_t M, size_t N, size_t K, const double* A, const double* B, double* C, bool acc) {
    pin_blas();
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(M),
                static_cast<int>(N), static_cast<int>(K), 1.0, A, static_cast<int>(M),
                B, static_cast<int>(N), acc ? 1.0 : 0.0, C, static_cast<int>(N));
}

void matmul_nt(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc) {
    pin_blas();
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(M),
                static_cast<int>(N), static_cast<int>(K), 1.0f, A, static_cast<int>(K),
                B, static_cast<int>(K), acc ? 1.0f : 0.0f, C, static_cast<int>(N));
}

void matmul_nt(size_t M, size_t N, size_t K, const double* A, const double* B, double* C, bool acc) {
    pin_blas();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(M),
                static_cast<int>(N), static_cast<int>(K), 1.0, A, static_cast<int>(K),
                B, static_cast<int>(K), acc ? 1.0 : 0.0, C, static_cast<int>(N));
}

// Cephes expf polynomial, ~2e-7 relative error over the clamped range.
// Hot path of the softmax over the 4099-token vocabulary.

namespace {

[[maybe_unused]] inline float scalar_exp(float x) {
    float t = std::min(88.0f, std::max(-87.0f, x));
    float z = t * 1.44269504088896341f;
    float k = (z + 12582912.0f) - 12582912.0f;  // round to nearest
    float r = t - k * 0.693359375f;
    r -= k * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * (r * r) + r + 1.0f;
    auto ki = static_cast<int32_t>(k);
    uint32_t bits;
    std::memcpy(&bits, &p, 4);
    bits += static_cast<uint32_t>(ki) << 23;
    float out;
    std::memcpy(&out, &bits, 4);
    return out;
}

}  // namespace

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace {

inline __m256 exp8(__m256 x) {
    x = _mm256_min_ps(_mm256_set1_ps(88.0f), _mm256_max_ps(_mm256_set1_ps(-87.0f), x));
    __m256 z = _mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f));
    __m256 k = _mm256_round_ps(z, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256 r = _mm256_fnmadd_ps(k, _mm256_set1_ps(0.693359375f), x);
    r = _mm256_fnmadd_ps(k, _mm256_set1_ps(-2.12194440e-4f), r);
    __m256 p = _mm256_set1_ps(1.9875691500e-4f);
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.3981999507e-3f));
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(8.3334519073e-3f));
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(4.1665795894e-2f));
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.6666665459e-1f));
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(5.0000001201e-1f));
    p = _mm256_fmadd_ps(p, _mm256_mul_ps(r, r), _mm256_add_ps(r, _mm256_set1_ps(1.0f)));
    __m256i ki = _mm256_cvtps_epi32(k);
    __m256i bits = _mm256_add_epi32(_mm256_castps_si256(p), _mm256_slli_epi32(ki, 23));
    return _mm256_castsi256_ps(bits);
}

}  // namespace

void vec_exp(const float* x, float* y, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, exp8(_mm256_loadu_ps(x + i)));
    if (i < n) {
        // pad the tail so every element goes through the same lane code
        alignas(32) float tmp[8] = {0};
        std::copy(x + i, x + n, tmp);
        alignas(32) float out[8];
        _mm256_store_ps(out, exp8(_mm256_load_ps(tmp)));
        std::copy(out, out + (n - i), y + i);
    }
}

#else

void vec_exp(const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = scalar_exp(x[i]);
}

#endif

void vec_exp(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

}  // namespace vqseq::nn
