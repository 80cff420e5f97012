#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vqseq/common.hpp"
#include "vqseq/tensor.hpp"

namespace vqseq::nn {

// ---------------------------------------------------------------------------
// Dense matrix products. Row-major throughout; BLAS does the heavy lifting
// (pinned to a single BLAS thread so results never depend on machine
// parallelism — the pipeline parallelizes over sequences instead).
// ---------------------------------------------------------------------------

// C (+)= A[M,K] * B[K,N]
void matmul_nn(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc);
void matmul_nn(size_t M, size_t N, size_t K, const double* A, const double* B, double* C, bool acc);
// C (+)= A[K,M]^T * B[K,N]
void matmul_tn(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc);
void matmul_tn(size_t M, size_t N, size_t K, const double* A, const double* B, double* C, bool acc);
// C (+)= A[M,K] * B[N,K]^T
void matmul_nt(size_t M, size_t N, size_t K, const float* A, const float* B, float* C, bool acc);
void matmul_nt(size_t M, size_t N, size_t K, const double* A, const double* B, double* C, bool acc);

// ---------------------------------------------------------------------------
// Reductions with a fixed 8-lane accumulation order: vectorizable without
// value-unsafe flags, and bit-stable because the order never depends on the
// ISA or thread count.
// ---------------------------------------------------------------------------

template <typename T>
T reduce_sum(const T* x, size_t n) {
    T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) acc[j] += x[i + j];
    T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; i < n; ++i) s += x[i];
    return s;
}

template <typename T>
T reduce_max(const T* x, size_t n) {
    T acc[8];
    size_t i = 0;
    if (n >= 8) {
        for (int j = 0; j < 8; ++j) acc[j] = x[j];
        for (i = 8; i + 8 <= n; i += 8)
            for (int j = 0; j < 8; ++j) acc[j] = std::max(acc[j], x[i + j]);
        T m = std::max(std::max(std::max(acc[0], acc[1]), std::max(acc[2], acc[3])),
                       std::max(std::max(acc[4], acc[5]), std::max(acc[6], acc[7])));
        for (; i < n; ++i) m = std::max(m, x[i]);
        return m;
    }
    T m = x[0];
    for (i = 1; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

// sum of x[i]*y[i]
template <typename T>
T reduce_dot(const T* x, const T* y, size_t n) {
    T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) acc[j] += x[i + j] * y[i + j];
    T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

// sum of (x[i] - c)^2
template <typename T>
T reduce_sq_diff(const T* x, size_t n, T c) {
    T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (int j = 0; j < 8; ++j) {
            T d = x[i + j] - c;
            acc[j] += d * d;
        }
    }
    T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (; i < n; ++i) {
        T d = x[i] - c;
        s += d * d;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Trainable parameter with gradient and AdamW state.
// ---------------------------------------------------------------------------

template <typename T>
struct ParamSlot {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;
    TensorT<T> adam_m;
    TensorT<T> adam_v;
    int64_t step_count = 0;
    bool decay = true;  // layer-norm gains/shifts and biases opt out

    void configure(std::string n, std::vector<size_t> shape, bool apply_decay) {
        name = std::move(n);
        value = TensorT<T>(shape);
        grad = TensorT<T>(shape);
        adam_m = TensorT<T>(shape);
        adam_v = TensorT<T>(shape);
        step_count = 0;
        decay = apply_decay;
    }
    size_t size() const { return value.numel(); }
};

// Initializers: weights uniform in +-sqrt(6/(fan_in+fan_out)), embeddings
// normal(0, 0.02), biases/shifts zero, gains one.
template <typename T>
void init_uniform_fan(ParamSlot<T>& p, size_t fan_in, size_t fan_out, StreamRng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& w : p.value.data)
        w = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
}

template <typename T>
void init_normal(ParamSlot<T>& p, double stddev, StreamRng& rng) {
    for (auto& w : p.value.data) w = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
void init_constant(ParamSlot<T>& p, T c) {
    std::fill(p.value.data.begin(), p.value.data.end(), c);
}

// ---------------------------------------------------------------------------
// Embedding lookup.
// ---------------------------------------------------------------------------

template <typename T>
void embedding_forward(const T* table, size_t vocab, size_t dim,
                       const uint32_t* ids, size_t len, T* out) {
    for (size_t i = 0; i < len; ++i) {
        if (ids[i] >= vocab)
            throw IndexError("token id " + std::to_string(ids[i]) +
                             " out of vocabulary " + std::to_string(vocab));
        std::copy_n(table + ids[i] * dim, dim, out + i * dim);
    }
}

template <typename T>
void embedding_backward(const T* dout, const uint32_t* ids, size_t len, size_t dim,
                        T* dtable) {
    for (size_t i = 0; i < len; ++i) {
        T* row = dtable + ids[i] * dim;
        const T* g = dout + i * dim;
        for (size_t j = 0; j < dim; ++j) row[j] += g[j];
    }
}

// ---------------------------------------------------------------------------
// 1-D convolution, kernel 3, zero same-padding, as an im2col matmul.
// Weight layout: [3*Cin, Cout], rows ordered (tap, cin) with tap 0 = offset
// -1.
// ---------------------------------------------------------------------------

template <typename T>
void im2col3(const T* in, size_t L, size_t C, T* cols) {
    for (size_t i = 0; i < L; ++i) {
        T* row = cols + i * 3 * C;
        for (int tap = 0; tap < 3; ++tap) {
            long src = static_cast<long>(i) + tap - 1;
            T* dst = row + static_cast<size_t>(tap) * C;
            if (src < 0 || src >= static_cast<long>(L))
                std::fill_n(dst, C, T(0));
            else
                std::copy_n(in + static_cast<size_t>(src) * C, C, dst);
        }
    }
}

template <typename T>
void col2im3(const T* dcols, size_t L, size_t C, T* din) {
    std::fill_n(din, L * C, T(0));
    for (size_t i = 0; i < L; ++i) {
        const T* row = dcols + i * 3 * C;
        for (int tap = 0; tap < 3; ++tap) {
            long src = static_cast<long>(i) + tap - 1;
            if (src < 0 || src >= static_cast<long>(L)) continue;
            T* dst = din + static_cast<size_t>(src) * C;
            const T* g = row + static_cast<size_t>(tap) * C;
            for (size_t j = 0; j < C; ++j) dst[j] += g[j];
        }
    }
}

// cols ([L, 3*Cin]) is written as a side effect and must be kept for the
// backward pass.
template <typename T>
void conv1d_forward(const T* in, size_t L, size_t Cin,
                    const T* w, const T* b, size_t Cout,
                    T* out, T* cols) {
    im2col3(in, L, Cin, cols);
    matmul_nn(L, Cout, 3 * Cin, cols, w, out, false);
    for (size_t i = 0; i < L; ++i) {
        T* row = out + i * Cout;
        for (size_t j = 0; j < Cout; ++j) row[j] += b[j];
    }
}

template <typename T>
void conv1d_backward(const T* dout, const T* cols, const T* w,
                     size_t L, size_t Cin, size_t Cout,
                     T* din, T* dw, T* db, T* dcols_scratch, bool acc_w = true) {
    matmul_tn(3 * Cin, Cout, L, cols, dout, dw, acc_w);
    for (size_t i = 0; i < L; ++i) {
        const T* row = dout + i * Cout;
        for (size_t j = 0; j < Cout; ++j) db[j] += row[j];
    }
    if (din) {
        matmul_nt(L, 3 * Cin, Cout, dout, w, dcols_scratch, false);
        col2im3(dcols_scratch, L, Cin, din);
    }
}

// ---------------------------------------------------------------------------
// Layer normalization over the channel axis, eps = 1e-5.
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
void layernorm_forward(const T* in, size_t L, size_t C,
                       const T* gain, const T* shift,
                       T* out, T* mean, T* rstd) {
    for (size_t i = 0; i < L; ++i) {
        const T* x = in + i * C;
        T mu = reduce_sum(x, C) / static_cast<T>(C);
        T var = reduce_sq_diff(x, C, mu) / static_cast<T>(C);
        T rs = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        mean[i] = mu;
        rstd[i] = rs;
        T* y = out + i * C;
        for (size_t j = 0; j < C; ++j) y[j] = (x[j] - mu) * rs * gain[j] + shift[j];
    }
}

template <typename T>
void layernorm_backward(const T* dout, const T* in, const T* gain,
                        const T* mean, const T* rstd, size_t L, size_t C,
                        T* din, T* dgain, T* dshift) {
    for (size_t i = 0; i < L; ++i) {
        const T* x = in + i * C;
        const T* dy = dout + i * C;
        T mu = mean[i], rs = rstd[i];
        T acc_dxhat[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        T acc_cross[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        size_t j = 0;
        for (; j + 8 <= C; j += 8) {
            for (int l = 0; l < 8; ++l) {
                T xhat = (x[j + l] - mu) * rs;
                T dxhat = dy[j + l] * gain[j + l];
                acc_dxhat[l] += dxhat;
                acc_cross[l] += dxhat * xhat;
                dgain[j + l] += dy[j + l] * xhat;
                dshift[j + l] += dy[j + l];
            }
        }
        T sum_dxhat = ((acc_dxhat[0] + acc_dxhat[1]) + (acc_dxhat[2] + acc_dxhat[3])) +
                      ((acc_dxhat[4] + acc_dxhat[5]) + (acc_dxhat[6] + acc_dxhat[7]));
        T sum_dxhat_xhat = ((acc_cross[0] + acc_cross[1]) + (acc_cross[2] + acc_cross[3])) +
                           ((acc_cross[4] + acc_cross[5]) + (acc_cross[6] + acc_cross[7]));
        for (; j < C; ++j) {
            T xhat = (x[j] - mu) * rs;
            T dxhat = dy[j] * gain[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgain[j] += dy[j] * xhat;
            dshift[j] += dy[j];
        }
        T inv_c = T(1) / static_cast<T>(C);
        T* dx = din + i * C;
        for (size_t jj = 0; jj < C; ++jj) {
            T xhat = (x[jj] - mu) * rs;
            T dxhat = dy[jj] * gain[jj];
            dx[jj] = rs * (dxhat - sum_dxhat * inv_c - xhat * sum_dxhat_xhat * inv_c);
        }
    }
}

// ---------------------------------------------------------------------------
// Linear map.
// ---------------------------------------------------------------------------

template <typename T>
void linear_forward(const T* in, size_t L, size_t Cin,
                    const T* w, const T* b, size_t Cout, T* out) {
    matmul_nn(L, Cout, Cin, in, w, out, false);
    if (b) {
        for (size_t i = 0; i < L; ++i) {
            T* row = out + i * Cout;
            for (size_t j = 0; j < Cout; ++j) row[j] += b[j];
        }
    }
}

template <typename T>
void linear_backward(const T* dout, const T* in, const T* w,
                     size_t L, size_t Cin, size_t Cout,
                     T* din, T* dw, T* db, bool acc_w = true) {
    matmul_tn(Cin, Cout, L, in, dout, dw, acc_w);
    if (db) {
        for (size_t i = 0; i < L; ++i) {
            const T* row = dout + i * Cout;
            for (size_t j = 0; j < Cout; ++j) db[j] += row[j];
        }
    }
    if (din) matmul_nt(L, Cin, Cout, dout, w, din, false);
}

// ---------------------------------------------------------------------------
// Elementwise pieces.
// ---------------------------------------------------------------------------

template <typename T>
void relu_forward(const T* in, size_t n, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <typename T>
void relu_backward(const T* dout, const T* pre, size_t n, T* din) {
    for (size_t i = 0; i < n; ++i) din[i] = pre[i] > T(0) ? dout[i] : T(0);
}

// Train mode zeroes with probability p and scales survivors by 1/(1-p);
// eval mode is the identity. The keep mask must be stashed for backward.
template <typename T>
void dropout_forward(const T* in, size_t n, double p, bool train,
                     StreamRng& rng, T* out, uint8_t* mask) {
    if (!train || p <= 0.0) {
        if (out != in) std::copy_n(in, n, out);
        if (mask) std::fill_n(mask, n, uint8_t(1));
        return;
    }
    T scale = static_cast<T>(1.0 / (1.0 - p));
    for (size_t i = 0; i < n; ++i) {
        bool keep = rng.uniform() >= p;
        mask[i] = keep;
        out[i] = keep ? in[i] * scale : T(0);
    }
}

template <typename T>
void dropout_backward(const T* dout, const uint8_t* mask, size_t n, double p,
                      bool train, T* din) {
    if (!train || p <= 0.0) {
        if (din != dout) std::copy_n(dout, n, din);
        return;
    }
    T scale = static_cast<T>(1.0 / (1.0 - p));
    for (size_t i = 0; i < n; ++i) din[i] = mask[i] ? dout[i] * scale : T(0);
}

// Mean over valid rows. Throws EmptyPool when no position is valid.
template <typename T>
void mean_pool_forward(const T* in, size_t L, size_t C, const uint8_t* valid, T* out) {
    size_t nv = 0;
    std::fill_n(out, C, T(0));
    for (size_t i = 0; i < L; ++i) {
        if (!valid[i]) continue;
        ++nv;
        const T* row = in + i * C;
        for (size_t j = 0; j < C; ++j) out[j] += row[j];
    }
    if (nv == 0) throw EmptyPoolError("mean_pool over zero valid positions");
    T inv = T(1) / static_cast<T>(nv);
    for (size_t j = 0; j < C; ++j) out[j] *= inv;
}

template <typename T>
void mean_pool_backward(const T* dout, size_t L, size_t C, const uint8_t* valid, T* din) {
    size_t nv = 0;
    for (size_t i = 0; i < L; ++i) nv += valid[i];
    T inv = nv ? T(1) / static_cast<T>(nv) : T(0);
    for (size_t i = 0; i < L; ++i) {
        T* row = din + i * C;
        if (!valid[i]) {
            std::fill_n(row, C, T(0));
        } else {
            for (size_t j = 0; j < C; ++j) row[j] = dout[j] * inv;
        }
    }
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over gathered rows.
// ---------------------------------------------------------------------------

// Vectorizable expf; ~2e-7 relative error, exact enough for f32 training.
void vec_exp(const float* x, float* y, size_t n);
void vec_exp(const double* x, double* y, size_t n);

// Writes softmax(logit_row) into probs_row and returns -log p[target].
template <typename T>
T softmax_xent_row(const T* logits, size_t V, uint32_t target, T* probs) {
    if (target >= V) throw IndexError("target id out of vocabulary");
    T mx = reduce_max(logits, V);
    for (size_t j = 0; j < V; ++j) probs[j] = logits[j] - mx;
    T shifted_target = probs[target];
    vec_exp(probs, probs, V);
    T sum = reduce_sum(probs, V);
    T inv = T(1) / sum;
    for (size_t j = 0; j < V; ++j) probs[j] *= inv;
    return std::log(sum) - shifted_target;
}

// Sum of -log p[target] over S gathered rows; probs filled per row.
template <typename T>
T softmax_xent_rows(const T* logits, size_t S, size_t V, const uint32_t* targets, T* probs) {
    T loss = 0;
    for (size_t s = 0; s < S; ++s)
        loss += softmax_xent_row(logits + s * V, V, targets[s], probs + s * V);
    return loss;
}

// dlogits_row = (probs_row - onehot(target)) * scale
template <typename T>
void softmax_xent_backward_rows(const T* probs, size_t S, size_t V,
                                const uint32_t* targets, T scale, T* dlogits) {
    for (size_t s = 0; s < S; ++s) {
        const T* p = probs + s * V;
        T* d = dlogits + s * V;
        for (size_t j = 0; j < V; ++j) d[j] = p[j] * scale;
        d[targets[s]] -= scale;
    }
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay. Zeroes gradients after the step.
// ---------------------------------------------------------------------------

template <typename T>
void adamw_step(const std::vector<ParamSlot<T>*>& slots, double lr, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    for (ParamSlot<T>* p : slots) {
        // Non-finite gradients poison a zero-product accumulator.
        T poison = 0;
        for (T g : p->grad.data) poison += g * T(0);
        if (!(poison == T(0)))
            throw NonFiniteGradientError("parameter '" + p->name + "'");
    }
    for (ParamSlot<T>* p : slots) {
        p->step_count += 1;
        const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
        const T bc1 = T(1) - static_cast<T>(std::pow(beta1, static_cast<double>(p->step_count)));
        const T bc2 = T(1) - static_cast<T>(std::pow(beta2, static_cast<double>(p->step_count)));
        const T step_lr = static_cast<T>(lr);
        T* w = p->value.ptr();
        T* g = p->grad.ptr();
        T* m = p->adam_m.ptr();
        T* v = p->adam_v.ptr();
        const size_t n = p->size();
        if (p->decay && weight_decay != 0.0) {
            const T shrink = T(1) - static_cast<T>(lr * weight_decay);
            for (size_t i = 0; i < n; ++i) w[i] *= shrink;
        }
        for (size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            T mhat = m[i] / bc1;
            T vhat = v[i] / bc2;
            w[i] -= step_lr * mhat / (std::sqrt(vhat) + static_cast<T>(eps));
            g[i] = T(0);
        }
    }
}

// L2 normalization to the unit sphere.
template <typename T>
T l2_normalize(const T* x, size_t n, T* y) {
    T sq = 0;
    for (size_t i = 0; i < n; ++i) sq += x[i] * x[i];
    T norm = std::sqrt(sq);
    if (!(norm > T(0))) throw ZeroNormEmbeddingError("zero-norm vector");
    T inv = T(1) / norm;
    for (size_t i = 0; i < n; ++i) y[i] = x[i] * inv;
    return norm;
}

template <typename T>
void l2_normalize_backward(const T* y, T norm, const T* dy, size_t n, T* dx) {
    T dot = 0;
    for (size_t i = 0; i < n; ++i) dot += y[i] * dy[i];
    T inv = T(1) / norm;
    for (size_t i = 0; i < n; ++i) dx[i] = (dy[i] - y[i] * dot) * inv;
}

}  // namespace vqseq::nn
