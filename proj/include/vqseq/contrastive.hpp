#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqseq/common.hpp"
#include "vqseq/nn.hpp"
#include "vqseq/tokenizer.hpp"

namespace vqseq {

struct AugmentConfig {
    double mask_prob = 0.15;
    double dropout_prob = 0.10;
    double temperature = 0.5;
    uint32_t batch_size = 64;

    void validate() const {
        if (mask_prob < 0 || mask_prob > 1 || dropout_prob < 0 || dropout_prob > 1)
            throw ConfigError("augmentation probabilities must lie in [0, 1]");
        if (temperature <= 0) throw ConfigError("temperature must be positive");
    }
};

// One augmented view: MASK substitutions plus rows to zero after the
// embedding lookup.
struct AugmentedView {
    std::vector<uint32_t> ids;
    std::vector<uint8_t> zero_rows;
};

// Independently per valid position: MASK with mask_prob, then flag for
// embedding zeroing with dropout_prob. Two calls with independent streams
// give the two contrastive views.
AugmentedView augment(const TokenSequence& x, const AugmentConfig& cfg,
                      uint32_t mask_id, StreamRng& rng);

// ---------------------------------------------------------------------------
// 2-layer projection head: linear(D -> D') + ReLU + linear(D' -> D').
// ---------------------------------------------------------------------------

template <typename T>
struct ProjectionHead {
    size_t in_dim = 64, out_dim = 64;
    nn::ParamSlot<T> l1_w, l1_b, l2_w, l2_b;

    std::vector<nn::ParamSlot<T>*> slots() { return {&l1_w, &l1_b, &l2_w, &l2_b}; }

    void init(size_t in, size_t out, uint64_t seed) {
        in_dim = in;
        out_dim = out;
        l1_w.configure("head.l1.w", {in, out}, true);
        l1_b.configure("head.l1.b", {out}, false);
        l2_w.configure("head.l2.w", {out, out}, true);
        l2_b.configure("head.l2.b", {out}, false);
        StreamRng r1(stream_seed(seed, Stream::init, 101));
        nn::init_uniform_fan(l1_w, in, out, r1);
        StreamRng r2(stream_seed(seed, Stream::init, 102));
        nn::init_uniform_fan(l2_w, out, out, r2);
        nn::init_constant(l1_b, T(0));
        nn::init_constant(l2_b, T(0));
    }
};

// Pooled latent -> projected -> unit-normalized embedding, with the
// intermediates the backward pass needs.
template <typename T>
struct ContrastiveEmbedding {
    std::vector<T> pooled;      // D
    std::vector<T> pre_relu;    // D'
    std::vector<T> activated;   // D'
    std::vector<T> projected;   // D'
    std::vector<T> normalized;  // D', unit norm
    T norm = 0;
};

template <typename T>
void head_forward(ProjectionHead<T>& head, const std::vector<T>& pooled,
                  ContrastiveEmbedding<T>& out) {
    if (pooled.size() != head.in_dim) throw ShapeError("pooled dimension mismatch");
    const size_t in = head.in_dim, dp = head.out_dim;
    out.pooled = pooled;
    out.pre_relu.assign(dp, T(0));
    out.activated.assign(dp, T(0));
    out.projected.assign(dp, T(0));
    out.normalized.assign(dp, T(0));
    nn::linear_forward(pooled.data(), 1, in, head.l1_w.value.ptr(),
                       head.l1_b.value.ptr(), dp, out.pre_relu.data());
    nn::relu_forward(out.pre_relu.data(), dp, out.activated.data());
    nn::linear_forward(out.activated.data(), 1, dp, head.l2_w.value.ptr(),
                       head.l2_b.value.ptr(), dp, out.projected.data());
    out.norm = nn::l2_normalize(out.projected.data(), dp, out.normalized.data());
}

// Accumulates parameter gradients; returns the gradient w.r.t. the pooled
// input (needed only when the encoder is unfrozen).
template <typename T>
void head_backward(ProjectionHead<T>& head, const ContrastiveEmbedding<T>& emb,
                   const T* dnormalized, T* dpooled) {
    const size_t in = head.in_dim, dp = head.out_dim;
    std::vector<T> dproj(dp), dact(dp), dpre(dp);
    nn::l2_normalize_backward(emb.normalized.data(), emb.norm, dnormalized, dp, dproj.data());
    nn::linear_backward(dproj.data(), emb.activated.data(), head.l2_w.value.ptr(),
                        1, dp, dp, dact.data(), head.l2_w.grad.ptr(), head.l2_b.grad.ptr());
    nn::relu_backward(dact.data(), emb.pre_relu.data(), dp, dpre.data());
    nn::linear_backward(dpre.data(), emb.pooled.data(), head.l1_w.value.ptr(),
                        1, in, dp, dpooled, head.l1_w.grad.ptr(), head.l1_b.grad.ptr());
}

// ---------------------------------------------------------------------------
// InfoNCE over 2N embeddings laid out [view1 of seq 0..N-1; view2 of seq
// 0..N-1]; the positive of index i is (i + N) mod 2N. Similarity is the
// plain dot product, the self-term is excluded from the denominator, and the
// loss is averaged over all 2N anchors. grad (same layout) may be null.
// ---------------------------------------------------------------------------

template <typename T>
T info_nce(const T* v, size_t two_n, size_t dim, T tau, T* grad) {
    if (two_n == 0) throw EmptyBatchError("info_nce over zero embeddings");
    if (two_n % 2 != 0) throw ShapeError("info_nce needs an even embedding count");
    const size_t n = two_n / 2;
    if (grad) std::fill_n(grad, two_n * dim, T(0));

    std::vector<T> sims(two_n * two_n);
    nn::matmul_nt(two_n, two_n, dim, v, v, sims.data(), false);
    const T inv_tau = T(1) / tau;
    for (auto& s : sims) s *= inv_tau;

    const T anchor_w = T(1) / static_cast<T>(two_n);
    T loss = 0;
    std::vector<T> w(two_n);
    for (size_t i = 0; i < two_n; ++i) {
        const size_t pos = (i + n) % two_n;
        const T* srow = sims.data() + i * two_n;
        T mx = -std::numeric_limits<T>::max();
        for (size_t k = 0; k < two_n; ++k)
            if (k != i) mx = std::max(mx, srow[k]);
        T denom = 0;
        for (size_t k = 0; k < two_n; ++k)
            w[k] = (k == i) ? T(0) : std::exp(srow[k] - mx);
        for (size_t k = 0; k < two_n; ++k) denom += w[k];
        T lse = mx + std::log(denom);
        loss += (lse - srow[pos]) * anchor_w;
        if (grad) {
            const T inv_denom = T(1) / denom;
            const T scale = anchor_w * inv_tau;
            T* gi = grad + i * dim;
            for (size_t k = 0; k < two_n; ++k) {
                if (k == i) continue;
                T wk = w[k] * inv_denom;  // softmax over the denominator terms
                T coef = wk - (k == pos ? T(1) : T(0));
                if (coef == T(0)) continue;
                const T* vk = v + k * dim;
                T* gk = grad + k * dim;
                const T* vi = v + i * dim;
                for (size_t d = 0; d < dim; ++d) {
                    gi[d] += scale * coef * vk[d];
                    gk[d] += scale * coef * vi[d];
                }
            }
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Embedding table export ("VQEM" binary file): unit vectors keyed by record
// id.
// ---------------------------------------------------------------------------

struct EmbeddingTable {
    uint32_t dim = 0;
    std::vector<std::string> ids;
    std::vector<float> vectors;  // row-major [ids.size() x dim]
};

void write_vqem_file(const std::string& path, const EmbeddingTable& table);
EmbeddingTable read_vqem_file(const std::string& path);

}  // namespace vqseq
