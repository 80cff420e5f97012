#pragma once

#include <cstdint>
#include <vector>

#include "vqseq/common.hpp"
#include "vqseq/nn.hpp"
#include "vqseq/tensor.hpp"

namespace vqseq {

// Architecture dimensions. Defaults are the full working configuration;
// tests shrink them.
struct VqvaeDims {
    uint32_t vocab = 4099;
    uint32_t embed = 128;
    uint32_t hidden = 256;
    uint32_t latent = 64;     // D: code dimension
    uint32_t codebook = 512;  // K: number of codes
    uint32_t max_len = 150;   // L
    double dropout = 0.1;

    bool operator==(const VqvaeDims&) const = default;
};

// Codebook with EMA statistics. Codes are updated exclusively through
// ema_update; they carry no gradient state.
template <typename T>
struct Codebook {
    size_t K = 0, D = 0;
    T decay = static_cast<T>(0.95);
    TensorT<T> vectors;  // K x D
    TensorT<T> counts;   // K
    TensorT<T> sums;     // K x D

    void init(size_t K_, size_t D_, T decay_, StreamRng& rng) {
        K = K_;
        D = D_;
        decay = decay_;
        vectors = TensorT<T>({K, D});
        counts = TensorT<T>({K});
        sums = TensorT<T>({K, D});
        T scale = T(1) / std::sqrt(static_cast<T>(D));
        for (auto& v : vectors.data) v = static_cast<T>(rng.normal()) * scale;
        std::fill(counts.data.begin(), counts.data.end(), T(1));
        sums.data = vectors.data;
    }
};

// Slot indices, in checkpoint/reduction order.
enum SlotIx : size_t {
    kEmbed = 0,
    kEncConv1W, kEncConv1B, kEncLn1G, kEncLn1B,
    kEncConv2W, kEncConv2B, kEncLn2G, kEncLn2B,
    kEncProjW, kEncProjB,
    kDecConv1W, kDecConv1B, kDecLn1G, kDecLn1B,
    kDecConv2W, kDecConv2B, kDecLn2G, kDecLn2B,
    kDecOutW, kDecOutB,
    kNumSlots
};

template <typename T>
struct Vqvae {
    VqvaeDims dims;
    std::vector<nn::ParamSlot<T>> params;  // kNumSlots entries
    Codebook<T> codebook;

    std::vector<nn::ParamSlot<T>*> slots() {
        std::vector<nn::ParamSlot<T>*> out;
        out.reserve(params.size());
        for (auto& p : params) out.push_back(&p);
        return out;
    }

    nn::ParamSlot<T>& slot(SlotIx ix) { return params[ix]; }
    const nn::ParamSlot<T>& slot(SlotIx ix) const { return params[ix]; }

    void init(const VqvaeDims& d, uint64_t seed) {
        dims = d;
        const size_t V = d.vocab, E = d.embed, H = d.hidden, D = d.latent;
        params.assign(kNumSlots, {});
        auto cfg = [&](SlotIx ix, const char* name, std::vector<size_t> shape, bool decay) {
            params[ix].configure(name, std::move(shape), decay);
        };
        cfg(kEmbed, "encoder.embed", {V, E}, true);
        cfg(kEncConv1W, "encoder.conv1.w", {3, E, H}, true);
        cfg(kEncConv1B, "encoder.conv1.b", {H}, false);
        cfg(kEncLn1G, "encoder.ln1.gain", {H}, false);
        cfg(kEncLn1B, "encoder.ln1.shift", {H}, false);
        cfg(kEncConv2W, "encoder.conv2.w", {3, H, H}, true);
        cfg(kEncConv2B, "encoder.conv2.b", {H}, false);
        cfg(kEncLn2G, "encoder.ln2.gain", {H}, false);
        cfg(kEncLn2B, "encoder.ln2.shift", {H}, false);
        cfg(kEncProjW, "encoder.proj.w", {H, D}, true);
        cfg(kEncProjB, "encoder.proj.b", {D}, false);
        cfg(kDecConv1W, "decoder.conv1.w", {3, D, H}, true);
        cfg(kDecConv1B, "decoder.conv1.b", {H}, false);
        cfg(kDecLn1G, "decoder.ln1.gain", {H}, false);
        cfg(kDecLn1B, "decoder.ln1.shift", {H}, false);
        cfg(kDecConv2W, "decoder.conv2.w", {3, H, H}, true);
        cfg(kDecConv2B, "decoder.conv2.b", {H}, false);
        cfg(kDecLn2G, "decoder.ln2.gain", {H}, false);
        cfg(kDecLn2B, "decoder.ln2.shift", {H}, false);
        cfg(kDecOutW, "decoder.out.w", {H, V}, true);
        cfg(kDecOutB, "decoder.out.b", {V}, false);

        for (size_t ix = 0; ix < kNumSlots; ++ix) {
            StreamRng rng(stream_seed(seed, Stream::init, ix));
            auto& p = params[ix];
            if (ix == kEmbed) {
                nn::init_normal(p, 0.02, rng);
            } else if (p.value.shape.size() == 3) {  // conv weights
                size_t taps = p.value.shape[0], cin = p.value.shape[1], cout = p.value.shape[2];
                nn::init_uniform_fan(p, taps * cin, taps * cout, rng);
            } else if (p.value.shape.size() == 2) {  // linear weights
                nn::init_uniform_fan(p, p.value.shape[0], p.value.shape[1], rng);
            } else if (p.name.find(".gain") != std::string::npos) {
                nn::init_constant(p, T(1));
            } else {
                nn::init_constant(p, T(0));
            }
        }
        StreamRng book_rng(stream_seed(seed, Stream::codebook));
        codebook.init(d.codebook, d.latent, T(0.95), book_rng);
    }
};

// Continuous + quantized latents for one sequence.
template <typename T>
struct LatentSequence {
    TensorT<T> z_e;                    // L x D
    TensorT<T> z_q;                    // L x D, PAD rows zero
    std::vector<uint32_t> assignments; // L, K = PAD sentinel
    std::vector<uint8_t> valid;
};

template <typename T>
struct LossBreakdown {
    T total = 0;
    T recon = 0;
    T commit = 0;
    T entropy = 0;
    std::vector<size_t> batch_usage;  // K hard-assignment counts
};

// ---------------------------------------------------------------------------
// Per-sequence workspace holding every activation the backward pass needs.
// One instance per worker thread; reused across sequences.
// ---------------------------------------------------------------------------

template <typename T>
struct VqvaeWorkspace {
    // current sequence
    std::vector<uint32_t> ids;
    std::vector<uint8_t> valid;
    std::vector<uint8_t> zero_rows;  // token-dropout augmentation; empty = off

    // encoder stashes
    TensorT<T> emb, cols1, c1, ln1, do1, r1, cols2, c2, ln2, do2, r2, z_e;
    TensorT<T> mean1, rstd1, mean2, rstd2;
    std::vector<uint8_t> dmask1, dmask2;

    // quantizer
    std::vector<uint32_t> assign;
    TensorT<T> z_q;

    // decoder stashes
    TensorT<T> qcols1, qc1, qln1, qdo1, qr1, qcols2, qc2, qln2, qdo2, qr2;
    TensorT<T> qmean1, qrstd1, qmean2, qrstd2;
    std::vector<uint8_t> dmask3, dmask4;

    // scored output rows (compact)
    std::vector<uint32_t> rows, row_targets;
    TensorT<T> gathered;     // S x H inputs to the output projection
    TensorT<T> logits_rows;  // S x V
    TensorT<T> probs_rows;   // S x V; reused as dlogits in backward

    // gradient scratch
    TensorT<T> ga, gb, gcols, g_ze, g_emb;

    VqvaeDims dims;

    void ensure(const VqvaeDims& d) {
        if (dims == d && emb.numel()) return;
        dims = d;
        const size_t L = d.max_len, E = d.embed, H = d.hidden, D = d.latent, V = d.vocab;
        ids.assign(L, 0);
        valid.assign(L, 0);
        zero_rows.clear();
        emb = TensorT<T>({L, E});
        cols1 = TensorT<T>({L, 3 * E});
        c1 = ln1 = do1 = r1 = TensorT<T>({L, H});
        cols2 = TensorT<T>({L, 3 * H});
        c2 = ln2 = do2 = r2 = TensorT<T>({L, H});
        z_e = TensorT<T>({L, D});
        mean1 = rstd1 = mean2 = rstd2 = TensorT<T>({L});
        dmask1.assign(L * H, 1);
        dmask2.assign(L * H, 1);
        assign.assign(L, 0);
        z_q = TensorT<T>({L, D});
        qcols1 = TensorT<T>({L, 3 * D});
        qc1 = qln1 = qdo1 = qr1 = TensorT<T>({L, H});
        qcols2 = TensorT<T>({L, 3 * H});
        qc2 = qln2 = qdo2 = qr2 = TensorT<T>({L, H});
        qmean1 = qrstd1 = qmean2 = qrstd2 = TensorT<T>({L});
        dmask3.assign(L * H, 1);
        dmask4.assign(L * H, 1);
        rows.reserve(L);
        row_targets.reserve(L);
        gathered = TensorT<T>({L, H});
        logits_rows = TensorT<T>({L, V});
        probs_rows = TensorT<T>({L, V});
        ga = TensorT<T>({L, H});
        gb = TensorT<T>({L, H});
        gcols = TensorT<T>({L, 3 * H});
        g_ze = TensorT<T>({L, D});
        g_emb = TensorT<T>({L, E});
    }

    size_t n_valid() const {
        size_t n = 0;
        for (uint8_t v : valid) n += v;
        return n;
    }
};

// Per-sequence parameter-gradient accumulator, reduced in fixed order after
// a batch so results do not depend on the worker count.
template <typename T>
struct GradBuffer {
    std::vector<std::vector<T>> bufs;

    // with_embed=false leaves the embedding slot empty: the training loop
    // keeps per-sequence embedding gradients in their compact [L x E] form
    // and scatters them during the reduction instead.
    void init(Vqvae<T>& model, bool with_embed = true) {
        bufs.resize(kNumSlots);
        for (size_t i = 0; i < kNumSlots; ++i) {
            size_t n = (i == kEmbed && !with_embed) ? 0 : model.params[i].size();
            bufs[i].assign(n, T(0));
        }
    }
    void zero() {
        for (auto& b : bufs) std::fill(b.begin(), b.end(), T(0));
    }
    // The conv/linear weight gradients are written with beta=0 GEMMs, so only
    // the loop-accumulated slots (embedding, biases, layer-norm affines) need
    // clearing between sequences.
    void zero_accumulated(const Vqvae<T>& model) {
        for (size_t ix = 0; ix < kNumSlots; ++ix) {
            if (ix == kEmbed || model.params[ix].value.shape.size() == 1)
                std::fill(bufs[ix].begin(), bufs[ix].end(), T(0));
        }
    }
    T* grad(SlotIx ix) { return bufs[ix].data(); }
};

// ---------------------------------------------------------------------------
// Forward pieces.
// ---------------------------------------------------------------------------

// Encoder: embed -> conv -> LN -> dropout -> ReLU -> conv -> LN -> dropout
// -> ReLU -> linear. Fills ws.emb .. ws.z_e from ws.ids/ws.valid.
template <typename T>
void encode(Vqvae<T>& m, VqvaeWorkspace<T>& ws, bool train, StreamRng& rng) {
    ws.ensure(m.dims);
    const size_t L = m.dims.max_len, E = m.dims.embed, H = m.dims.hidden, D = m.dims.latent;
    nn::embedding_forward(m.slot(kEmbed).value.ptr(), m.dims.vocab, E,
                          ws.ids.data(), L, ws.emb.ptr());
    if (!ws.zero_rows.empty()) {
        for (size_t i = 0; i < L; ++i)
            if (ws.zero_rows[i]) std::fill_n(ws.emb.ptr() + i * E, E, T(0));
    }
    nn::conv1d_forward(ws.emb.ptr(), L, E, m.slot(kEncConv1W).value.ptr(),
                       m.slot(kEncConv1B).value.ptr(), H, ws.c1.ptr(), ws.cols1.ptr());
    nn::layernorm_forward(ws.c1.ptr(), L, H, m.slot(kEncLn1G).value.ptr(),
                          m.slot(kEncLn1B).value.ptr(), ws.ln1.ptr(),
                          ws.mean1.ptr(), ws.rstd1.ptr());
    nn::dropout_forward(ws.ln1.ptr(), L * H, m.dims.dropout, train, rng,
                        ws.do1.ptr(), ws.dmask1.data());
    nn::relu_forward(ws.do1.ptr(), L * H, ws.r1.ptr());
    nn::conv1d_forward(ws.r1.ptr(), L, H, m.slot(kEncConv2W).value.ptr(),
                       m.slot(kEncConv2B).value.ptr(), H, ws.c2.ptr(), ws.cols2.ptr());
    nn::layernorm_forward(ws.c2.ptr(), L, H, m.slot(kEncLn2G).value.ptr(),
                          m.slot(kEncLn2B).value.ptr(), ws.ln2.ptr(),
                          ws.mean2.ptr(), ws.rstd2.ptr());
    nn::dropout_forward(ws.ln2.ptr(), L * H, m.dims.dropout, train, rng,
                        ws.do2.ptr(), ws.dmask2.data());
    nn::relu_forward(ws.do2.ptr(), L * H, ws.r2.ptr());
    nn::linear_forward(ws.r2.ptr(), L, H, m.slot(kEncProjW).value.ptr(),
                       m.slot(kEncProjB).value.ptr(), D, ws.z_e.ptr());
}

// Nearest code per valid position (squared Euclidean, lowest index wins
// ties). PAD positions get the K sentinel and a zero z_q row, which is also
// the decoder input there.
//
// Distances are screened as ||e_k||^2 - 2<z, e_k> via one GEMM; every code
// whose score falls inside a margin around the minimum (wide enough to cover
// the working-precision error of the GEMM form) is re-ranked with the exact
// sequential double-precision sum, so the winner always agrees with a
// brute-force double-precision scan.
template <typename T>
void quantize(const Codebook<T>& book, const T* z_e, const uint8_t* valid, size_t L,
              uint32_t* assign, T* z_q) {
    const size_t K = book.K, D = book.D;
    const T* codes = book.vectors.ptr();

    thread_local std::vector<T> neg2_codes_t, norms, scores;
    neg2_codes_t.resize(D * K);
    norms.resize(K);
    scores.resize(L * K);
    for (size_t k = 0; k < K; ++k) {
        const T* e = codes + k * D;
        norms[k] = nn::reduce_dot(e, e, D);
        for (size_t d = 0; d < D; ++d) neg2_codes_t[d * K + k] = T(-2) * e[d];
    }
    nn::matmul_nn(L, K, D, z_e, neg2_codes_t.data(), scores.data(), false);

    T norm_scale = 0;
    for (size_t k = 0; k < K; ++k) norm_scale = std::max(norm_scale, std::fabs(norms[k]));

    for (size_t i = 0; i < L; ++i) {
        if (!valid[i]) {
            assign[i] = static_cast<uint32_t>(K);
            std::fill_n(z_q + i * D, D, T(0));
            continue;
        }
        const T* row = scores.data() + i * K;
        size_t best = 0;
        T best_score = row[0] + norms[0];
        for (size_t k = 1; k < K; ++k) {
            T s = row[k] + norms[k];
            if (s < best_score) {
                best_score = s;
                best = k;
            }
        }
        // margin far above the float error of the score form
        const T eps = static_cast<T>(1e-3) * (T(1) + std::fabs(best_score) + norm_scale);
        const T* z = z_e + i * D;
        double best_exact = 0;
        bool have_exact = false;
        size_t winner = best;
        for (size_t k = 0; k < K; ++k) {
            if (row[k] + norms[k] > best_score + eps) continue;
            double dist = 0;
            for (size_t d = 0; d < D; ++d) {
                double diff = static_cast<double>(z[d]) - static_cast<double>(codes[k * D + d]);
                dist += diff * diff;
            }
            if (!have_exact || dist < best_exact) {
                best_exact = dist;
                winner = k;
                have_exact = true;
            }
        }
        assign[i] = static_cast<uint32_t>(winner);
        std::copy_n(codes + winner * D, D, z_q + i * D);
    }
}

template <typename T>
void quantize(const Codebook<T>& book, VqvaeWorkspace<T>& ws) {
    quantize(book, ws.z_e.ptr(), ws.valid.data(), ws.dims.max_len,
             ws.assign.data(), ws.z_q.ptr());
}

// Decoder trunk (mirrors the encoder) up to the pre-projection activations.
template <typename T>
void decode_trunk(Vqvae<T>& m, VqvaeWorkspace<T>& ws, bool train, StreamRng& rng) {
    const size_t L = m.dims.max_len, H = m.dims.hidden, D = m.dims.latent;
    nn::conv1d_forward(ws.z_q.ptr(), L, D, m.slot(kDecConv1W).value.ptr(),
                       m.slot(kDecConv1B).value.ptr(), H, ws.qc1.ptr(), ws.qcols1.ptr());
    nn::layernorm_forward(ws.qc1.ptr(), L, H, m.slot(kDecLn1G).value.ptr(),
                          m.slot(kDecLn1B).value.ptr(), ws.qln1.ptr(),
                          ws.qmean1.ptr(), ws.qrstd1.ptr());
    nn::dropout_forward(ws.qln1.ptr(), L * H, m.dims.dropout, train, rng,
                        ws.qdo1.ptr(), ws.dmask3.data());
    nn::relu_forward(ws.qdo1.ptr(), L * H, ws.qr1.ptr());
    nn::conv1d_forward(ws.qr1.ptr(), L, H, m.slot(kDecConv2W).value.ptr(),
                       m.slot(kDecConv2B).value.ptr(), H, ws.qc2.ptr(), ws.qcols2.ptr());
    nn::layernorm_forward(ws.qc2.ptr(), L, H, m.slot(kDecLn2G).value.ptr(),
                          m.slot(kDecLn2B).value.ptr(), ws.qln2.ptr(),
                          ws.qmean2.ptr(), ws.qrstd2.ptr());
    nn::dropout_forward(ws.qln2.ptr(), L * H, m.dims.dropout, train, rng,
                        ws.qdo2.ptr(), ws.dmask4.data());
    nn::relu_forward(ws.qdo2.ptr(), L * H, ws.qr2.ptr());
}

// Output projection restricted to ws.rows (the positions the loss scores).
template <typename T>
void decode_rows(Vqvae<T>& m, VqvaeWorkspace<T>& ws, bool train, StreamRng& rng) {
    decode_trunk(m, ws, train, rng);
    const size_t H = m.dims.hidden, V = m.dims.vocab;
    const size_t S = ws.rows.size();
    for (size_t s = 0; s < S; ++s)
        std::copy_n(ws.qr2.ptr() + ws.rows[s] * H, H, ws.gathered.ptr() + s * H);
    nn::linear_forward(ws.gathered.ptr(), S, H, m.slot(kDecOutW).value.ptr(),
                       m.slot(kDecOutB).value.ptr(), V, ws.logits_rows.ptr());
}

// Full-length logits (every position, PAD included).
template <typename T>
TensorT<T> decode_full(Vqvae<T>& m, VqvaeWorkspace<T>& ws, bool train, StreamRng& rng) {
    decode_trunk(m, ws, train, rng);
    const size_t L = m.dims.max_len, H = m.dims.hidden, V = m.dims.vocab;
    TensorT<T> logits({L, V});
    nn::linear_forward(ws.qr2.ptr(), L, H, m.slot(kDecOutW).value.ptr(),
                       m.slot(kDecOutB).value.ptr(), V, logits.ptr());
    return logits;
}

// ---------------------------------------------------------------------------
// Backward.
//
// Scales are batch-level: ce_scale multiplies each scored row's dlogits
// (1 / total scored positions in the batch) and commit_scale multiplies the
// commitment pull at each valid position (beta / total valid positions).
// The straight-through estimator routes the decoder-input gradient to z_e
// unchanged at valid positions; the codebook never receives gradients.
// ---------------------------------------------------------------------------

template <typename T>
void encoder_backward(Vqvae<T>& m, VqvaeWorkspace<T>& ws, GradBuffer<T>& gb,
                      bool train, bool acc_w);

// dz_e_extra, when given, is an additional [L x D] gradient on z_e (the
// soft-entropy regularizer path); it is applied at valid positions.
template <typename T>
void backward(Vqvae<T>& m, VqvaeWorkspace<T>& ws, T ce_scale, T commit_scale,
              GradBuffer<T>& gb, bool train = true, const T* dz_e_extra = nullptr) {
    const size_t L = m.dims.max_len, H = m.dims.hidden,
                 D = m.dims.latent, V = m.dims.vocab;
    const size_t S = ws.rows.size();
    const double p = m.dims.dropout;

    // d logits (in place over probs), then the output projection.
    nn::softmax_xent_backward_rows(ws.probs_rows.ptr(), S, V, ws.row_targets.data(),
                                   ce_scale, ws.probs_rows.ptr());
    TensorT<T>& dgathered = ws.logits_rows;  // reuse, [S x H] fits in [S x V]
    nn::linear_backward(ws.probs_rows.ptr(), ws.gathered.ptr(),
                        m.slot(kDecOutW).value.ptr(), S, H, V,
                        dgathered.ptr(), gb.grad(kDecOutW), gb.grad(kDecOutB), false);
    // scatter compact rows back to full length
    ws.ga.zero();
    for (size_t s = 0; s < S; ++s)
        std::copy_n(dgathered.ptr() + s * H, H, ws.ga.ptr() + ws.rows[s] * H);

    // decoder trunk backward: ga -> gb -> ga ...
    nn::relu_backward(ws.ga.ptr(), ws.qdo2.ptr(), L * H, ws.gb.ptr());
    nn::dropout_backward(ws.gb.ptr(), ws.dmask4.data(), L * H, p, train, ws.gb.ptr());
    nn::layernorm_backward(ws.gb.ptr(), ws.qc2.ptr(), m.slot(kDecLn2G).value.ptr(),
                           ws.qmean2.ptr(), ws.qrstd2.ptr(), L, H, ws.ga.ptr(),
                           gb.grad(kDecLn2G), gb.grad(kDecLn2B));
    nn::conv1d_backward(ws.ga.ptr(), ws.qcols2.ptr(), m.slot(kDecConv2W).value.ptr(),
                        L, H, H, ws.gb.ptr(), gb.grad(kDecConv2W), gb.grad(kDecConv2B),
                        ws.gcols.ptr(), false);
    nn::relu_backward(ws.gb.ptr(), ws.qdo1.ptr(), L * H, ws.ga.ptr());
    nn::dropout_backward(ws.ga.ptr(), ws.dmask3.data(), L * H, p, train, ws.ga.ptr());
    nn::layernorm_backward(ws.ga.ptr(), ws.qc1.ptr(), m.slot(kDecLn1G).value.ptr(),
                           ws.qmean1.ptr(), ws.qrstd1.ptr(), L, H, ws.gb.ptr(),
                           gb.grad(kDecLn1G), gb.grad(kDecLn1B));
    // d(decoder input), into g_ze via the straight-through copy
    nn::conv1d_backward(ws.gb.ptr(), ws.qcols1.ptr(), m.slot(kDecConv1W).value.ptr(),
                        L, D, H, ws.g_ze.ptr(), gb.grad(kDecConv1W), gb.grad(kDecConv1B),
                        ws.gcols.ptr(), false);

    // Straight-through: pass the gradient to z_e only where the decoder saw a
    // code; add the commitment pull 2*(z_e - z_q) at valid positions.
    for (size_t i = 0; i < L; ++i) {
        T* g = ws.g_ze.ptr() + i * D;
        if (!ws.valid[i]) {
            std::fill_n(g, D, T(0));
            continue;
        }
        const T* ze = ws.z_e.ptr() + i * D;
        const T* zq = ws.z_q.ptr() + i * D;
        for (size_t d = 0; d < D; ++d) g[d] += commit_scale * T(2) * (ze[d] - zq[d]);
        if (dz_e_extra) {
            const T* extra = dz_e_extra + i * D;
            for (size_t d = 0; d < D; ++d) g[d] += extra[d];
        }
    }

    encoder_backward(m, ws, gb, train, false);
}

// Backward through the encoder alone, consuming ws.g_ze. Used by the full
// model backward and by contrastive fine-tuning with the encoder unfrozen
// (where gradients of several views accumulate, hence acc_w). The embedding
// scatter is skipped when the gradient buffer carries no embedding slot; the
// per-position gradients stay in ws.g_emb for the caller.
template <typename T>
void encoder_backward(Vqvae<T>& m, VqvaeWorkspace<T>& ws, GradBuffer<T>& gb,
                      bool train, bool acc_w) {
    const size_t L = m.dims.max_len, E = m.dims.embed, H = m.dims.hidden,
                 D = m.dims.latent;
    const double p = m.dims.dropout;
    nn::linear_backward(ws.g_ze.ptr(), ws.r2.ptr(), m.slot(kEncProjW).value.ptr(),
                        L, H, D, ws.ga.ptr(), gb.grad(kEncProjW), gb.grad(kEncProjB), acc_w);
    nn::relu_backward(ws.ga.ptr(), ws.do2.ptr(), L * H, ws.gb.ptr());
    nn::dropout_backward(ws.gb.ptr(), ws.dmask2.data(), L * H, p, train, ws.gb.ptr());
    nn::layernorm_backward(ws.gb.ptr(), ws.c2.ptr(), m.slot(kEncLn2G).value.ptr(),
                           ws.mean2.ptr(), ws.rstd2.ptr(), L, H, ws.ga.ptr(),
                           gb.grad(kEncLn2G), gb.grad(kEncLn2B));
    nn::conv1d_backward(ws.ga.ptr(), ws.cols2.ptr(), m.slot(kEncConv2W).value.ptr(),
                        L, H, H, ws.gb.ptr(), gb.grad(kEncConv2W), gb.grad(kEncConv2B),
                        ws.gcols.ptr(), acc_w);
    nn::relu_backward(ws.gb.ptr(), ws.do1.ptr(), L * H, ws.ga.ptr());
    nn::dropout_backward(ws.ga.ptr(), ws.dmask1.data(), L * H, p, train, ws.ga.ptr());
    nn::layernorm_backward(ws.ga.ptr(), ws.c1.ptr(), m.slot(kEncLn1G).value.ptr(),
                           ws.mean1.ptr(), ws.rstd1.ptr(), L, H, ws.gb.ptr(),
                           gb.grad(kEncLn1G), gb.grad(kEncLn1B));
    nn::conv1d_backward(ws.gb.ptr(), ws.cols1.ptr(), m.slot(kEncConv1W).value.ptr(),
                        L, E, H, ws.g_emb.ptr(), gb.grad(kEncConv1W), gb.grad(kEncConv1B),
                        ws.gcols.ptr(), acc_w);
    if (!ws.zero_rows.empty()) {
        for (size_t i = 0; i < L; ++i)
            if (ws.zero_rows[i]) std::fill_n(ws.g_emb.ptr() + i * E, E, T(0));
    }
    if (!gb.bufs[kEmbed].empty())
        nn::embedding_backward(ws.g_emb.ptr(), ws.ids.data(), L, E, gb.grad(kEmbed));
}

// ---------------------------------------------------------------------------
// EMA codebook update (one call per training batch).
// n_k and the per-code sums come from the batch's hard assignments over
// valid positions only.
// ---------------------------------------------------------------------------

inline constexpr double kEmaLaplaceEps = 1e-5;

template <typename T>
void ema_update(Codebook<T>& book, const std::vector<T>& batch_counts,
                const std::vector<T>& batch_sums) {
    const size_t K = book.K, D = book.D;
    if (batch_counts.size() != K || batch_sums.size() != K * D)
        throw ShapeError("ema_update: batch statistics shape mismatch");
    const T g = book.decay;
    T* counts = book.counts.ptr();
    T* sums = book.sums.ptr();
    T* vecs = book.vectors.ptr();
    for (size_t k = 0; k < K; ++k)
        counts[k] = g * counts[k] + (T(1) - g) * batch_counts[k];
    for (size_t i = 0; i < K * D; ++i)
        sums[i] = g * sums[i] + (T(1) - g) * batch_sums[i];
    T total = 0;
    for (size_t k = 0; k < K; ++k) total += counts[k];
    const T eps = static_cast<T>(kEmaLaplaceEps);
    for (size_t k = 0; k < K; ++k) {
        T smoothed = (counts[k] + eps) / (total + static_cast<T>(K) * eps) * total;
        for (size_t d = 0; d < D; ++d) vecs[k * D + d] = sums[k * D + d] / smoothed;
    }
}

// Accumulates one sequence's assignment statistics in sequence order.
template <typename T>
void accumulate_code_stats(const VqvaeWorkspace<T>& ws, size_t K, size_t D,
                           std::vector<T>& counts, std::vector<T>& sums) {
    for (size_t i = 0; i < ws.dims.max_len; ++i) {
        if (!ws.valid[i]) continue;
        uint32_t k = ws.assign[i];
        counts[k] += T(1);
        const T* z = ws.z_e.ptr() + i * D;
        T* dst = sums.data() + static_cast<size_t>(k) * D;
        for (size_t d = 0; d < D; ++d) dst[d] += z[d];
    }
}

// ---------------------------------------------------------------------------
// Loss assembly.
// ---------------------------------------------------------------------------

// Shannon entropy of hard-assignment frequencies; 0 <= H <= ln K.
template <typename T>
T usage_entropy(const std::vector<size_t>& usage) {
    size_t total = 0;
    for (size_t c : usage) total += c;
    if (total == 0) return T(0);
    double h = 0.0;
    for (size_t c : usage) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return static_cast<T>(h);
}

template <typename T>
LossBreakdown<T> assemble_loss(T ce_sum, size_t n_scored, T commit_sum, size_t n_valid,
                               std::vector<size_t> usage, T beta, T lambda) {
    if (n_scored == 0) throw EmptyBatchError("no scored positions in batch");
    if (n_valid == 0) throw EmptyBatchError("no valid positions in batch");
    LossBreakdown<T> lb;
    lb.recon = ce_sum / static_cast<T>(n_scored);
    lb.commit = commit_sum / static_cast<T>(n_valid);
    lb.entropy = usage_entropy<T>(usage);
    lb.total = lb.recon + beta * lb.commit - lambda * lb.entropy;
    lb.batch_usage = std::move(usage);
    return lb;
}

// Spec-level loss over one already-decoded batch: recon from full logits at
// valid positions, commitment from (z_e, z_q), entropy from assignments.
template <typename T>
LossBreakdown<T> compute_loss(const std::vector<const uint32_t*>& targets,
                              const std::vector<const uint8_t*>& valids,
                              const std::vector<const T*>& logits,
                              const std::vector<const T*>& z_e,
                              const std::vector<const T*>& z_q,
                              const std::vector<const uint32_t*>& assignments,
                              size_t L, size_t V, size_t D, size_t K,
                              T beta, T lambda) {
    T ce_sum = 0, commit_sum = 0;
    size_t n_scored = 0, n_valid = 0;
    std::vector<size_t> usage(K, 0);
    std::vector<T> probs(V);
    for (size_t s = 0; s < targets.size(); ++s) {
        for (size_t i = 0; i < L; ++i) {
            if (!valids[s][i]) continue;
            ce_sum += nn::softmax_xent_row(logits[s] + i * V, V, targets[s][i], probs.data());
            ++n_scored;
            ++n_valid;
            const T* ze = z_e[s] + i * D;
            const T* zq = z_q[s] + i * D;
            T dist = 0;
            for (size_t d = 0; d < D; ++d) {
                T diff = ze[d] - zq[d];
                dist += diff * diff;
            }
            commit_sum += dist;
            usage[assignments[s][i]] += 1;
        }
    }
    return assemble_loss(ce_sum, n_scored, commit_sum, n_valid, std::move(usage),
                         beta, lambda);
}

// ---------------------------------------------------------------------------
// Soft-assignment entropy (optional differentiable mode): p_k is the mean
// over valid positions of softmax(-||z_e - e_k||^2). Returns H and, when
// grad_out is non-null, accumulates lambda_scale * dH/dz_e into it.
// ---------------------------------------------------------------------------

template <typename T>
T soft_entropy(const Codebook<T>& book, const std::vector<const T*>& z_e_seqs,
               const std::vector<const uint8_t*>& valid_seqs, size_t L,
               T lambda_scale, std::vector<T*> grad_out) {
    const size_t K = book.K, D = book.D;
    const T* codes = book.vectors.ptr();
    // pass 1: soft assignment probabilities and their mean
    size_t n = 0;
    std::vector<double> p(K, 0.0);
    std::vector<std::vector<T>> q_all(z_e_seqs.size());
    std::vector<T> scores(K);
    for (size_t s = 0; s < z_e_seqs.size(); ++s) {
        q_all[s].assign(L * K, T(0));
        for (size_t i = 0; i < L; ++i) {
            if (!valid_seqs[s][i]) continue;
            const T* z = z_e_seqs[s] + i * D;
            T mx = -std::numeric_limits<T>::max();
            for (size_t k = 0; k < K; ++k) {
                T dist = 0;
                for (size_t d = 0; d < D; ++d) {
                    T diff = z[d] - codes[k * D + d];
                    dist += diff * diff;
                }
                scores[k] = -dist;
                mx = std::max(mx, scores[k]);
            }
            T sum = 0;
            T* q = q_all[s].data() + i * K;
            for (size_t k = 0; k < K; ++k) {
                q[k] = std::exp(scores[k] - mx);
                sum += q[k];
            }
            for (size_t k = 0; k < K; ++k) {
                q[k] /= sum;
                p[k] += q[k];
            }
            ++n;
        }
    }
    if (n == 0) throw EmptyBatchError("soft_entropy over empty batch");
    double h = 0.0;
    for (size_t k = 0; k < K; ++k) {
        p[k] /= static_cast<double>(n);
        if (p[k] > 0) h -= p[k] * std::log(p[k]);
    }
    if (!grad_out.empty()) {
        // a_k = dH/dp_k / n
        std::vector<T> a(K);
        for (size_t k = 0; k < K; ++k)
            a[k] = static_cast<T>(p[k] > 0 ? -(std::log(p[k]) + 1.0) / n : 0.0);
        for (size_t s = 0; s < z_e_seqs.size(); ++s) {
            for (size_t i = 0; i < L; ++i) {
                if (!valid_seqs[s][i]) continue;
                const T* q = q_all[s].data() + i * K;
                T dot = 0;
                for (size_t k = 0; k < K; ++k) dot += a[k] * q[k];
                const T* z = z_e_seqs[s] + i * D;
                T* g = grad_out[s] + i * D;
                for (size_t k = 0; k < K; ++k) {
                    T w = lambda_scale * q[k] * (a[k] - dot) * T(-2);
                    if (w == T(0)) continue;
                    const T* e = codes + k * D;
                    for (size_t d = 0; d < D; ++d) g[d] += w * (z[d] - e[d]);
                }
            }
        }
    }
    return static_cast<T>(h);
}

}  // namespace vqseq
