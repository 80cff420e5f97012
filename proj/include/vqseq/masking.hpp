#pragma once

#include <cstdint>
#include <vector>

#include "vqseq/common.hpp"
#include "vqseq/tokenizer.hpp"
#include "vqseq/vqvae.hpp"

namespace vqseq {

// One corrupted view of a token sequence: MASK substituted at the sampled
// positions, everything else untouched.
struct MaskedSequence {
    std::vector<uint32_t> corrupted_ids;
    std::vector<uint32_t> masked_positions;  // ascending, subset of valid prefix
};

// Number of positions to mask: round(p * n_valid), at least 1 when p > 0 and
// the sequence is nonempty. p == 0 masks nothing (eval sweeps use it).
size_t mask_count(double p_mask, size_t n_valid);

// Uniform sampling without replacement among valid positions; deterministic
// given the rng stream.
MaskedSequence apply_mask(const TokenSequence& x, double p_mask, uint32_t mask_id,
                          StreamRng& rng);

// Per-fraction result of the masked-robustness sweep. The confidence column
// is the mean softmax probability of the true token at the scored positions.
struct MaskSweepPoint {
    double fraction = 0.0;
    double accuracy = 0.0;
    double mean_true_prob = 0.0;
    size_t positions = 0;
};

// Masked-reconstruction loss over one batch: forward pass on the corrupted
// inputs, cross-entropy against the original tokens at the masked positions
// only, commitment and entropy over the whole corrupted pass. Throws
// EmptyMaskSet when no sequence masks anything.
template <typename T>
LossBreakdown<T> masked_loss(Vqvae<T>& model,
                             const std::vector<const TokenSequence*>& originals,
                             const std::vector<const MaskedSequence*>& corrupted,
                             T beta, T lambda, bool train, uint64_t dropout_seed) {
    if (originals.size() != corrupted.size())
        throw ShapeError("masked_loss: batch size mismatch");
    if (originals.empty()) throw EmptyBatchError("masked_loss over empty batch");
    const size_t L = model.dims.max_len;
    VqvaeWorkspace<T> ws;
    ws.ensure(model.dims);

    T ce_sum = 0, commit_sum = 0;
    size_t n_scored = 0, n_valid = 0;
    std::vector<size_t> usage(model.codebook.K, 0);
    for (size_t s = 0; s < originals.size(); ++s) {
        const TokenSequence& orig = *originals[s];
        const MaskedSequence& mask = *corrupted[s];
        std::copy(mask.corrupted_ids.begin(), mask.corrupted_ids.end(), ws.ids.begin());
        std::copy(orig.valid.begin(), orig.valid.end(), ws.valid.begin());
        ws.zero_rows.clear();
        ws.rows.clear();
        ws.row_targets.clear();
        for (uint32_t pos : mask.masked_positions) {
            ws.rows.push_back(pos);
            ws.row_targets.push_back(orig.ids[pos]);
        }
        StreamRng rng(stream_seed(dropout_seed, Stream::dropout, s));
        encode(model, ws, train, rng);
        quantize(model.codebook, ws);
        for (size_t i = 0; i < L; ++i) {
            if (!ws.valid[i]) continue;
            ++n_valid;
            usage[ws.assign[i]] += 1;
            const T* ze = ws.z_e.ptr() + i * model.dims.latent;
            const T* zq = ws.z_q.ptr() + i * model.dims.latent;
            for (size_t d = 0; d < model.dims.latent; ++d) {
                T diff = ze[d] - zq[d];
                commit_sum += diff * diff;
            }
        }
        if (ws.rows.empty()) continue;  // contributes nothing to recon
        decode_rows(model, ws, train, rng);
        ce_sum += nn::softmax_xent_rows(ws.logits_rows.ptr(), ws.rows.size(),
                                        model.dims.vocab, ws.row_targets.data(),
                                        ws.probs_rows.ptr());
        n_scored += ws.rows.size();
    }
    if (n_scored == 0) throw EmptyMaskSetError("no masked positions in the batch");
    return assemble_loss<T>(ce_sum, n_scored, commit_sum, n_valid, std::move(usage),
                            beta, lambda);
}

}  // namespace vqseq
