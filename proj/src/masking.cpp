#include "vqseq/masking.hpp"

#include <algorithm>
#include <cmath>

namespace vqseq {

size_t mask_count(double p_mask, size_t n_valid) {
    if (p_mask <= 0.0 || n_valid == 0) return 0;
    auto m = static_cast<size_t>(std::llround(p_mask * static_cast<double>(n_valid)));
    m = std::max<size_t>(m, 1);
    return std::min(m, n_valid);
}

MaskedSequence apply_mask(const TokenSequence& x, double p_mask, uint32_t mask_id,
                          StreamRng& rng) {
    MaskedSequence out;
    out.corrupted_ids = x.ids;
    const size_t nv = x.n_valid();
    const size_t m = mask_count(p_mask, nv);
    if (m == 0) return out;

    // Partial Fisher-Yates over the valid prefix.
    std::vector<uint32_t> idx(nv);
    for (size_t i = 0; i < nv; ++i) idx[i] = static_cast<uint32_t>(i);
    for (size_t i = 0; i < m; ++i) {
        size_t j = i + static_cast<size_t>(rng.uniform_index(nv - i));
        std::swap(idx[i], idx[j]);
    }
    out.masked_positions.assign(idx.begin(), idx.begin() + static_cast<long>(m));
    std::sort(out.masked_positions.begin(), out.masked_positions.end());
    for (uint32_t p : out.masked_positions) out.corrupted_ids[p] = mask_id;
    return out;
}

}  // namespace vqseq
