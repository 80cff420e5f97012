#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vqseq/common.hpp"
#include "vqseq/vqvae.hpp"

namespace vqseq {

// Flat "key = value" config text. '#' starts a comment.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_config_file(const std::string& path);

std::string format_double(double v);  // shortest exact round-trip

// ---------------------------------------------------------------------------
// Training configuration. Defaults are the full working setup; the echo
// reproduces every effective value and parses back identically.
// ---------------------------------------------------------------------------

struct TrainConfig {
    uint32_t K = 512;       // codebook size
    uint32_t D = 64;        // code dimension
    uint32_t embed = 128;   // token embedding dimension
    uint32_t hidden = 256;  // convolutional hidden dimension
    uint32_t L = 150;       // max token-sequence length
    uint32_t k = 6;         // k-mer size
    double dropout = 0.1;
    double gamma = 0.95;    // EMA decay
    double beta = 0.1;      // commitment weight
    double lambda = 0.003;  // entropy weight
    uint32_t batch = 32;
    uint32_t epochs = 50;
    double lr = 2e-4;
    std::string optimizer = "AdamW";
    double weight_decay = 1e-4;
    uint64_t seed = 42;
    std::string objective = "base";  // base | masked
    double p_mask = 0.2;
    double train_frac = 0.9;
    std::string entropy_mode = "hard";  // hard | soft (differentiable variant)

    void validate() const;
    std::string echo() const;
    uint32_t vocab_size() const { return (1u << (2 * k)) + 3; }
    VqvaeDims dims() const {
        VqvaeDims d;
        d.vocab = vocab_size();
        d.embed = embed;
        d.hidden = hidden;
        d.latent = D;
        d.codebook = K;
        d.max_len = L;
        d.dropout = dropout;
        return d;
    }

    // strict = unknown keys are errors (user config files); the relaxed form
    // reads checkpoint metadata that carries extra bookkeeping keys.
    static TrainConfig from_key_values(const KeyValues& kv, bool strict);

    bool operator==(const TrainConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Synthetic corpus generator configuration.
// ---------------------------------------------------------------------------

struct SynthConfig {
    uint32_t genome_len = 1500;
    uint32_t n_lineages = 10;
    uint32_t mutations_per_lineage = 25;
    uint32_t reads_per_lineage = 2000;
    uint32_t read_len_min = 100;
    uint32_t read_len_max = 200;
    double base_error_rate = 0.005;
    uint64_t seed = 42;

    void validate() const;
    std::string echo() const;
    static SynthConfig from_key_values(const KeyValues& kv, bool strict);
};

}  // namespace vqseq
