#pragma once

#include <string>
#include <vector>

#include "vqseq/checkpoint.hpp"
#include "vqseq/config.hpp"
#include "vqseq/contrastive.hpp"
#include "vqseq/masking.hpp"
#include "vqseq/tokenizer.hpp"
#include "vqseq/vqvae.hpp"

namespace vqseq {

// Seeded shuffle, then the first round(frac * n) indices train and the rest
// test. Disjoint and exhaustive; stable across runs.
std::pair<std::vector<size_t>, std::vector<size_t>>
split_dataset(size_t n, double train_frac, uint64_t seed);

// ---------------------------------------------------------------------------
// VQ-VAE training (base or masked objective).
// ---------------------------------------------------------------------------

struct EpochMetrics {
    uint32_t epoch = 0;
    double total = 0, recon = 0, commit = 0, entropy = 0;
    double perplexity = 1;
    size_t active_codes = 0;
    double utilization = 0;
};

struct TrainResult {
    std::string final_checkpoint;
    std::vector<EpochMetrics> epochs;
    std::vector<size_t> train_idx, test_idx;
};

// Runs the full loop into run_dir (created here; must not already exist):
// metrics.tsv, config.echo.txt, train/test id lists, per-epoch checkpoints
// with last-two retention, ckpt_final.vqww. Pass a checkpoint path to resume.
TrainResult train_vqvae(const TrainConfig& cfg, const TokenCorpus& corpus,
                        const std::string& run_dir,
                        const std::string& resume_checkpoint = {},
                        unsigned threads = 1);

// ---------------------------------------------------------------------------
// Contrastive fine-tuning.
// ---------------------------------------------------------------------------

struct FinetuneOptions {
    uint32_t dprime = 64;
    uint32_t epochs = 10;
    double lr = 1e-4;
    uint32_t batch = 64;
    double weight_decay = 1e-4;
    uint64_t seed = 42;
    double mask_prob = 0.15;
    double dropout_prob = 0.10;
    double temperature = 0.5;
    bool unfreeze_encoder = false;
    std::string pool = "ze";  // ze | zq

    void validate() const;
    std::string echo() const;
};

struct FinetuneResult {
    std::string head_checkpoint;
    std::string model_checkpoint;  // set when the encoder was unfrozen
    std::vector<double> batch_losses;
};

FinetuneResult finetune_contrastive(Vqvae<float>& model, const TrainConfig& base_cfg,
                                    const TokenCorpus& corpus,
                                    const std::vector<size_t>& train_idx,
                                    const FinetuneOptions& opt,
                                    const std::string& run_dir,
                                    unsigned threads = 1);

// ---------------------------------------------------------------------------
// Embedding export and the masked-robustness sweep.
// ---------------------------------------------------------------------------

// Pooled (ze or zq) -> optional projection head -> unit normalization.
EmbeddingTable compute_embeddings(Vqvae<float>& model, ProjectionHead<float>* head,
                                  const TokenCorpus& corpus,
                                  const std::vector<size_t>& idx,
                                  const std::string& pool = "ze");

// Mean accuracy (and mean true-token softmax probability) restricted to the
// masked positions, per fraction; fraction 0 scores all valid positions.
std::vector<MaskSweepPoint> masked_accuracy_sweep(Vqvae<float>& model,
                                                  const TokenCorpus& corpus,
                                                  const std::vector<size_t>& idx,
                                                  const std::vector<double>& fractions,
                                                  uint64_t seed);

// Helpers shared by the CLI and tests.
std::vector<const TokenSequence*> select_records(const TokenCorpus& corpus,
                                                 const std::vector<size_t>& idx);
void write_id_file(const std::string& path, const TokenCorpus& corpus,
                   const std::vector<size_t>& idx);
std::vector<size_t> read_id_file(const std::string& path, const TokenCorpus& corpus);

}  // namespace vqseq
