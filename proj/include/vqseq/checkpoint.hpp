#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vqseq/config.hpp"
#include "vqseq/contrastive.hpp"
#include "vqseq/tensor.hpp"
#include "vqseq/vqvae.hpp"

namespace vqseq {

// "VQWW" container: magic, version, metadata text block, named float32
// tensor records. Save -> load -> save is byte-identical.
struct Checkpoint {
    uint32_t version = 1;
    std::string metadata;
    std::vector<std::pair<std::string, TensorF>> tensors;

    const TensorF* find(const std::string& name) const;
};

void write_vqww_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_vqww_file(const std::string& path);

// Model adapters. The metadata carries the TrainConfig echo plus run
// bookkeeping ("epoch = N"); loading reconstructs the model from it.
Checkpoint model_to_checkpoint(Vqvae<float>& model, const std::string& metadata);
void model_from_checkpoint(Vqvae<float>& model, const Checkpoint& ckpt);

// Convenience: init a model from a checkpoint's embedded config.
struct LoadedModel {
    TrainConfig config;
    uint32_t epoch = 0;
    Vqvae<float> model;
};
LoadedModel load_model_file(const std::string& path);

// Projection-head checkpoints share the container.
Checkpoint head_to_checkpoint(ProjectionHead<float>& head, const std::string& metadata);
void head_from_checkpoint(ProjectionHead<float>& head, const Checkpoint& ckpt);

}  // namespace vqseq
