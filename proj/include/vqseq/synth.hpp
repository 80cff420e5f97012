#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "vqseq/config.hpp"
#include "vqseq/fastq.hpp"

namespace vqseq {

// Synthetic corpus: lineage genomes derived from one random root by distinct
// substitutions, reads sampled uniformly along each lineage with Phred-
// calibrated base errors.
struct SynthResult {
    std::vector<QualityRead> reads;
    std::vector<uint32_t> lineage_of_read;  // parallel to reads
    std::vector<std::string> genomes;       // per lineage
};

SynthResult generate_synthetic(const SynthConfig& cfg);

// Tab-separated "read_id<TAB>lineage_id" lines.
void write_truth_file(const std::string& path, const SynthResult& synth);
std::unordered_map<std::string, uint32_t> read_truth_file(const std::string& path);

}  // namespace vqseq
