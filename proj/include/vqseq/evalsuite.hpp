#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vqseq/common.hpp"
#include "vqseq/contrastive.hpp"
#include "vqseq/tokenizer.hpp"
#include "vqseq/vqvae.hpp"

namespace vqseq {

// ---------------------------------------------------------------------------
// Reconstruction quality.
// ---------------------------------------------------------------------------

struct ReconReport {
    double mean_token_acc = 0.0;
    double median_token_acc = 0.0;   // midpoint of the two middle values
    double std_token_acc = 0.0;      // population standard deviation
    double exact_match_rate = 0.0;
    size_t n_sequences = 0;
};

// Eval-mode forward (dropout off), argmax prediction over valid positions.
ReconReport recon_eval(Vqvae<float>& model,
                       const std::vector<const TokenSequence*>& seqs);

// Code usage counts over a dataset's valid positions.
std::vector<size_t> collect_usage(Vqvae<float>& model,
                                  const std::vector<const TokenSequence*>& seqs);

// ---------------------------------------------------------------------------
// Codebook statistics.
// ---------------------------------------------------------------------------

struct CodebookReport {
    size_t total_codes = 0;
    size_t active_codes = 0;
    double utilization = 0.0;
    std::vector<size_t> usage;
    double mean_usage = 0.0;  // over all K codes
    double std_usage = 0.0;
    size_t max_usage = 0;
    double perplexity = 1.0;  // exp of usage entropy
};

CodebookReport codebook_eval(const std::vector<size_t>& usage);

// ---------------------------------------------------------------------------
// k-means and clustering quality indices (double precision throughout).
// ---------------------------------------------------------------------------

struct KmeansResult {
    std::vector<uint32_t> assignments;
    std::vector<double> centroids;  // k x d
    double inertia = 0.0;
};

// k-means++ seeding, Lloyd iterations until max centroid shift < 1e-6 or 300
// rounds, best inertia over restarts. Deterministic given the seed.
KmeansResult kmeans(const std::vector<double>& points, size_t n, size_t d, size_t k,
                    size_t restarts, uint64_t seed);

// Mean silhouette with Euclidean distances. Singleton clusters score 0; a
// degenerate point (a == b == 0) scores 0. Sets larger than subsample_cap are
// subsampled with the given seed.
double silhouette(const std::vector<double>& points, size_t n, size_t d,
                  const std::vector<uint32_t>& assignments,
                  size_t subsample_cap = 5000, uint64_t seed = 0);

double davies_bouldin(const std::vector<double>& points, size_t n, size_t d,
                      const std::vector<uint32_t>& assignments);

struct ChIndex {
    double value = 0.0;
    bool infinite = false;  // zero within-cluster scatter
};

ChIndex calinski_harabasz(const std::vector<double>& points, size_t n, size_t d,
                          const std::vector<uint32_t>& assignments);

double adjusted_rand_index(const std::vector<uint32_t>& a,
                           const std::vector<uint32_t>& b);

// ---------------------------------------------------------------------------
// Full clustering evaluation over an exported embedding table.
// ---------------------------------------------------------------------------

struct ClusterReport {
    std::string provenance;
    size_t n = 0;
    size_t dim = 0;
    size_t k = 0;
    uint64_t seed = 0;
    std::vector<uint32_t> assignments;
    double silhouette = 0.0;
    size_t silhouette_subsample = 0;  // 0 = full set
    double davies_bouldin = 0.0;
    double calinski_harabasz = 0.0;
    bool calinski_harabasz_infinite = false;
    double inertia = 0.0;
    std::optional<double> ari;  // vs. truth labels when available
};

ClusterReport clustering_eval(const EmbeddingTable& embeddings, size_t k, uint64_t seed,
                              const std::string& provenance,
                              const std::vector<uint32_t>* truth_labels = nullptr);

void write_cluster_report(std::ostream& out, const ClusterReport& report);

}  // namespace vqseq
