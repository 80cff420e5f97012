#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vqseq/common.hpp"

namespace vqseq {

// One FASTQ record with Phred+33-decoded qualities.
struct QualityRead {
    std::string id;
    std::string bases;             // uppercase, over {A,C,G,T,N}
    std::vector<uint8_t> quals;    // Phred scores, same length as bases

    bool operator==(const QualityRead&) const = default;
};

// Trimmomatic-style filter settings: LEADING / TRAILING / SLIDINGWINDOW /
// MINLEN.
struct QualityConfig {
    int leading_q = 3;
    int trailing_q = 3;
    size_t window_len = 4;
    double window_q = 15.0;
    size_t min_len = 36;

    void validate() const;
};

struct QcStats {
    size_t reads_in = 0;
    size_t reads_kept = 0;
    double mean_quality_before = 0.0;  // mean Phred over all input bases
    double mean_quality_after = 0.0;   // mean Phred over all kept bases
    std::map<size_t, size_t> length_histogram;  // kept-read lengths
};

// Parses Phred+33 FASTQ (strict 4-line records). Throws ParseError with the
// 1-based record index on malformed input. Bases are uppercased; N is kept.
std::vector<QualityRead> parse_fastq(std::istream& in);

void write_fastq(std::ostream& out, const std::vector<QualityRead>& reads);

// Reads a FASTQ file, inflating transparently when the gzip magic (1F 8B) is
// present.
std::vector<QualityRead> read_fastq_file(const std::string& path);
void write_fastq_file(const std::string& path, const std::vector<QualityRead>& reads);

// Applies, in order: LEADING, TRAILING, SLIDINGWINDOW (truncate just before
// the first window whose mean quality drops below window_q, then drop
// trailing bases below window_q), MINLEN. Returns nullopt when the read is
// discarded.
std::optional<QualityRead> quality_trim(const QualityRead& read, const QualityConfig& cfg);

QcStats qc_summary(const std::vector<QualityRead>& before,
                   const std::vector<QualityRead>& after);

void write_qc_stats(std::ostream& out, const QcStats& stats);

}  // namespace vqseq
