#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vqseq/common.hpp"

namespace vqseq {

// k-mer tokenizer settings. The vocabulary is the 4^k base alphabet followed
// by PAD, UNK and MASK.
struct TokenizerConfig {
    uint32_t k = 6;
    uint32_t max_len = 150;   // L: fixed token-sequence length
    bool canonical = false;   // fold each k-mer with its reverse complement

    uint32_t base_vocab() const { return 1u << (2 * k); }
    uint32_t pad_id() const { return base_vocab(); }
    uint32_t unk_id() const { return base_vocab() + 1; }
    uint32_t mask_id() const { return base_vocab() + 2; }
    uint32_t vocab_size() const { return base_vocab() + 3; }

    void validate() const;
};

// Fixed-length token sequence. Valid positions form a prefix; the suffix is
// PAD with valid=false.
struct TokenSequence {
    std::string id;
    std::vector<uint32_t> ids;
    std::vector<uint8_t> valid;

    size_t n_valid() const {
        size_t n = 0;
        for (uint8_t v : valid) n += v;
        return n;
    }
    bool operator==(const TokenSequence&) const = default;
};

// Base-4 positional encoding, A=0 C=1 G=2 T=3, most significant base first.
// Canonical mode returns min(id(kmer), id(reverse_complement(kmer))).
// Throws NonAcgtError on any character outside {A,C,G,T}.
uint32_t kmer_to_id(std::string_view kmer, const TokenizerConfig& cfg);

std::string id_to_kmer(uint32_t id, const TokenizerConfig& cfg);

std::string reverse_complement(std::string_view bases);

// Stride-1 overlapping k-mers, truncated to max_len and right-padded with
// PAD. Windows containing a non-ACGT character become UNK. Throws TooShort
// when the read is shorter than k.
TokenSequence tokenize(std::string_view bases, const TokenizerConfig& cfg);

// Inverse of tokenize for UNK/MASK-free sequences; adjacent k-mers must
// overlap in their k-1 shared bases.
std::string detokenize(const TokenSequence& seq, const TokenizerConfig& cfg);

// Tokenized corpus container ("VQTK" binary file).
struct TokenCorpus {
    uint32_t k = 6;
    uint32_t max_len = 150;
    uint32_t vocab_size = 4099;
    std::vector<TokenSequence> records;
};

void write_corpus(std::ostream& out, const TokenCorpus& corpus);
TokenCorpus read_corpus(std::istream& in);
void write_corpus_file(const std::string& path, const TokenCorpus& corpus);
TokenCorpus read_corpus_file(const std::string& path);

}  // namespace vqseq
