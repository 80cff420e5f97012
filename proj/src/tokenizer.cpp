#include "vqseq/tokenizer.hpp"

#include <array>
#include <fstream>

namespace vqseq {

void TokenizerConfig::validate() const {
    if (k < 1 || k > 12) throw ConfigError("k must be in [1, 12]");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

namespace {

constexpr std::array<int8_t, 256> make_base_table() {
    std::array<int8_t, 256> t{};
    for (auto& v : t) v = -1;
    t['A'] = 0;
    t['C'] = 1;
    t['G'] = 2;
    t['T'] = 3;
    return t;
}

constexpr auto kBaseCode = make_base_table();
constexpr char kCodeBase[4] = {'A', 'C', 'G', 'T'};

}  // namespace

std::string reverse_complement(std::string_view bases) {
    std::string rc(bases.size(), 'N');
    for (size_t i = 0; i < bases.size(); ++i) {
        int8_t c = kBaseCode[static_cast<unsigned char>(bases[bases.size() - 1 - i])];
        if (c >= 0) rc[i] = kCodeBase[3 - c];
    }
    return rc;
}

uint32_t kmer_to_id(std::string_view kmer, const TokenizerConfig& cfg) {
    if (kmer.size() != cfg.k)
        throw ShapeError("kmer length " + std::to_string(kmer.size()) +
                         " != k=" + std::to_string(cfg.k));
    uint32_t fwd = 0, rev = 0;
    for (size_t i = 0; i < kmer.size(); ++i) {
        int8_t c = kBaseCode[static_cast<unsigned char>(kmer[i])];
        if (c < 0)
            throw NonAcgtError(std::string("character '") + kmer[i] + "' in k-mer");
        fwd = (fwd << 2) | static_cast<uint32_t>(c);
        // reverse complement accumulates from the other end
        rev |= static_cast<uint32_t>(3 - c) << (2 * i);
    }
    return cfg.canonical ? std::min(fwd, rev) : fwd;
}

std::string id_to_kmer(uint32_t id, const TokenizerConfig& cfg) {
    if (id >= cfg.base_vocab()) throw IndexError("token id is not a base k-mer");
    std::string s(cfg.k, 'A');
    for (uint32_t i = 0; i < cfg.k; ++i)
        s[cfg.k - 1 - i] = kCodeBase[(id >> (2 * i)) & 3];
    return s;
}

TokenSequence tokenize(std::string_view bases, const TokenizerConfig& cfg) {
    cfg.validate();
    if (bases.size() < cfg.k)
        throw TooShortError("read of length " + std::to_string(bases.size()) +
                            " is shorter than k=" + std::to_string(cfg.k));
    TokenSequence seq;
    seq.ids.assign(cfg.max_len, cfg.pad_id());
    seq.valid.assign(cfg.max_len, 0);

    const size_t n_kmers = bases.size() - cfg.k + 1;
    const size_t n = std::min<size_t>(n_kmers, cfg.max_len);

    // Rolling encode; a window containing any non-ACGT character maps to UNK.
    const uint32_t mask = cfg.base_vocab() - 1;
    uint32_t fwd = 0;
    size_t run = 0;  // ACGT run length ending at current base
    size_t emitted = 0;
    for (size_t i = 0; i < bases.size() && emitted < n; ++i) {
        int8_t c = kBaseCode[static_cast<unsigned char>(bases[i])];
        if (c < 0) {
            run = 0;
            fwd = 0;
        } else {
            fwd = ((fwd << 2) | static_cast<uint32_t>(c)) & mask;
            ++run;
        }
        if (i + 1 >= cfg.k) {
            uint32_t id;
            if (run >= cfg.k) {
                id = fwd;
                if (cfg.canonical) {
                    uint32_t rev = 0, f = fwd;
                    for (uint32_t j = 0; j < cfg.k; ++j) {
                        rev = (rev << 2) | (3 - (f & 3));
                        f >>= 2;
                    }
                    id = std::min(fwd, rev);
                }
            } else {
                id = cfg.unk_id();
            }
            seq.ids[emitted] = id;
            seq.valid[emitted] = 1;
            ++emitted;
        }
    }
    return seq;
}

std::string detokenize(const TokenSequence& seq, const TokenizerConfig& cfg) {
    cfg.validate();
    size_t n = 0;
    for (size_t i = 0; i < seq.valid.size(); ++i) {
        if (seq.valid[i]) {
            if (i != n) throw ShapeError("valid mask is not a prefix");
            ++n;
        }
    }
    if (n == 0) return {};
    std::string out;
    out.reserve(n + cfg.k - 1);
    for (size_t i = 0; i < n; ++i) {
        uint32_t id = seq.ids[i];
        if (id >= cfg.base_vocab())
            throw InconsistentOverlapError("special token at valid position " +
                                           std::to_string(i));
        std::string kmer = id_to_kmer(id, cfg);
        if (i == 0) {
            out = kmer;
        } else {
            if (out.compare(out.size() - (cfg.k - 1), cfg.k - 1,
                            kmer, 0, cfg.k - 1) != 0)
                throw InconsistentOverlapError(
                    "k-mers at positions " + std::to_string(i - 1) + " and " +
                    std::to_string(i) + " disagree on their shared bases");
            out.push_back(kmer.back());
        }
    }
    return out;
}

namespace {
constexpr char kCorpusMagic[4] = {'V', 'Q', 'T', 'K'};
constexpr uint32_t kCorpusVersion = 1;
}  // namespace

void write_corpus(std::ostream& out, const TokenCorpus& corpus) {
    put_bytes(out, kCorpusMagic, 4);
    put_u32(out, kCorpusVersion);
    put_u32(out, corpus.k);
    put_u32(out, corpus.max_len);
    put_u32(out, corpus.vocab_size);
    for (const auto& rec : corpus.records) {
        if (rec.ids.size() != corpus.max_len)
            throw ShapeError("record '" + rec.id + "' has wrong length");
        if (rec.id.size() > 0xFFFF) throw ShapeError("record id too long");
        put_u16(out, static_cast<uint16_t>(rec.id.size()));
        put_bytes(out, rec.id.data(), rec.id.size());
        put_u16(out, static_cast<uint16_t>(rec.n_valid()));
        for (uint32_t id : rec.ids) put_u32(out, id);
    }
}

TokenCorpus read_corpus(std::istream& in) {
    char magic[4];
    get_bytes(in, magic, 4);
    if (std::memcmp(magic, kCorpusMagic, 4) != 0)
        throw ParseError("not a VQTK corpus file");
    uint32_t version = get_u32(in);
    if (version != kCorpusVersion)
        throw ParseError("unsupported corpus version " + std::to_string(version));
    TokenCorpus corpus;
    corpus.k = get_u32(in);
    corpus.max_len = get_u32(in);
    corpus.vocab_size = get_u32(in);
    while (!at_eof(in)) {
        TokenSequence rec;
        uint16_t id_len = get_u16(in);
        rec.id.resize(id_len);
        if (id_len) get_bytes(in, rec.id.data(), id_len);
        uint16_t n_valid = get_u16(in);
        if (n_valid > corpus.max_len) throw ParseError("n_valid exceeds max_len");
        rec.ids.resize(corpus.max_len);
        rec.valid.assign(corpus.max_len, 0);
        for (uint32_t i = 0; i < corpus.max_len; ++i) {
            rec.ids[i] = get_u32(in);
            if (rec.ids[i] >= corpus.vocab_size)
                throw ParseError("token id out of range in record '" + rec.id + "'");
        }
        for (uint16_t i = 0; i < n_valid; ++i) rec.valid[i] = 1;
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

void write_corpus_file(const std::string& path, const TokenCorpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);
    write_corpus(out, corpus);
    if (!out) throw IoError("corpus write failed");
}

TokenCorpus read_corpus_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return read_corpus(in);
}

}  // namespace vqseq
