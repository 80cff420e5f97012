#include "vqseq/synth.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace vqseq {

namespace {

constexpr char kBases[4] = {'A', 'C', 'G', 'T'};

int base_index(char c) {
    switch (c) {
        case 'A': return 0;
        case 'C': return 1;
        case 'G': return 2;
        case 'T': return 3;
        default: return -1;
    }
}

// Two adjacent integer Phred values mixed so the implied error probability
// matches the configured rate in expectation.
struct QualityModel {
    int q_low = 40, q_high = 40;
    double p_low = 1.0;  // probability of drawing q_low
    double err_low = 0.0, err_high = 0.0;

    explicit QualityModel(double rate) {
        if (rate <= 0.0) {
            q_low = q_high = 40;
            p_low = 1.0;
            err_low = err_high = 0.0;
            return;
        }
        double exact_q = -10.0 * std::log10(rate);
        int q0 = static_cast<int>(std::floor(exact_q));
        q0 = std::max(2, std::min(q0, 41));
        q_low = q0;
        q_high = q0 + 1;
        err_low = std::pow(10.0, -q_low / 10.0);
        err_high = std::pow(10.0, -q_high / 10.0);
        // err_low >= rate >= err_high
        p_low = (rate - err_high) / (err_low - err_high);
        p_low = std::max(0.0, std::min(1.0, p_low));
    }
};

}  // namespace

SynthResult generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    StreamRng rng(stream_seed(cfg.seed, Stream::synth));
    SynthResult out;

    std::string root(cfg.genome_len, 'A');
    for (auto& c : root) c = kBases[rng.uniform_index(4)];

    out.genomes.reserve(cfg.n_lineages);
    for (uint32_t l = 0; l < cfg.n_lineages; ++l) {
        std::string genome = root;
        std::unordered_set<uint32_t> mutated;
        while (mutated.size() < cfg.mutations_per_lineage) {
            auto pos = static_cast<uint32_t>(rng.uniform_index(cfg.genome_len));
            if (!mutated.insert(pos).second) continue;
            int old = base_index(genome[pos]);
            int shift = 1 + static_cast<int>(rng.uniform_index(3));
            genome[pos] = kBases[(old + shift) % 4];
        }
        out.genomes.push_back(std::move(genome));
    }

    QualityModel qm(cfg.base_error_rate);
    const size_t total = static_cast<size_t>(cfg.n_lineages) * cfg.reads_per_lineage;
    out.reads.reserve(total);
    out.lineage_of_read.reserve(total);
    size_t read_index = 0;
    for (uint32_t l = 0; l < cfg.n_lineages; ++l) {
        const std::string& genome = out.genomes[l];
        for (uint32_t r = 0; r < cfg.reads_per_lineage; ++r) {
            size_t len = cfg.read_len_min +
                         static_cast<size_t>(rng.uniform_index(cfg.read_len_max - cfg.read_len_min + 1));
            size_t start = static_cast<size_t>(rng.uniform_index(genome.size() - len + 1));
            QualityRead read;
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "r%06zu", read_index++);
            read.id = idbuf;
            read.bases = genome.substr(start, len);
            read.quals.resize(len);
            for (size_t i = 0; i < len; ++i) {
                int q;
                double err;
                if (cfg.base_error_rate <= 0.0) {
                    q = qm.q_low;
                    err = 0.0;
                } else if (rng.bernoulli(qm.p_low)) {
                    q = qm.q_low;
                    err = qm.err_low;
                } else {
                    q = qm.q_high;
                    err = qm.err_high;
                }
                read.quals[i] = static_cast<uint8_t>(q);
                if (err > 0.0 && rng.bernoulli(err)) {
                    int old = base_index(read.bases[i]);
                    int shift = 1 + static_cast<int>(rng.uniform_index(3));
                    read.bases[i] = kBases[(old + shift) % 4];
                }
            }
            out.reads.push_back(std::move(read));
            out.lineage_of_read.push_back(l);
        }
    }
    return out;
}

void write_truth_file(const std::string& path, const SynthResult& synth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);
    for (size_t i = 0; i < synth.reads.size(); ++i)
        out << synth.reads[i].id << '\t' << synth.lineage_of_read[i] << '\n';
    if (!out) throw IoError("truth file write failed");
}

std::unordered_map<std::string, uint32_t> read_truth_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::unordered_map<std::string, uint32_t> truth;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("truth file line " + std::to_string(lineno) + ": missing tab");
        std::string id = line.substr(0, tab);
        uint32_t lineage = 0;
        std::istringstream ss(line.substr(tab + 1));
        if (!(ss >> lineage))
            throw ParseError("truth file line " + std::to_string(lineno) + ": bad lineage id");
        truth[id] = lineage;
    }
    return truth;
}

}  // namespace vqseq
