#include "vqseq/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace vqseq {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

uint32_t parse_u32(const std::string& key, const std::string& v) {
    uint32_t out{};
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
    return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    uint64_t out{};
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
    return out;
}

double parse_f64(const std::string& key, const std::string& v) {
    double out{};
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        kv.emplace_back(std::move(key), std::move(value));
    }
    return kv;
}

KeyValues read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str());
}

// ---------------------------------------------------------------------------
// TrainConfig
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (K < 1) throw ConfigError("K must be >= 1");
    if (D < 1) throw ConfigError("D must be >= 1");
    if (embed < 1 || hidden < 1) throw ConfigError("embed/hidden must be >= 1");
    if (L < 1 || L > 0xFFFF) throw ConfigError("L must be in [1, 65535]");
    if (k < 1 || k > 12) throw ConfigError("k must be in [1, 12]");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
    if (gamma <= 0 || gamma >= 1) throw ConfigError("gamma must be in (0, 1)");
    if (beta < 0 || lambda < 0) throw ConfigError("beta and lambda must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (lr <= 0) throw ConfigError("lr must be positive");
    if (optimizer != "AdamW") throw ConfigError("optimizer must be AdamW");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (objective != "base" && objective != "masked")
        throw ConfigError("objective must be 'base' or 'masked'");
    if (p_mask < 0 || p_mask > 1) throw ConfigError("p_mask must be in [0, 1]");
    if (train_frac <= 0 || train_frac > 1) throw ConfigError("train_frac must be in (0, 1]");
    if (entropy_mode != "hard" && entropy_mode != "soft")
        throw ConfigError("entropy_mode must be 'hard' or 'soft'");
}

std::string TrainConfig::echo() const {
    std::ostringstream out;
    out << "K = " << K << '\n';
    out << "D = " << D << '\n';
    out << "embed = " << embed << '\n';
    out << "hidden = " << hidden << '\n';
    out << "L = " << L << '\n';
    out << "k = " << k << '\n';
    out << "dropout = " << format_double(dropout) << '\n';
    out << "gamma = " << format_double(gamma) << '\n';
    out << "beta = " << format_double(beta) << '\n';
    out << "lambda = " << format_double(lambda) << '\n';
    out << "batch = " << batch << '\n';
    out << "epochs = " << epochs << '\n';
    out << "lr = " << format_double(lr) << '\n';
    out << "optimizer = " << optimizer << '\n';
    out << "weight_decay = " << format_double(weight_decay) << '\n';
    out << "seed = " << seed << '\n';
    out << "objective = " << objective << '\n';
    out << "p_mask = " << format_double(p_mask) << '\n';
    out << "train_frac = " << format_double(train_frac) << '\n';
    out << "entropy_mode = " << entropy_mode << '\n';
    return out.str();
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv, bool strict) {
    TrainConfig c;
    for (const auto& [key, value] : kv) {
        if (key == "K") c.K = parse_u32(key, value);
        else if (key == "D") c.D = parse_u32(key, value);
        else if (key == "embed") c.embed = parse_u32(key, value);
        else if (key == "hidden") c.hidden = parse_u32(key, value);
        else if (key == "L") c.L = parse_u32(key, value);
        else if (key == "k") c.k = parse_u32(key, value);
        else if (key == "dropout") c.dropout = parse_f64(key, value);
        else if (key == "gamma") c.gamma = parse_f64(key, value);
        else if (key == "beta") c.beta = parse_f64(key, value);
        else if (key == "lambda") c.lambda = parse_f64(key, value);
        else if (key == "batch") c.batch = parse_u32(key, value);
        else if (key == "epochs") c.epochs = parse_u32(key, value);
        else if (key == "lr") c.lr = parse_f64(key, value);
        else if (key == "optimizer") c.optimizer = value;
        else if (key == "weight_decay") c.weight_decay = parse_f64(key, value);
        else if (key == "seed") c.seed = parse_u64(key, value);
        else if (key == "objective") c.objective = value;
        else if (key == "p_mask") c.p_mask = parse_f64(key, value);
        else if (key == "train_frac") c.train_frac = parse_f64(key, value);
        else if (key == "entropy_mode") c.entropy_mode = value;
        else if (strict) throw ConfigError("unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// SynthConfig
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (genome_len < 1) throw ConfigError("genome_len must be >= 1");
    if (n_lineages < 1) throw ConfigError("n_lineages must be >= 1");
    if (mutations_per_lineage >= genome_len)
        throw ConfigError("mutations_per_lineage must be below genome_len");
    if (reads_per_lineage < 1) throw ConfigError("reads_per_lineage must be >= 1");
    if (read_len_min < 1 || read_len_min > read_len_max)
        throw ConfigError("read length range is invalid");
    if (read_len_max > genome_len)
        throw ConfigError("read_len_max cannot exceed genome_len");
    if (base_error_rate < 0 || base_error_rate >= 1)
        throw ConfigError("base_error_rate must be in [0, 1)");
}

std::string SynthConfig::echo() const {
    std::ostringstream out;
    out << "genome_len = " << genome_len << '\n';
    out << "n_lineages = " << n_lineages << '\n';
    out << "mutations_per_lineage = " << mutations_per_lineage << '\n';
    out << "reads_per_lineage = " << reads_per_lineage << '\n';
    out << "read_len_min = " << read_len_min << '\n';
    out << "read_len_max = " << read_len_max << '\n';
    out << "base_error_rate = " << format_double(base_error_rate) << '\n';
    out << "seed = " << seed << '\n';
    return out.str();
}

SynthConfig SynthConfig::from_key_values(const KeyValues& kv, bool strict) {
    SynthConfig c;
    for (const auto& [key, value] : kv) {
        if (key == "genome_len") c.genome_len = parse_u32(key, value);
        else if (key == "n_lineages") c.n_lineages = parse_u32(key, value);
        else if (key == "mutations_per_lineage") c.mutations_per_lineage = parse_u32(key, value);
        else if (key == "reads_per_lineage") c.reads_per_lineage = parse_u32(key, value);
        else if (key == "read_len_min") c.read_len_min = parse_u32(key, value);
        else if (key == "read_len_max") c.read_len_max = parse_u32(key, value);
        else if (key == "base_error_rate") c.base_error_rate = parse_f64(key, value);
        else if (key == "seed") c.seed = parse_u64(key, value);
        else if (strict) throw ConfigError("unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

}  // namespace vqseq
