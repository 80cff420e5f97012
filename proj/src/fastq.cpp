#include "vqseq/fastq.hpp"

#include <zlib.h>

#include <cctype>
#include <fstream>
#include <sstream>

namespace vqseq {

void QualityConfig::validate() const {
    if (window_len < 1) throw ConfigError("window_len must be >= 1");
    if (min_len < 1) throw ConfigError("min_len must be >= 1");
    if (leading_q < 0 || trailing_q < 0 || window_q < 0)
        throw ConfigError("quality thresholds must be >= 0");
}

namespace {

bool get_line(std::istream& in, std::string& line) {
    if (!std::getline(in, line)) return false;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
}

bool valid_base(char c) {
    return c == 'A' || c == 'C' || c == 'G' || c == 'T' || c == 'N';
}

}  // namespace

std::vector<QualityRead> parse_fastq(std::istream& in) {
    std::vector<QualityRead> reads;
    std::string header, bases, plus, quals;
    size_t rec = 0;
    while (get_line(in, header)) {
        if (header.empty() && at_eof(in)) break;  // tolerate a trailing blank line
        ++rec;
        auto fail = [&](const std::string& what) {
            throw ParseError("record " + std::to_string(rec) + ": " + what);
        };
        if (header.empty() || header[0] != '@') fail("expected '@' header line");
        if (!get_line(in, bases)) fail("truncated record (missing sequence line)");
        if (!get_line(in, plus)) fail("truncated record (missing '+' line)");
        if (plus.empty() || plus[0] != '+') fail("expected '+' separator line");
        if (!get_line(in, quals)) fail("truncated record (missing quality line)");
        if (bases.size() != quals.size())
            fail("sequence length " + std::to_string(bases.size()) +
                 " != quality length " + std::to_string(quals.size()));

        QualityRead r;
        r.id = header.substr(1);
        r.bases.reserve(bases.size());
        for (char c : bases) {
            char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            if (!valid_base(u)) fail(std::string("invalid base character '") + c + "'");
            r.bases.push_back(u);
        }
        r.quals.reserve(quals.size());
        for (char c : quals) {
            int q = static_cast<unsigned char>(c) - 33;  // Phred+33 only
            if (q < 0 || q > 93) fail("quality character out of Phred+33 range");
            r.quals.push_back(static_cast<uint8_t>(q));
        }
        reads.push_back(std::move(r));
    }
    return reads;
}

void write_fastq(std::ostream& out, const std::vector<QualityRead>& reads) {
    for (const auto& r : reads) {
        out << '@' << r.id << '\n' << r.bases << "\n+\n";
        for (uint8_t q : r.quals) out << static_cast<char>(q + 33);
        out << '\n';
    }
    if (!out) throw IoError("FASTQ write failed");
}

std::vector<QualityRead> read_fastq_file(const std::string& path) {
    {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw IoError("cannot open " + path);
    }
    // gzFile reads both plain and gzip-compressed input; the magic bytes
    // decide.
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw IoError("cannot open " + path);
    std::string content;
    char buf[1 << 16];
    int n;
    while ((n = gzread(gz, buf, sizeof(buf))) > 0) content.append(buf, static_cast<size_t>(n));
    bool bad = n < 0;
    gzclose(gz);
    if (bad) throw IoError("gzip read failed for " + path);
    std::istringstream in(content);
    return parse_fastq(in);
}

void write_fastq_file(const std::string& path, const std::vector<QualityRead>& reads) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);
    write_fastq(out, reads);
}

std::optional<QualityRead> quality_trim(const QualityRead& read, const QualityConfig& cfg) {
    cfg.validate();
    const auto& q = read.quals;
    size_t b = 0, e = q.size();

    // LEADING
    while (b < e && q[b] < cfg.leading_q) ++b;
    // TRAILING
    while (e > b && q[e - 1] < cfg.trailing_q) --e;
    // SLIDINGWINDOW: full windows scanned from the 5' end of the surviving
    // span; cut just before the first window whose mean drops below the
    // threshold, then strip trailing bases below the threshold.
    if (e - b >= cfg.window_len) {
        double sum = 0.0;
        for (size_t i = b; i < b + cfg.window_len; ++i) sum += q[i];
        for (size_t start = b;; ++start) {
            if (sum / static_cast<double>(cfg.window_len) < cfg.window_q) {
                e = start;
                while (e > b && q[e - 1] < cfg.window_q) --e;
                break;
            }
            if (start + cfg.window_len >= e) break;
            sum += q[start + cfg.window_len];
            sum -= q[start];
        }
    }
    // MINLEN
    if (e - b < cfg.min_len) return std::nullopt;

    QualityRead out;
    out.id = read.id;
    out.bases = read.bases.substr(b, e - b);
    out.quals.assign(q.begin() + static_cast<long>(b), q.begin() + static_cast<long>(e));
    return out;
}

QcStats qc_summary(const std::vector<QualityRead>& before,
                   const std::vector<QualityRead>& after) {
    QcStats s;
    s.reads_in = before.size();
    s.reads_kept = after.size();
    double sum_before = 0.0, sum_after = 0.0;
    size_t n_before = 0, n_after = 0;
    for (const auto& r : before) {
        for (uint8_t v : r.quals) sum_before += v;
        n_before += r.quals.size();
    }
    for (const auto& r : after) {
        for (uint8_t v : r.quals) sum_after += v;
        n_after += r.quals.size();
        s.length_histogram[r.bases.size()] += 1;
    }
    s.mean_quality_before = n_before ? sum_before / static_cast<double>(n_before) : 0.0;
    s.mean_quality_after = n_after ? sum_after / static_cast<double>(n_after) : 0.0;
    return s;
}

void write_qc_stats(std::ostream& out, const QcStats& stats) {
    out << "reads_in\t" << stats.reads_in << '\n';
    out << "reads_kept\t" << stats.reads_kept << '\n';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", stats.mean_quality_before);
    out << "mean_quality_before\t" << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.6f", stats.mean_quality_after);
    out << "mean_quality_after\t" << buf << '\n';
    for (const auto& [len, count] : stats.length_histogram)
        out << "length_histogram." << len << '\t' << count << '\n';
    if (!out) throw IoError("QC stats write failed");
}

}  // namespace vqseq
