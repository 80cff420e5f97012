#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "vqseq/fastq.hpp"

using namespace vqseq;

namespace {

QualityRead make_read(const std::string& bases, const std::vector<uint8_t>& quals,
                      const std::string& id = "r") {
    return QualityRead{id, bases, quals};
}

std::string random_bases(StreamRng& rng, size_t n, bool with_n = false) {
    static const char alphabet[] = "ACGTN";
    std::string s(n, 'A');
    for (auto& c : s) c = alphabet[rng.uniform_index(with_n ? 5 : 4)];
    return s;
}

}  // namespace

TEST_CASE("parse_fastq decodes Phred+33 records") {
    std::istringstream in("@r1\nACGT\n+\nIIII\n");
    auto reads = parse_fastq(in);
    REQUIRE(reads.size() == 1);
    CHECK(reads[0].id == "r1");
    CHECK(reads[0].bases == "ACGT");
    CHECK(reads[0].quals == std::vector<uint8_t>{40, 40, 40, 40});
}

TEST_CASE("parse_fastq on an empty stream yields no records") {
    std::istringstream in("");
    CHECK(parse_fastq(in).empty());
}

TEST_CASE("parse_fastq reports the failing record index") {
    std::istringstream in("@r1\nACGT\n+\nIII\n");  // 3 quals for 4 bases
    CHECK_THROWS_WITH_AS(parse_fastq(in), doctest::Contains("record 1"), ParseError);

    std::istringstream in2("@a\nAC\n+\nII\nXbad\nAC\n+\nII\n");
    CHECK_THROWS_WITH_AS(parse_fastq(in2), doctest::Contains("record 2"), ParseError);
}

TEST_CASE("parse_fastq rejects bad sentinels, bases and quality characters") {
    std::istringstream bad_plus("@r\nAC\n-\nII\n");
    CHECK_THROWS_AS(parse_fastq(bad_plus), ParseError);
    std::istringstream bad_base("@r\nAXC\n+\nIII\n");
    CHECK_THROWS_AS(parse_fastq(bad_base), ParseError);
    std::istringstream bad_qual("@r\nAC\n+\nI\x1f");
    CHECK_THROWS_AS(parse_fastq(bad_qual), ParseError);
    std::istringstream truncated("@r\nAC\n+\n");
    CHECK_THROWS_AS(parse_fastq(truncated), ParseError);
}

TEST_CASE("parse_fastq uppercases and keeps N") {
    std::istringstream in("@r\nacgn\n+\nIIII\n");
    auto reads = parse_fastq(in);
    CHECK(reads[0].bases == "ACGN");
}

TEST_CASE("parse/serialize round-trip preserves records") {
    StreamRng rng(7);
    std::vector<QualityRead> reads;
    for (int i = 0; i < 50; ++i) {
        size_t n = 1 + rng.uniform_index(200);
        QualityRead r;
        r.id = "read_" + std::to_string(i) + " extra description";
        r.bases = random_bases(rng, n, true);
        r.quals.resize(n);
        for (auto& q : r.quals) q = static_cast<uint8_t>(rng.uniform_index(94));
        reads.push_back(std::move(r));
    }
    std::ostringstream out;
    write_fastq(out, reads);
    std::istringstream in(out.str());
    auto parsed = parse_fastq(in);
    CHECK(parsed == reads);
}

TEST_CASE("quality_trim leaves clean reads alone") {
    QualityConfig cfg;
    auto r = make_read(std::string(100, 'A'), std::vector<uint8_t>(100, 40));
    auto out = quality_trim(r, cfg);
    REQUIRE(out.has_value());
    CHECK(out->bases == r.bases);
    CHECK(out->quals == r.quals);
}

TEST_CASE("quality_trim discards short reads (MINLEN)") {
    QualityConfig cfg;
    auto r = make_read(std::string(20, 'A'), std::vector<uint8_t>(20, 40));
    CHECK_FALSE(quality_trim(r, cfg).has_value());
}

TEST_CASE("quality_trim LEADING drops low-quality 5' bases") {
    QualityConfig cfg;
    StreamRng rng(3);
    std::vector<uint8_t> quals = {2, 2};
    quals.insert(quals.end(), 50, 40);
    auto r = make_read(random_bases(rng, 52), quals);
    auto out = quality_trim(r, cfg);
    REQUIRE(out.has_value());
    CHECK(out->bases.size() == 50);
    CHECK(out->bases == r.bases.substr(2));
}

TEST_CASE("quality_trim TRAILING drops low-quality 3' bases") {
    QualityConfig cfg;
    std::vector<uint8_t> quals(50, 40);
    quals.push_back(1);
    quals.push_back(2);
    auto r = make_read(std::string(52, 'C'), quals);
    auto out = quality_trim(r, cfg);
    REQUIRE(out.has_value());
    CHECK(out->bases.size() == 50);
}

TEST_CASE("quality_trim sliding window cuts before the first bad window") {
    QualityConfig cfg;  // window 4, mean threshold 15
    // 40 good bases, then a collapse to quality 4 (trailing threshold 3 keeps
    // them; the window rule must cut)
    std::vector<uint8_t> quals(40, 40);
    quals.insert(quals.end(), 20, 4);
    auto r = make_read(std::string(60, 'G'), quals);
    auto out = quality_trim(r, cfg);
    REQUIRE(out.has_value());
    // windows at the boundary: {40,40,40,4} mean 31, {40,40,4,4} mean 22,
    // {40,4,4,4} mean 13 < 15 -> first failing window starts at index 39,
    // so the read is truncated to the 39 leading bases
    CHECK(out->bases.size() == 39);
    for (uint8_t q : out->quals) CHECK(q == 40);
}

TEST_CASE("quality_trim window rule strips sub-threshold trailing bases after the cut") {
    QualityConfig cfg;
    // q[0..39] = 40, q[40] = 10, q[41..43] = 17, q[44..47] = 4:
    // {10,17,17,17} has mean 15.25 (passes) while {17,17,17,4} has mean
    // 13.75, so the cut lands at index 41 leaving the quality-10 base last;
    // the post-cut strip must remove it as well.
    std::vector<uint8_t> quals(40, 40);
    quals.push_back(10);
    quals.insert(quals.end(), 3, 17);
    quals.insert(quals.end(), 4, 4);
    auto r = make_read(std::string(48, 'T'), quals);
    auto out = quality_trim(r, cfg);
    REQUIRE(out.has_value());
    CHECK(out->bases.size() == 40);
    for (uint8_t q : out->quals) CHECK(q >= 15);
}

TEST_CASE("quality_trim properties on fuzzed reads") {
    QualityConfig cfg;
    StreamRng rng(11);
    size_t kept = 0;
    for (int iter = 0; iter < 2000; ++iter) {
        size_t n = 1 + rng.uniform_index(120);
        QualityRead r;
        r.id = "f" + std::to_string(iter);
        r.bases = random_bases(rng, n, true);
        r.quals.resize(n);
        for (auto& q : r.quals) q = static_cast<uint8_t>(rng.uniform_index(45));
        auto out = quality_trim(r, cfg);
        if (!out) continue;
        ++kept;
        // substring property
        CHECK(out->bases.size() >= cfg.min_len);
        CHECK(r.bases.find(out->bases) != std::string::npos);
        // idempotence
        auto again = quality_trim(*out, cfg);
        REQUIRE(again.has_value());
        CHECK(again->bases == out->bases);
        CHECK(again->quals == out->quals);
    }
    CHECK(kept > 0);
}

TEST_CASE("qc_summary counts and means") {
    CHECK(qc_summary({}, {}).reads_in == 0);
    CHECK(qc_summary({}, {}).reads_kept == 0);

    std::vector<QualityRead> before;
    for (int i = 0; i < 10; ++i)
        before.push_back(make_read("ACG", {10, 20, 30}, "b" + std::to_string(i)));
    std::vector<QualityRead> after(before.begin(), before.begin() + 7);
    QcStats s = qc_summary(before, after);
    CHECK(s.reads_in == 10);
    CHECK(s.reads_kept == 7);
    CHECK(s.mean_quality_before == doctest::Approx(20.0));
    CHECK(s.mean_quality_after == doctest::Approx(20.0));
    CHECK(s.length_histogram.at(3) == 7);
}

TEST_CASE("gzip-compressed FASTQ is read transparently") {
    std::string dir = "fastq_gz_test_dir";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::string plain = dir + "/reads.fastq";
    std::vector<QualityRead> reads = {make_read("ACGTACGT", std::vector<uint8_t>(8, 35), "z1")};
    write_fastq_file(plain, reads);
    REQUIRE(std::system(("gzip -k -f " + plain).c_str()) == 0);
    auto via_gz = read_fastq_file(plain + ".gz");
    CHECK(via_gz == reads);
    std::filesystem::remove_all(dir);
}
