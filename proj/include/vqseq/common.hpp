#pragma once

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <mutex>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace vqseq {

// ---------------------------------------------------------------------------
// Errors. Each condition named in a module contract gets its own type so
// callers and tests can catch them precisely.
// ---------------------------------------------------------------------------

#define VQSEQ_ERROR_TYPE(Name)                                  \
    struct Name : std::runtime_error {                          \
        explicit Name(const std::string& msg)                   \
            : std::runtime_error(std::string(#Name ": ") + msg) {} \
    }

VQSEQ_ERROR_TYPE(ParseError);
VQSEQ_ERROR_TYPE(NonAcgtError);
VQSEQ_ERROR_TYPE(TooShortError);
VQSEQ_ERROR_TYPE(InconsistentOverlapError);
VQSEQ_ERROR_TYPE(ShapeError);
VQSEQ_ERROR_TYPE(IndexError);
VQSEQ_ERROR_TYPE(EmptyPoolError);
VQSEQ_ERROR_TYPE(NonFiniteGradientError);
VQSEQ_ERROR_TYPE(EmptyBatchError);
VQSEQ_ERROR_TYPE(EmptyMaskSetError);
VQSEQ_ERROR_TYPE(EmptyDatasetError);
VQSEQ_ERROR_TYPE(TooFewPointsError);
VQSEQ_ERROR_TYPE(UndefinedMetricError);
VQSEQ_ERROR_TYPE(CoincidentCentroidsError);
VQSEQ_ERROR_TYPE(ZeroNormEmbeddingError);
VQSEQ_ERROR_TYPE(ConfigMismatchError);
VQSEQ_ERROR_TYPE(ConfigError);
VQSEQ_ERROR_TYPE(IoError);
VQSEQ_ERROR_TYPE(TrainingDivergedError);

#undef VQSEQ_ERROR_TYPE

// ---------------------------------------------------------------------------
// Seed derivation and random streams.
//
// Every source of randomness in the pipeline draws from its own StreamRng
// whose seed is derived from (user seed, fixed purpose tag, indices such as
// epoch or sequence number). Results are therefore reproducible across runs
// and independent of how work is distributed over threads, and resuming a
// training run can re-derive the streams for any epoch.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a) { return splitmix64(a); }

template <typename... Rest>
uint64_t mix_seed(uint64_t a, Rest... rest) {
    return splitmix64(a ^ mix_seed(static_cast<uint64_t>(rest)...));
}

// Stream purpose tags. Values are part of the reproducibility contract:
// renumbering them changes every derived stream.
enum class Stream : uint64_t {
    init = 1,
    codebook = 2,
    shuffle = 3,
    dropout = 4,
    mask = 5,
    augment = 6,
    split = 7,
    synth = 8,
    kmeans = 9,
    subsample = 10,
    test = 11,
};

inline uint64_t stream_seed(uint64_t seed, Stream s) {
    return mix_seed(seed, static_cast<uint64_t>(s));
}
template <typename... Idx>
uint64_t stream_seed(uint64_t seed, Stream s, Idx... idx) {
    return mix_seed(seed, static_cast<uint64_t>(s), static_cast<uint64_t>(idx)...);
}

// mt19937_64 plus explicit samplers. The standard distributions are
// implementation-defined, so the samplers below are spelled out to keep
// streams stable across standard libraries.
class StreamRng {
public:
    explicit StreamRng(uint64_t seed) : gen_(seed) {}

    uint64_t next() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Rejection sampling, no modulo bias.
    uint64_t uniform_index(uint64_t n) {
        if (n == 0) throw IndexError("uniform_index: n must be positive");
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = gen_();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; the second deviate is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Fisher-Yates with the explicit sampler above.
template <typename T>
void shuffle_inplace(std::vector<T>& v, StreamRng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_index(i));
        std::swap(v[i - 1], v[j]);
    }
}

// ---------------------------------------------------------------------------
// Little-endian binary IO helpers for the VQTK/VQWW/VQEM containers.
// ---------------------------------------------------------------------------

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw IoError("write failed");
}

inline void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>(v >> 8)};
    put_bytes(os, b, 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    put_bytes(os, b, 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    put_bytes(os, b, 8);
}

inline void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

inline void get_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) throw IoError("unexpected end of stream");
}

inline bool at_eof(std::istream& is) {
    return is.peek() == std::char_traits<char>::eof();
}

inline uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    get_bytes(is, b, 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    get_bytes(is, b, 4);
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    get_bytes(is, b, 8);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline float get_f32(std::istream& is) {
    uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

// ---------------------------------------------------------------------------
// Minimal persistent thread pool.
//
// run(count, fn) executes fn(i, worker) for i in [0, count): each index is
// handled by exactly one worker and writes only its own outputs, so results
// do not depend on the worker count. The calling thread participates as
// worker 0. worker < size() indexes per-worker scratch.
// ---------------------------------------------------------------------------

class ThreadPool {
public:
    explicit ThreadPool(unsigned workers = std::thread::hardware_concurrency());
    ~ThreadPool();

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    unsigned size() const { return static_cast<unsigned>(threads_.size()) + 1; }

    void run(size_t count, const std::function<void(size_t, unsigned)>& fn);

private:
    void worker_loop(unsigned worker_id);

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable work_cv_;
    std::condition_variable done_cv_;
    const std::function<void(size_t, unsigned)>* job_ = nullptr;
    size_t job_count_ = 0;
    std::atomic<size_t> next_{0};
    size_t pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

}  // namespace vqseq
