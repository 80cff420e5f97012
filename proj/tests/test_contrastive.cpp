#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "vqseq/contrastive.hpp"

using namespace vqseq;

namespace {

TokenSequence make_seq(size_t n_valid, size_t L = 150) {
    TokenSequence s;
    s.id = "c";
    s.ids.assign(L, 4096);
    s.valid.assign(L, 0);
    for (size_t i = 0; i < n_valid; ++i) {
        s.ids[i] = static_cast<uint32_t>((i * 37) % 4096);
        s.valid[i] = 1;
    }
    return s;
}

constexpr uint32_t kMaskId = 4098;

}  // namespace

TEST_CASE("augment with zero probabilities is the identity") {
    TokenSequence x = make_seq(80);
    AugmentConfig cfg;
    cfg.mask_prob = 0.0;
    cfg.dropout_prob = 0.0;
    StreamRng rng(1);
    AugmentedView v = augment(x, cfg, kMaskId, rng);
    CHECK(v.ids == x.ids);
    for (uint8_t z : v.zero_rows) CHECK(z == 0);
}

TEST_CASE("augment with mask_prob one masks every valid token") {
    TokenSequence x = make_seq(60);
    AugmentConfig cfg;
    cfg.mask_prob = 1.0;
    cfg.dropout_prob = 0.0;
    StreamRng rng(2);
    AugmentedView v = augment(x, cfg, kMaskId, rng);
    for (size_t i = 0; i < x.ids.size(); ++i) {
        if (x.valid[i])
            CHECK(v.ids[i] == kMaskId);
        else
            CHECK(v.ids[i] == x.ids[i]);  // PAD untouched
    }
}

TEST_CASE("augment masks about 15% of valid positions in expectation") {
    TokenSequence x = make_seq(100);
    AugmentConfig cfg;  // defaults 0.15 / 0.10
    size_t masked = 0, dropped = 0, draws = 0;
    for (int t = 0; t < 1000; ++t) {
        StreamRng rng(stream_seed(9, Stream::augment, t));
        AugmentedView v = augment(x, cfg, kMaskId, rng);
        for (size_t i = 0; i < 100; ++i) {
            masked += (v.ids[i] == kMaskId);
            dropped += v.zero_rows[i];
            ++draws;
        }
    }
    double mask_rate = static_cast<double>(masked) / draws;
    double drop_rate = static_cast<double>(dropped) / draws;
    CHECK(std::fabs(mask_rate - 0.15) < 0.01);  // 1e5 draws, +-2% of n would be coarser
    CHECK(std::fabs(drop_rate - 0.10) < 0.01);
}

TEST_CASE("projection head output is unit-norm with the configured dimension") {
    for (size_t dp : {64u, 128u}) {
        ProjectionHead<double> head;
        head.init(64, dp, 11);
        std::vector<double> pooled(64);
        StreamRng rng(3);
        for (auto& v : pooled) v = rng.uniform() - 0.5;
        ContrastiveEmbedding<double> emb;
        head_forward(head, pooled, emb);
        CHECK(emb.normalized.size() == dp);
        double norm = 0;
        for (double v : emb.normalized) norm += v * v;
        CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-6);
    }
}

TEST_CASE("single valid position with an identity-like head points along z_e") {
    ProjectionHead<double> head;
    head.init(4, 4, 0);
    // make the head the identity: l1 = I (ReLU passes positives), l2 = I
    std::fill(head.l1_w.value.data.begin(), head.l1_w.value.data.end(), 0.0);
    std::fill(head.l2_w.value.data.begin(), head.l2_w.value.data.end(), 0.0);
    for (size_t i = 0; i < 4; ++i) {
        head.l1_w.value.data[i * 4 + i] = 1.0;
        head.l2_w.value.data[i * 4 + i] = 1.0;
    }
    std::vector<double> pooled = {0.3, 0.1, 0.4, 0.2};  // positive entries
    ContrastiveEmbedding<double> emb;
    head_forward(head, pooled, emb);
    double scale = emb.normalized[0] / pooled[0];
    for (size_t i = 0; i < 4; ++i)
        CHECK(emb.normalized[i] == doctest::Approx(pooled[i] * scale));
}

TEST_CASE("projection head gradient check (params and input)") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        ProjectionHead<double> head;
        head.init(6, 5, 100 + seed);
        StreamRng rng(stream_seed(seed, Stream::test, 40));
        std::vector<double> pooled(6), w(5);
        for (auto& v : pooled) v = rng.uniform() * 2 - 1;
        for (auto& v : w) v = rng.uniform() * 2 - 1;

        ContrastiveEmbedding<double> emb;
        auto loss = [&] {
            head_forward(head, pooled, emb);
            double s = 0;
            for (size_t i = 0; i < 5; ++i) s += w[i] * emb.normalized[i];
            return s;
        };
        // keep away from ReLU kinks
        loss();
        bool near_kink = false;
        for (double v : emb.pre_relu) near_kink |= std::fabs(v) < 1e-3;
        if (near_kink) continue;

        for (auto* slot : head.slots()) slot->grad.zero();
        std::vector<double> dpooled(6, 0.0);
        head_backward(head, emb, w.data(), dpooled.data());

        CHECK(gradcheck::check_gradient(pooled.data(), 6, dpooled.data(), loss).max_rel_err <
              1e-4);
        for (auto* slot : head.slots()) {
            auto res = gradcheck::check_gradient(slot->value.ptr(), slot->size(),
                                                 slot->grad.ptr(), loss);
            INFO("slot ", slot->name);
            CHECK(res.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("info_nce closed forms") {
    // N=1: the denominator holds only the positive, loss exactly 0
    std::vector<double> two = {1, 0, 0, 1};
    CHECK(info_nce<double>(two.data(), 2, 2, 0.5, nullptr) == doctest::Approx(0.0));

    // N=2, all four embeddings identical: ln 3
    std::vector<double> same(4 * 3);
    for (int i = 0; i < 4; ++i) {
        same[i * 3 + 0] = 1.0;
        same[i * 3 + 1] = 0.0;
        same[i * 3 + 2] = 0.0;
    }
    CHECK(info_nce<double>(same.data(), 4, 3, 0.5, nullptr) ==
          doctest::Approx(std::log(3.0)).epsilon(1e-9));

    // N=2, positives aligned, negatives orthogonal: ln(1 + 2 e^-2) at tau 0.5
    std::vector<double> ortho = {
        1, 0, 0, 0,   // v0 (view 1, seq 0)
        0, 1, 0, 0,   // v1 (view 1, seq 1)
        1, 0, 0, 0,   // v2 = positive of v0
        0, 1, 0, 0,   // v3 = positive of v1
    };
    CHECK(info_nce<double>(ortho.data(), 4, 4, 0.5, nullptr) ==
          doctest::Approx(std::log(1.0 + 2.0 * std::exp(-2.0))).epsilon(1e-9));

    CHECK_THROWS_AS(info_nce<double>(same.data(), 0, 3, 0.5, nullptr), EmptyBatchError);
}

TEST_CASE("identical batches give exactly ln(2N-1)") {
    for (size_t n : {2u, 4u, 8u}) {
        std::vector<double> v(2 * n * 5, 0.0);
        for (size_t i = 0; i < 2 * n; ++i) v[i * 5 + 2] = 1.0;
        CHECK(info_nce<double>(v.data(), 2 * n, 5, 0.5, nullptr) ==
              doctest::Approx(std::log(2.0 * n - 1.0)).epsilon(1e-9));
    }
}

TEST_CASE("info_nce is nonnegative and permutation-equivariant") {
    StreamRng rng(17);
    const size_t n = 6, dim = 8;
    std::vector<double> v(2 * n * dim);
    for (auto& x : v) x = rng.uniform() * 2 - 1;
    for (size_t i = 0; i < 2 * n; ++i) {
        double norm = 0;
        for (size_t d = 0; d < dim; ++d) norm += v[i * dim + d] * v[i * dim + d];
        norm = std::sqrt(norm);
        for (size_t d = 0; d < dim; ++d) v[i * dim + d] /= norm;
    }
    double base = info_nce<double>(v.data(), 2 * n, dim, 0.5, nullptr);
    CHECK(base >= 0.0);

    // permute sequences consistently in both views
    std::vector<size_t> perm = {3, 0, 5, 1, 4, 2};
    std::vector<double> pv(2 * n * dim);
    for (size_t i = 0; i < n; ++i) {
        std::copy_n(v.data() + perm[i] * dim, dim, pv.data() + i * dim);
        std::copy_n(v.data() + (n + perm[i]) * dim, dim, pv.data() + (n + i) * dim);
    }
    double permuted = info_nce<double>(pv.data(), 2 * n, dim, 0.5, nullptr);
    CHECK(std::fabs(permuted - base) <= 1e-6 * std::fabs(base));
}

TEST_CASE("info_nce gradient matches finite differences") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        StreamRng rng(stream_seed(seed, Stream::test, 41));
        const size_t n = 3, dim = 4;
        std::vector<double> v(2 * n * dim);
        for (auto& x : v) x = rng.uniform() * 2 - 1;
        std::vector<double> grad(v.size());
        auto loss = [&] { return info_nce<double>(v.data(), 2 * n, dim, 0.5, nullptr); };
        info_nce<double>(v.data(), 2 * n, dim, 0.5, grad.data());
        auto res = gradcheck::check_gradient(v.data(), v.size(), grad.data(), loss);
        CHECK(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("l2_normalize rejects the zero vector") {
    std::vector<double> zero(4, 0.0), out(4);
    CHECK_THROWS_AS(nn::l2_normalize(zero.data(), 4, out.data()), ZeroNormEmbeddingError);
}

TEST_CASE("embedding table round-trips through the VQEM file") {
    EmbeddingTable table;
    table.dim = 3;
    table.ids = {"a", "bb", "ccc"};
    table.vectors = {1, 0, 0, 0, 1, 0, 0.5f, 0.5f, 0.70710678f};
    std::string path = "vqem_test.vqem";
    write_vqem_file(path, table);
    EmbeddingTable back = read_vqem_file(path);
    CHECK(back.dim == table.dim);
    CHECK(back.ids == table.ids);
    CHECK(back.vectors == table.vectors);
    std::remove(path.c_str());
}
