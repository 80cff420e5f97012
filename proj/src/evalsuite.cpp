#include "vqseq/evalsuite.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>

namespace vqseq {

namespace {

double sq_dist(const double* a, const double* b, size_t d) {
    double s = 0;
    for (size_t i = 0; i < d; ++i) {
        double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

// Remaps assignment labels to dense 0..m-1 in order of first appearance and
// returns per-cluster sizes.
std::vector<size_t> cluster_sizes(const std::vector<uint32_t>& assignments,
                                  std::vector<uint32_t>& dense) {
    std::map<uint32_t, uint32_t> remap;
    dense.resize(assignments.size());
    std::vector<size_t> sizes;
    for (size_t i = 0; i < assignments.size(); ++i) {
        auto [it, inserted] = remap.try_emplace(assignments[i],
                                                static_cast<uint32_t>(sizes.size()));
        if (inserted) sizes.push_back(0);
        dense[i] = it->second;
        sizes[it->second] += 1;
    }
    return sizes;
}

uint32_t argmax_row_f32(const float* row, size_t v) {
    uint32_t best = 0;
    float best_val = row[0];
    for (size_t j = 1; j < v; ++j) {
        if (row[j] > best_val) {
            best_val = row[j];
            best = static_cast<uint32_t>(j);
        }
    }
    return best;
}

}  // namespace

ReconReport recon_eval(Vqvae<float>& model, const std::vector<const TokenSequence*>& seqs) {
    if (seqs.empty()) throw EmptyDatasetError("recon_eval over empty dataset");
    const size_t L = model.dims.max_len, V = model.dims.vocab;
    VqvaeWorkspace<float> ws;
    ws.ensure(model.dims);
    StreamRng dummy(0);

    std::vector<double> accs;
    accs.reserve(seqs.size());
    size_t exact = 0;
    for (const TokenSequence* seq : seqs) {
        if (seq->ids.size() != L) throw ShapeError("sequence length mismatch");
        std::copy(seq->ids.begin(), seq->ids.end(), ws.ids.begin());
        std::copy(seq->valid.begin(), seq->valid.end(), ws.valid.begin());
        ws.zero_rows.clear();
        encode(model, ws, false, dummy);
        quantize(model.codebook, ws);
        ws.rows.clear();
        ws.row_targets.clear();
        for (size_t i = 0; i < L; ++i) {
            if (!seq->valid[i]) continue;
            ws.rows.push_back(static_cast<uint32_t>(i));
            ws.row_targets.push_back(seq->ids[i]);
        }
        if (ws.rows.empty()) continue;
        decode_rows(model, ws, false, dummy);
        size_t correct = 0;
        for (size_t s = 0; s < ws.rows.size(); ++s) {
            uint32_t pred = argmax_row_f32(ws.logits_rows.ptr() + s * V, V);
            correct += (pred == ws.row_targets[s]);
        }
        double acc = static_cast<double>(correct) / static_cast<double>(ws.rows.size());
        accs.push_back(acc);
        exact += (correct == ws.rows.size());
    }
    if (accs.empty()) throw EmptyDatasetError("no sequence with valid positions");

    ReconReport rep;
    rep.n_sequences = accs.size();
    double sum = 0;
    for (double a : accs) sum += a;
    rep.mean_token_acc = sum / static_cast<double>(accs.size());
    double var = 0;
    for (double a : accs) var += (a - rep.mean_token_acc) * (a - rep.mean_token_acc);
    rep.std_token_acc = std::sqrt(var / static_cast<double>(accs.size()));
    std::vector<double> sorted = accs;
    std::sort(sorted.begin(), sorted.end());
    size_t m = sorted.size();
    rep.median_token_acc = (m % 2) ? sorted[m / 2]
                                   : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    rep.exact_match_rate = static_cast<double>(exact) / static_cast<double>(accs.size());
    return rep;
}

std::vector<size_t> collect_usage(Vqvae<float>& model,
                                  const std::vector<const TokenSequence*>& seqs) {
    if (seqs.empty()) throw EmptyDatasetError("collect_usage over empty dataset");
    const size_t L = model.dims.max_len;
    VqvaeWorkspace<float> ws;
    ws.ensure(model.dims);
    StreamRng dummy(0);
    std::vector<size_t> usage(model.codebook.K, 0);
    for (const TokenSequence* seq : seqs) {
        std::copy(seq->ids.begin(), seq->ids.end(), ws.ids.begin());
        std::copy(seq->valid.begin(), seq->valid.end(), ws.valid.begin());
        ws.zero_rows.clear();
        encode(model, ws, false, dummy);
        quantize(model.codebook, ws);
        for (size_t i = 0; i < L; ++i)
            if (seq->valid[i]) usage[ws.assign[i]] += 1;
    }
    return usage;
}

CodebookReport codebook_eval(const std::vector<size_t>& usage) {
    CodebookReport rep;
    rep.total_codes = usage.size();
    rep.usage = usage;
    size_t total = 0;
    for (size_t c : usage) {
        total += c;
        if (c > 0) ++rep.active_codes;
        rep.max_usage = std::max(rep.max_usage, c);
    }
    if (total == 0) throw EmptyDatasetError("codebook_eval with zero assignments");
    rep.utilization = static_cast<double>(rep.active_codes) /
                      static_cast<double>(rep.total_codes);
    rep.mean_usage = static_cast<double>(total) / static_cast<double>(rep.total_codes);
    double var = 0;
    for (size_t c : usage) {
        double d = static_cast<double>(c) - rep.mean_usage;
        var += d * d;
    }
    rep.std_usage = std::sqrt(var / static_cast<double>(rep.total_codes));
    double h = 0;
    for (size_t c : usage) {
        if (!c) continue;
        double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    rep.perplexity = std::exp(h);
    return rep;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

namespace {

void assign_nearest(const std::vector<double>& pts, size_t n, size_t d,
                    const std::vector<double>& centroids, size_t k,
                    std::vector<uint32_t>& assign, double* inertia_out) {
    double inertia = 0;
    for (size_t i = 0; i < n; ++i) {
        const double* p = pts.data() + i * d;
        size_t best = 0;
        double best_d = std::numeric_limits<double>::max();
        for (size_t c = 0; c < k; ++c) {
            double dist = sq_dist(p, centroids.data() + c * d, d);
            if (dist < best_d) {
                best_d = dist;
                best = c;
            }
        }
        assign[i] = static_cast<uint32_t>(best);
        inertia += best_d;
    }
    if (inertia_out) *inertia_out = inertia;
}

KmeansResult kmeans_once(const std::vector<double>& pts, size_t n, size_t d, size_t k,
                         StreamRng& rng) {
    std::vector<double> centroids(k * d);
    std::vector<double> min_d(n);

    // k-means++ seeding
    size_t first = static_cast<size_t>(rng.uniform_index(n));
    std::copy_n(pts.data() + first * d, d, centroids.data());
    for (size_t i = 0; i < n; ++i)
        min_d[i] = sq_dist(pts.data() + i * d, centroids.data(), d);
    for (size_t c = 1; c < k; ++c) {
        double total = 0;
        for (double v : min_d) total += v;
        size_t chosen;
        if (total > 0) {
            double u = rng.uniform() * total;
            double acc = 0;
            chosen = n - 1;
            for (size_t i = 0; i < n; ++i) {
                acc += min_d[i];
                if (u < acc) {
                    chosen = i;
                    break;
                }
            }
        } else {
            // all remaining distances zero (duplicates); pick uniformly
            chosen = static_cast<size_t>(rng.uniform_index(n));
        }
        std::copy_n(pts.data() + chosen * d, d, centroids.data() + c * d);
        for (size_t i = 0; i < n; ++i)
            min_d[i] = std::min(min_d[i], sq_dist(pts.data() + i * d,
                                                  centroids.data() + c * d, d));
    }

    KmeansResult res;
    res.assignments.assign(n, 0);
    std::vector<double> next(k * d);
    std::vector<size_t> counts(k);
    for (int iter = 0; iter < 300; ++iter) {
        assign_nearest(pts, n, d, centroids, k, res.assignments, nullptr);
        std::fill(next.begin(), next.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (size_t i = 0; i < n; ++i) {
            const double* p = pts.data() + i * d;
            double* c = next.data() + res.assignments[i] * d;
            for (size_t j = 0; j < d; ++j) c[j] += p[j];
            counts[res.assignments[i]] += 1;
        }
        for (size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // re-seed an empty cluster at the point farthest from its
                // centroid (lowest index on ties)
                size_t far = 0;
                double far_d = -1;
                for (size_t i = 0; i < n; ++i) {
                    double dist = sq_dist(pts.data() + i * d,
                                          centroids.data() + res.assignments[i] * d, d);
                    if (dist > far_d) {
                        far_d = dist;
                        far = i;
                    }
                }
                std::copy_n(pts.data() + far * d, d, next.data() + c * d);
                counts[c] = 1;
                res.assignments[far] = static_cast<uint32_t>(c);
            } else {
                double inv = 1.0 / static_cast<double>(counts[c]);
                for (size_t j = 0; j < d; ++j) next[c * d + j] *= inv;
            }
        }
        double max_shift = 0;
        for (size_t c = 0; c < k; ++c)
            max_shift = std::max(max_shift,
                                 std::sqrt(sq_dist(next.data() + c * d,
                                                   centroids.data() + c * d, d)));
        centroids = next;
        if (max_shift < 1e-6) break;
    }
    assign_nearest(pts, n, d, centroids, k, res.assignments, &res.inertia);
    res.centroids = std::move(centroids);
    return res;
}

}  // namespace

KmeansResult kmeans(const std::vector<double>& points, size_t n, size_t d, size_t k,
                    size_t restarts, uint64_t seed) {
    if (points.size() != n * d) throw ShapeError("kmeans: points size mismatch");
    if (n < k) throw TooFewPointsError("kmeans needs at least k points");
    if (k == 0) throw ConfigError("kmeans needs k >= 1");
    KmeansResult best;
    bool have = false;
    for (size_t r = 0; r < std::max<size_t>(restarts, 1); ++r) {
        StreamRng rng(stream_seed(seed, Stream::kmeans, r));
        KmeansResult res = kmeans_once(points, n, d, k, rng);
        if (!have || res.inertia < best.inertia) {
            best = std::move(res);
            have = true;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Clustering indices
// ---------------------------------------------------------------------------

double silhouette(const std::vector<double>& points, size_t n, size_t d,
                  const std::vector<uint32_t>& assignments,
                  size_t subsample_cap, uint64_t seed) {
    if (assignments.size() != n) throw ShapeError("silhouette: label count mismatch");

    std::vector<size_t> pick(n);
    for (size_t i = 0; i < n; ++i) pick[i] = i;
    if (subsample_cap > 0 && n > subsample_cap) {
        StreamRng rng(stream_seed(seed, Stream::subsample));
        for (size_t i = 0; i < subsample_cap; ++i) {
            size_t j = i + static_cast<size_t>(rng.uniform_index(n - i));
            std::swap(pick[i], pick[j]);
        }
        pick.resize(subsample_cap);
        std::sort(pick.begin(), pick.end());
    }
    const size_t m = pick.size();

    std::vector<uint32_t> dense(m);
    {
        std::vector<uint32_t> sub_labels(m);
        for (size_t i = 0; i < m; ++i) sub_labels[i] = assignments[pick[i]];
        std::vector<uint32_t> tmp;
        auto sizes = cluster_sizes(sub_labels, tmp);
        if (sizes.size() < 2)
            throw UndefinedMetricError("silhouette needs at least 2 clusters");
        dense = tmp;
    }
    uint32_t n_clusters = *std::max_element(dense.begin(), dense.end()) + 1;
    std::vector<size_t> sizes(n_clusters, 0);
    for (uint32_t c : dense) sizes[c] += 1;

    double total = 0;
    std::vector<double> cluster_dist(n_clusters);
    for (size_t i = 0; i < m; ++i) {
        std::fill(cluster_dist.begin(), cluster_dist.end(), 0.0);
        const double* pi = points.data() + pick[i] * d;
        for (size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            cluster_dist[dense[j]] += std::sqrt(sq_dist(pi, points.data() + pick[j] * d, d));
        }
        uint32_t own = dense[i];
        if (sizes[own] <= 1) continue;  // singleton scores 0
        double a = cluster_dist[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::max();
        for (uint32_t c = 0; c < n_clusters; ++c) {
            if (c == own || sizes[c] == 0) continue;
            b = std::min(b, cluster_dist[c] / static_cast<double>(sizes[c]));
        }
        double mx = std::max(a, b);
        total += (mx > 0) ? (b - a) / mx : 0.0;
    }
    return total / static_cast<double>(m);
}

double davies_bouldin(const std::vector<double>& points, size_t n, size_t d,
                      const std::vector<uint32_t>& assignments) {
    if (assignments.size() != n) throw ShapeError("davies_bouldin: label count mismatch");
    std::vector<uint32_t> dense;
    auto sizes = cluster_sizes(assignments, dense);
    const size_t k = sizes.size();
    if (k < 2) throw UndefinedMetricError("davies_bouldin needs at least 2 clusters");

    std::vector<double> centroids(k * d, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* p = points.data() + i * d;
        double* c = centroids.data() + dense[i] * d;
        for (size_t j = 0; j < d; ++j) c[j] += p[j];
    }
    for (size_t c = 0; c < k; ++c)
        for (size_t j = 0; j < d; ++j) centroids[c * d + j] /= static_cast<double>(sizes[c]);

    std::vector<double> scatter(k, 0.0);
    for (size_t i = 0; i < n; ++i)
        scatter[dense[i]] += std::sqrt(sq_dist(points.data() + i * d,
                                               centroids.data() + dense[i] * d, d));
    for (size_t c = 0; c < k; ++c) scatter[c] /= static_cast<double>(sizes[c]);

    double sum = 0;
    for (size_t i = 0; i < k; ++i) {
        double worst = 0;
        for (size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            double sep = std::sqrt(sq_dist(centroids.data() + i * d,
                                           centroids.data() + j * d, d));
            if (sep == 0.0)
                throw CoincidentCentroidsError("clusters " + std::to_string(i) + " and " +
                                               std::to_string(j));
            worst = std::max(worst, (scatter[i] + scatter[j]) / sep);
        }
        sum += worst;
    }
    return sum / static_cast<double>(k);
}

ChIndex calinski_harabasz(const std::vector<double>& points, size_t n, size_t d,
                          const std::vector<uint32_t>& assignments) {
    if (assignments.size() != n) throw ShapeError("calinski_harabasz: label count mismatch");
    std::vector<uint32_t> dense;
    auto sizes = cluster_sizes(assignments, dense);
    const size_t k = sizes.size();
    if (k < 2) throw UndefinedMetricError("calinski_harabasz needs at least 2 clusters");
    if (n <= k) throw TooFewPointsError("calinski_harabasz needs n > k");

    std::vector<double> grand(d, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) grand[j] += points[i * d + j];
    for (size_t j = 0; j < d; ++j) grand[j] /= static_cast<double>(n);

    std::vector<double> centroids(k * d, 0.0);
    for (size_t i = 0; i < n; ++i) {
        double* c = centroids.data() + dense[i] * d;
        for (size_t j = 0; j < d; ++j) c[j] += points[i * d + j];
    }
    for (size_t c = 0; c < k; ++c)
        for (size_t j = 0; j < d; ++j) centroids[c * d + j] /= static_cast<double>(sizes[c]);

    double between = 0, within = 0;
    for (size_t c = 0; c < k; ++c)
        between += static_cast<double>(sizes[c]) *
                   sq_dist(centroids.data() + c * d, grand.data(), d);
    for (size_t i = 0; i < n; ++i)
        within += sq_dist(points.data() + i * d, centroids.data() + dense[i] * d, d);

    ChIndex idx;
    if (within == 0.0) {
        idx.infinite = true;
        idx.value = std::numeric_limits<double>::infinity();
        return idx;
    }
    idx.value = (between / static_cast<double>(k - 1)) /
                (within / static_cast<double>(n - k));
    return idx;
}

double adjusted_rand_index(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b) {
    if (a.size() != b.size()) throw ShapeError("adjusted_rand_index: length mismatch");
    const size_t n = a.size();
    if (n == 0) throw EmptyDatasetError("adjusted_rand_index over empty labels");

    std::vector<uint32_t> da, db;
    auto sa = cluster_sizes(a, da);
    auto sb = cluster_sizes(b, db);
    std::map<std::pair<uint32_t, uint32_t>, size_t> contingency;
    for (size_t i = 0; i < n; ++i) contingency[{da[i], db[i]}] += 1;

    auto comb2 = [](size_t x) {
        return static_cast<double>(x) * static_cast<double>(x ? x - 1 : 0) / 2.0;
    };
    double sum_ij = 0;
    for (const auto& [cell, count] : contingency) sum_ij += comb2(count);
    double sum_a = 0, sum_b = 0;
    for (size_t s : sa) sum_a += comb2(s);
    for (size_t s : sb) sum_b += comb2(s);
    double total_pairs = comb2(n);
    double expected = (total_pairs > 0) ? sum_a * sum_b / total_pairs : 0.0;
    double maximum = 0.5 * (sum_a + sum_b);
    double denom = maximum - expected;
    if (denom == 0.0) return 1.0;  // both partitions trivial and identical
    return (sum_ij - expected) / denom;
}

// ---------------------------------------------------------------------------
// Clustering evaluation entry point.
// ---------------------------------------------------------------------------

ClusterReport clustering_eval(const EmbeddingTable& embeddings, size_t k, uint64_t seed,
                              const std::string& provenance,
                              const std::vector<uint32_t>* truth_labels) {
    const size_t n = embeddings.ids.size(), d = embeddings.dim;
    if (n == 0) throw EmptyDatasetError("clustering_eval over empty embedding table");
    std::vector<double> pts(n * d);
    for (size_t i = 0; i < n * d; ++i) pts[i] = static_cast<double>(embeddings.vectors[i]);

    ClusterReport rep;
    rep.provenance = provenance;
    rep.n = n;
    rep.dim = d;
    rep.k = k;
    rep.seed = seed;

    KmeansResult km = kmeans(pts, n, d, k, 20, seed);
    rep.assignments = km.assignments;
    rep.inertia = km.inertia;
    rep.silhouette_subsample = (n > 5000) ? 5000 : 0;
    rep.silhouette = silhouette(pts, n, d, km.assignments, 5000, seed);
    rep.davies_bouldin = davies_bouldin(pts, n, d, km.assignments);
    ChIndex ch = calinski_harabasz(pts, n, d, km.assignments);
    rep.calinski_harabasz = ch.value;
    rep.calinski_harabasz_infinite = ch.infinite;
    if (truth_labels) {
        if (truth_labels->size() != n)
            throw ShapeError("truth labels do not match embedding count");
        rep.ari = adjusted_rand_index(km.assignments, *truth_labels);
    }
    return rep;
}

namespace {

std::string fmt_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

void write_cluster_report(std::ostream& out, const ClusterReport& report) {
    out << "provenance\t" << report.provenance << '\n';
    out << "n\t" << report.n << '\n';
    out << "dim\t" << report.dim << '\n';
    out << "k\t" << report.k << '\n';
    out << "seed\t" << report.seed << '\n';
    out << "silhouette\t" << fmt_double(report.silhouette) << '\n';
    out << "silhouette_subsample\t" << report.silhouette_subsample << '\n';
    out << "davies_bouldin\t" << fmt_double(report.davies_bouldin) << '\n';
    out << "calinski_harabasz\t" << fmt_double(report.calinski_harabasz) << '\n';
    out << "inertia\t" << fmt_double(report.inertia) << '\n';
    if (report.ari) out << "adjusted_rand_index\t" << fmt_double(*report.ari) << '\n';
    if (!out) throw IoError("cluster report write failed");
}

}  // namespace vqseq
