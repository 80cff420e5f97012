#include "vqseq/train.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace fs = std::filesystem;

namespace vqseq {

std::pair<std::vector<size_t>, std::vector<size_t>>
split_dataset(size_t n, double train_frac, uint64_t seed) {
    if (n == 0) throw EmptyDatasetError("split_dataset over empty corpus");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    StreamRng rng(stream_seed(seed, Stream::split));
    shuffle_inplace(order, rng);
    auto n_train = static_cast<size_t>(std::llround(train_frac * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    std::vector<size_t> train(order.begin(), order.begin() + static_cast<long>(n_train));
    std::vector<size_t> test(order.begin() + static_cast<long>(n_train), order.end());
    return {std::move(train), std::move(test)};
}

std::vector<const TokenSequence*> select_records(const TokenCorpus& corpus,
                                                 const std::vector<size_t>& idx) {
    std::vector<const TokenSequence*> out;
    out.reserve(idx.size());
    for (size_t i : idx) out.push_back(&corpus.records.at(i));
    return out;
}

void write_id_file(const std::string& path, const TokenCorpus& corpus,
                   const std::vector<size_t>& idx) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);
    for (size_t i : idx) out << corpus.records.at(i).id << '\n';
    if (!out) throw IoError("id file write failed");
}

std::vector<size_t> read_id_file(const std::string& path, const TokenCorpus& corpus) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::unordered_map<std::string, size_t> by_id;
    for (size_t i = 0; i < corpus.records.size(); ++i)
        by_id.emplace(corpus.records[i].id, i);
    std::vector<size_t> idx;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto it = by_id.find(line);
        if (it == by_id.end())
            throw ParseError("id '" + line + "' not present in corpus");
        idx.push_back(it->second);
    }
    return idx;
}

// ---------------------------------------------------------------------------
// train_vqvae
// ---------------------------------------------------------------------------

namespace {

void check_corpus_matches(const TrainConfig& cfg, const TokenCorpus& corpus) {
    if (corpus.records.empty()) throw EmptyDatasetError("corpus has no records");
    if (corpus.k != cfg.k || corpus.max_len != cfg.L || corpus.vocab_size != cfg.vocab_size())
        throw ConfigMismatchError("corpus (k=" + std::to_string(corpus.k) +
                                  ", L=" + std::to_string(corpus.max_len) +
                                  ", V=" + std::to_string(corpus.vocab_size) +
                                  ") does not match the training configuration");
}

std::string run_file(const std::string& run_dir, const std::string& name) {
    return (fs::path(run_dir) / name).string();
}

void create_run_dir(const std::string& run_dir) {
    fs::path p(run_dir);
    if (fs::exists(p))
        throw ConfigError("run directory '" + run_dir + "' already exists; runs are immutable");
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create run directory " + run_dir);
}

struct SeqScratch {
    std::vector<float> z_e;        // L x D copy for the EMA statistics
    std::vector<uint32_t> assign;  // L
    std::vector<uint8_t> valid;    // L
    std::vector<float> g_emb;      // L x E embedding gradients (scattered later)
    std::vector<uint32_t> fed_ids; // the ids the forward pass actually saw
    double ce_sum = 0, commit_sum = 0;
    size_t n_scored = 0, n_valid = 0;
    std::vector<float> entropy_grad;  // L x D, soft mode only
};

std::string fmt(double v) { return format_double(v); }

}  // namespace

TrainResult train_vqvae(const TrainConfig& cfg, const TokenCorpus& corpus,
                        const std::string& run_dir,
                        const std::string& resume_checkpoint,
                        unsigned threads) {
    cfg.validate();
    check_corpus_matches(cfg, corpus);
    create_run_dir(run_dir);

    const TokenizerConfig tok{cfg.k, cfg.L, false};
    const size_t L = cfg.L, D = cfg.D, K = cfg.K;
    const bool masked = cfg.objective == "masked";
    const bool soft_entropy_mode = cfg.entropy_mode == "soft";

    Vqvae<float> model;
    uint32_t start_epoch = 1;
    if (!resume_checkpoint.empty()) {
        LoadedModel loaded = load_model_file(resume_checkpoint);
        if (loaded.config.echo() != cfg.echo())
            throw ConfigMismatchError("resume checkpoint was written with a different configuration");
        model = std::move(loaded.model);
        start_epoch = loaded.epoch + 1;
    } else {
        model.init(cfg.dims(), cfg.seed);
    }

    auto [train_idx, test_idx] = split_dataset(corpus.records.size(), cfg.train_frac, cfg.seed);
    {
        std::ofstream echo(run_file(run_dir, "config.echo.txt"), std::ios::binary);
        echo << cfg.echo();
        if (!echo) throw IoError("config echo write failed");
    }
    write_id_file(run_file(run_dir, "train_ids.txt"), corpus, train_idx);
    write_id_file(run_file(run_dir, "test_ids.txt"), corpus, test_idx);

    std::ofstream metrics(run_file(run_dir, "metrics.tsv"), std::ios::binary);
    if (!metrics) throw IoError("cannot create metrics log");
    metrics << "epoch\ttotal\trecon\tcommit\tentropy\tperplexity\tactive_codes\tutilization\n";

    ThreadPool pool(threads);
    std::vector<VqvaeWorkspace<float>> workspaces(pool.size());
    const size_t B = cfg.batch;
    std::vector<GradBuffer<float>> gbufs(B);
    for (auto& g : gbufs) g.init(model, /*with_embed=*/false);
    std::vector<SeqScratch> scratch(B);
    for (auto& s : scratch) {
        s.z_e.assign(L * D, 0.0f);
        s.assign.assign(L, 0);
        s.valid.assign(L, 0);
        s.g_emb.assign(L * static_cast<size_t>(cfg.embed), 0.0f);
        s.fed_ids.assign(L, 0);
    }
    auto slots = model.slots();

    std::vector<float> batch_counts(K), batch_sums(K * D);
    TrainResult result;
    result.train_idx = train_idx;
    result.test_idx = test_idx;

    auto write_checkpoint = [&](uint32_t epoch, const std::string& name) {
        std::string meta = cfg.echo() + "epoch = " + std::to_string(epoch) + "\n";
        Checkpoint ckpt = model_to_checkpoint(model, meta);
        write_vqww_file(run_file(run_dir, name), ckpt);
    };

    for (uint32_t epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        StreamRng shuffle_rng(stream_seed(cfg.seed, Stream::shuffle, epoch));
        shuffle_inplace(order, shuffle_rng);

        double ep_ce = 0, ep_commit = 0, ep_entropy_w = 0;
        size_t ep_scored = 0, ep_valid = 0;
        std::vector<size_t> ep_usage(K, 0);

        const size_t n_batches = (order.size() + B - 1) / B;
        for (size_t b = 0; b < n_batches; ++b) {
            const size_t first = b * B;
            const size_t count = std::min(B, order.size() - first);

            // Scored-position totals are known before the forward pass.
            size_t total_scored = 0, total_valid = 0;
            for (size_t i = 0; i < count; ++i) {
                const auto& rec = corpus.records[order[first + i]];
                size_t nv = rec.n_valid();
                total_valid += nv;
                total_scored += masked ? mask_count(cfg.p_mask, nv) : nv;
            }
            if (masked && total_scored == 0)
                throw EmptyMaskSetError("epoch " + std::to_string(epoch) + " batch " +
                                        std::to_string(b) + " masked no positions");
            if (total_scored == 0 || total_valid == 0)
                throw EmptyBatchError("epoch " + std::to_string(epoch) + " batch " +
                                      std::to_string(b) + " has no valid positions");
            const auto ce_scale = static_cast<float>(1.0 / static_cast<double>(total_scored));
            const auto commit_scale =
                static_cast<float>(cfg.beta / static_cast<double>(total_valid));

            auto prepare = [&](VqvaeWorkspace<float>& ws, size_t i) {
                const size_t rec_index = order[first + i];
                const auto& rec = corpus.records[rec_index];
                ws.ensure(model.dims);
                std::copy(rec.ids.begin(), rec.ids.end(), ws.ids.begin());
                std::copy(rec.valid.begin(), rec.valid.end(), ws.valid.begin());
                ws.zero_rows.clear();
                ws.rows.clear();
                ws.row_targets.clear();
                if (masked) {
                    StreamRng mask_rng(stream_seed(cfg.seed, Stream::mask, epoch, rec_index));
                    MaskedSequence ms = apply_mask(rec, cfg.p_mask, tok.mask_id(), mask_rng);
                    std::copy(ms.corrupted_ids.begin(), ms.corrupted_ids.end(), ws.ids.begin());
                    for (uint32_t pos : ms.masked_positions) {
                        ws.rows.push_back(pos);
                        ws.row_targets.push_back(rec.ids[pos]);
                    }
                } else {
                    for (size_t pos = 0; pos < L; ++pos) {
                        if (!rec.valid[pos]) continue;
                        ws.rows.push_back(static_cast<uint32_t>(pos));
                        ws.row_targets.push_back(rec.ids[pos]);
                    }
                }
            };

            auto forward_seq = [&](VqvaeWorkspace<float>& ws, size_t i, SeqScratch& sc) {
                const size_t rec_index = order[first + i];
                StreamRng drop_rng(stream_seed(cfg.seed, Stream::dropout, epoch, rec_index));
                encode(model, ws, true, drop_rng);
                quantize(model.codebook, ws);
                std::copy(ws.z_e.data.begin(), ws.z_e.data.end(), sc.z_e.begin());
                std::copy(ws.assign.begin(), ws.assign.end(), sc.assign.begin());
                std::copy(ws.valid.begin(), ws.valid.end(), sc.valid.begin());
                decode_rows(model, ws, true, drop_rng);
                sc.ce_sum = nn::softmax_xent_rows(ws.logits_rows.ptr(), ws.rows.size(),
                                                  model.dims.vocab, ws.row_targets.data(),
                                                  ws.probs_rows.ptr());
                sc.n_scored = ws.rows.size();
                double commit = 0;
                size_t nv = 0;
                for (size_t pos = 0; pos < L; ++pos) {
                    if (!ws.valid[pos]) continue;
                    ++nv;
                    const float* ze = ws.z_e.ptr() + pos * D;
                    const float* zq = ws.z_q.ptr() + pos * D;
                    for (size_t dd = 0; dd < D; ++dd) {
                        double diff = static_cast<double>(ze[dd]) - zq[dd];
                        commit += diff * diff;
                    }
                }
                sc.commit_sum = commit;
                sc.n_valid = nv;
            };

            auto stash_emb_grads = [&](VqvaeWorkspace<float>& ws, SeqScratch& sc) {
                std::copy(ws.g_emb.data.begin(), ws.g_emb.data.end(), sc.g_emb.begin());
                std::copy(ws.ids.begin(), ws.ids.end(), sc.fed_ids.begin());
            };

            double soft_entropy_value = 0.0;
            if (!soft_entropy_mode) {
                pool.run(count, [&](size_t i, unsigned worker) {
                    VqvaeWorkspace<float>& ws = workspaces[worker];
                    prepare(ws, i);
                    forward_seq(ws, i, scratch[i]);
                    gbufs[i].zero_accumulated(model);
                    backward(model, ws, ce_scale, commit_scale, gbufs[i], true);
                    stash_emb_grads(ws, scratch[i]);
                });
            } else {
                // Soft entropy needs batch-level assignment probabilities, so
                // forward everything first, then redo the forward (same
                // streams) and run backward with the extra z_e gradient.
                pool.run(count, [&](size_t i, unsigned worker) {
                    VqvaeWorkspace<float>& ws = workspaces[worker];
                    prepare(ws, i);
                    forward_seq(ws, i, scratch[i]);
                });
                std::vector<const float*> ze_ptrs(count);
                std::vector<const uint8_t*> valid_ptrs(count);
                std::vector<float*> grad_ptrs(count);
                for (size_t i = 0; i < count; ++i) {
                    scratch[i].entropy_grad.assign(L * D, 0.0f);
                    ze_ptrs[i] = scratch[i].z_e.data();
                    valid_ptrs[i] = scratch[i].valid.data();
                    grad_ptrs[i] = scratch[i].entropy_grad.data();
                }
                soft_entropy_value = soft_entropy(
                    model.codebook, ze_ptrs, valid_ptrs, L,
                    static_cast<float>(-cfg.lambda), grad_ptrs);
                pool.run(count, [&](size_t i, unsigned worker) {
                    VqvaeWorkspace<float>& ws = workspaces[worker];
                    prepare(ws, i);
                    forward_seq(ws, i, scratch[i]);
                    gbufs[i].zero_accumulated(model);
                    backward(model, ws, ce_scale, commit_scale, gbufs[i], true,
                             scratch[i].entropy_grad.data());
                    stash_emb_grads(ws, scratch[i]);
                });
            }

            // Reduce per-sequence gradients in fixed order (parallel over
            // slots, sequences ascending inside). The embedding slot carries
            // compact per-sequence gradients and is scattered separately.
            pool.run(slots.size(), [&](size_t s, unsigned) {
                if (gbufs[0].bufs[s].empty()) return;
                float* g = slots[s]->grad.ptr();
                const size_t n = slots[s]->size();
                for (size_t i = 0; i < count; ++i) {
                    const float* add = gbufs[i].bufs[s].data();
                    for (size_t j = 0; j < n; ++j) g[j] += add[j];
                }
            });
            for (size_t i = 0; i < count; ++i)
                nn::embedding_backward(scratch[i].g_emb.data(), scratch[i].fed_ids.data(),
                                       L, cfg.embed, model.slot(kEmbed).grad.ptr());

            // EMA statistics in sequence order.
            std::fill(batch_counts.begin(), batch_counts.end(), 0.0f);
            std::fill(batch_sums.begin(), batch_sums.end(), 0.0f);
            std::vector<size_t> usage(K, 0);
            double batch_ce = 0, batch_commit = 0;
            size_t batch_scored = 0, batch_valid = 0;
            for (size_t i = 0; i < count; ++i) {
                const SeqScratch& sc = scratch[i];
                for (size_t pos = 0; pos < L; ++pos) {
                    if (!sc.valid[pos]) continue;
                    uint32_t code = sc.assign[pos];
                    batch_counts[code] += 1.0f;
                    usage[code] += 1;
                    const float* ze = sc.z_e.data() + pos * D;
                    float* dst = batch_sums.data() + static_cast<size_t>(code) * D;
                    for (size_t dd = 0; dd < D; ++dd) dst[dd] += ze[dd];
                }
                batch_ce += sc.ce_sum;
                batch_commit += sc.commit_sum;
                batch_scored += sc.n_scored;
                batch_valid += sc.n_valid;
            }
            ema_update(model.codebook, batch_counts, batch_sums);

            double recon = batch_ce / static_cast<double>(batch_scored);
            double commit = batch_commit / static_cast<double>(batch_valid);
            double entropy = soft_entropy_mode
                                 ? soft_entropy_value
                                 : static_cast<double>(usage_entropy<double>(usage));
            double total = recon + cfg.beta * commit - cfg.lambda * entropy;
            if (!std::isfinite(total))
                throw TrainingDivergedError("non-finite loss at epoch " +
                                            std::to_string(epoch) + " batch " +
                                            std::to_string(b));

            nn::adamw_step(slots, cfg.lr, cfg.weight_decay);

            ep_ce += batch_ce;
            ep_commit += batch_commit;
            ep_scored += batch_scored;
            ep_valid += batch_valid;
            ep_entropy_w += entropy * static_cast<double>(batch_valid);
            for (size_t kk = 0; kk < K; ++kk) ep_usage[kk] += usage[kk];
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.recon = ep_ce / static_cast<double>(ep_scored);
        em.commit = ep_commit / static_cast<double>(ep_valid);
        em.entropy = ep_entropy_w / static_cast<double>(ep_valid);
        em.total = em.recon + cfg.beta * em.commit - cfg.lambda * em.entropy;
        size_t active = 0, total_usage = 0;
        double h = 0;
        for (size_t c : ep_usage) {
            total_usage += c;
            if (c) ++active;
        }
        for (size_t c : ep_usage) {
            if (!c) continue;
            double p = static_cast<double>(c) / static_cast<double>(total_usage);
            h -= p * std::log(p);
        }
        em.perplexity = std::exp(h);
        em.active_codes = active;
        em.utilization = static_cast<double>(active) / static_cast<double>(K);
        result.epochs.push_back(em);

        metrics << em.epoch << '\t' << fmt(em.total) << '\t' << fmt(em.recon) << '\t'
                << fmt(em.commit) << '\t' << fmt(em.entropy) << '\t' << fmt(em.perplexity)
                << '\t' << em.active_codes << '\t' << fmt(em.utilization) << '\n';
        metrics.flush();
        if (!metrics) throw IoError("metrics log write failed");

        char name[64];
        std::snprintf(name, sizeof(name), "ckpt_epoch_%04u.vqww", epoch);
        write_checkpoint(epoch, name);
        if (epoch >= start_epoch + 2) {
            char old_name[64];
            std::snprintf(old_name, sizeof(old_name), "ckpt_epoch_%04u.vqww", epoch - 2);
            fs::remove(run_file(run_dir, old_name));
        }
    }

    write_checkpoint(cfg.epochs, "ckpt_final.vqww");
    result.final_checkpoint = run_file(run_dir, "ckpt_final.vqww");
    return result;
}

// ---------------------------------------------------------------------------
// Contrastive fine-tuning.
// ---------------------------------------------------------------------------

void FinetuneOptions::validate() const {
    if (dprime < 1) throw ConfigError("dprime must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (lr <= 0) throw ConfigError("lr must be positive");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (mask_prob < 0 || mask_prob > 1 || dropout_prob < 0 || dropout_prob > 1)
        throw ConfigError("augmentation probabilities must lie in [0, 1]");
    if (temperature <= 0) throw ConfigError("temperature must be positive");
    if (pool != "ze" && pool != "zq") throw ConfigError("pool must be 'ze' or 'zq'");
}

std::string FinetuneOptions::echo() const {
    std::ostringstream out;
    out << "dprime = " << dprime << '\n';
    out << "epochs = " << epochs << '\n';
    out << "lr = " << format_double(lr) << '\n';
    out << "batch = " << batch << '\n';
    out << "weight_decay = " << format_double(weight_decay) << '\n';
    out << "seed = " << seed << '\n';
    out << "mask_prob = " << format_double(mask_prob) << '\n';
    out << "dropout_prob = " << format_double(dropout_prob) << '\n';
    out << "temperature = " << format_double(temperature) << '\n';
    out << "unfreeze_encoder = " << (unfreeze_encoder ? 1 : 0) << '\n';
    out << "pool = " << pool << '\n';
    return out.str();
}

namespace {

// Mean-pool the configured latent over valid positions into `pooled`.
void pool_latent(Vqvae<float>& model, VqvaeWorkspace<float>& ws, const std::string& pool,
                 std::vector<float>& pooled) {
    const size_t L = model.dims.max_len, D = model.dims.latent;
    pooled.assign(D, 0.0f);
    const float* src = ws.z_e.ptr();
    if (pool == "zq") {
        quantize(model.codebook, ws);
        src = ws.z_q.ptr();
    }
    nn::mean_pool_forward(src, L, D, ws.valid.data(), pooled.data());
}

}  // namespace

FinetuneResult finetune_contrastive(Vqvae<float>& model, const TrainConfig& base_cfg,
                                    const TokenCorpus& corpus,
                                    const std::vector<size_t>& train_idx,
                                    const FinetuneOptions& opt,
                                    const std::string& run_dir,
                                    unsigned threads) {
    opt.validate();
    check_corpus_matches(base_cfg, corpus);
    if (train_idx.empty()) throw EmptyDatasetError("no sequences to fine-tune on");
    create_run_dir(run_dir);

    const TokenizerConfig tok{base_cfg.k, base_cfg.L, false};
    const size_t D = model.dims.latent;
    const size_t Dp = opt.dprime;

    ProjectionHead<float> head;
    head.init(D, Dp, opt.seed);
    auto head_slots = head.slots();
    std::vector<nn::ParamSlot<float>*> step_slots = head_slots;
    GradBuffer<float> enc_grads;
    if (opt.unfreeze_encoder) {
        enc_grads.init(model);
        for (size_t ix = kEmbed; ix <= kEncProjB; ++ix)
            step_slots.push_back(&model.params[ix]);
    }

    AugmentConfig aug;
    aug.mask_prob = opt.mask_prob;
    aug.dropout_prob = opt.dropout_prob;
    aug.temperature = opt.temperature;
    aug.batch_size = opt.batch;

    {
        std::ofstream echo(run_file(run_dir, "finetune.echo.txt"), std::ios::binary);
        echo << opt.echo() << "base_config:\n" << base_cfg.echo();
        if (!echo) throw IoError("finetune echo write failed");
    }
    std::ofstream metrics(run_file(run_dir, "finetune_metrics.tsv"), std::ios::binary);
    if (!metrics) throw IoError("cannot create finetune metrics log");
    metrics << "epoch\tbatch\tloss\n";

    ThreadPool pool_threads(threads);
    std::vector<VqvaeWorkspace<float>> workspaces(pool_threads.size());
    StreamRng dummy(0);

    FinetuneResult result;
    const size_t B = opt.batch;
    for (uint32_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        StreamRng shuffle_rng(stream_seed(opt.seed, Stream::shuffle, epoch));
        shuffle_inplace(order, shuffle_rng);
        const size_t n_batches = (order.size() + B - 1) / B;
        for (size_t b = 0; b < n_batches; ++b) {
            const size_t first = b * B;
            const size_t n = std::min(B, order.size() - first);
            const size_t two_n = 2 * n;

            std::vector<ContrastiveEmbedding<float>> embs(two_n);
            std::vector<std::vector<float>> pooled(two_n);
            // [view 0 of seq 0..n-1; view 1 of seq 0..n-1]
            pool_threads.run(two_n, [&](size_t e, unsigned worker) {
                const size_t i = e % n;
                const size_t view = e / n;
                const size_t rec_index = order[first + i];
                const auto& rec = corpus.records[rec_index];
                VqvaeWorkspace<float>& ws = workspaces[worker];
                ws.ensure(model.dims);
                StreamRng aug_rng(stream_seed(opt.seed, Stream::augment, epoch, rec_index, view));
                AugmentedView v = augment(rec, aug, tok.mask_id(), aug_rng);
                std::copy(v.ids.begin(), v.ids.end(), ws.ids.begin());
                std::copy(rec.valid.begin(), rec.valid.end(), ws.valid.begin());
                ws.zero_rows = v.zero_rows;
                StreamRng enc_rng(0);  // eval mode: dropout off
                encode(model, ws, false, enc_rng);
                pool_latent(model, ws, opt.pool, pooled[e]);
            });
            for (size_t e = 0; e < two_n; ++e) head_forward(head, pooled[e], embs[e]);

            std::vector<float> flat(two_n * Dp);
            for (size_t e = 0; e < two_n; ++e)
                std::copy(embs[e].normalized.begin(), embs[e].normalized.end(),
                          flat.data() + e * Dp);
            std::vector<float> dflat(two_n * Dp);
            float loss = info_nce(flat.data(), two_n, Dp, static_cast<float>(opt.temperature),
                                  dflat.data());
            result.batch_losses.push_back(loss);
            metrics << epoch << '\t' << b << '\t' << fmt(loss) << '\n';

            std::vector<std::vector<float>> dpooled(two_n, std::vector<float>(D, 0.0f));
            for (size_t e = 0; e < two_n; ++e)
                head_backward(head, embs[e], dflat.data() + e * Dp, dpooled[e].data());

            if (opt.unfreeze_encoder) {
                // Re-encode each view (same streams) and push the pooled
                // gradient through the frozen-forward activations.
                enc_grads.zero();
                VqvaeWorkspace<float>& ws = workspaces[0];
                for (size_t e = 0; e < two_n; ++e) {
                    const size_t i = e % n;
                    const size_t view = e / n;
                    const size_t rec_index = order[first + i];
                    const auto& rec = corpus.records[rec_index];
                    ws.ensure(model.dims);
                    StreamRng aug_rng(stream_seed(opt.seed, Stream::augment, epoch, rec_index, view));
                    AugmentedView v = augment(rec, aug, tok.mask_id(), aug_rng);
                    std::copy(v.ids.begin(), v.ids.end(), ws.ids.begin());
                    std::copy(rec.valid.begin(), rec.valid.end(), ws.valid.begin());
                    ws.zero_rows = v.zero_rows;
                    StreamRng enc_rng(0);
                    encode(model, ws, false, enc_rng);
                    if (opt.pool == "zq") quantize(model.codebook, ws);
                    // For zq pooling the straight-through estimator makes
                    // this the z_e gradient as well.
                    nn::mean_pool_backward(dpooled[e].data(), model.dims.max_len, D,
                                           ws.valid.data(), ws.g_ze.ptr());
                    encoder_backward(model, ws, enc_grads, false, true);
                }
                for (size_t ix = kEmbed; ix <= kEncProjB; ++ix) {
                    float* g = model.params[ix].grad.ptr();
                    const float* add = enc_grads.bufs[ix].data();
                    for (size_t j = 0; j < model.params[ix].size(); ++j) g[j] += add[j];
                }
            }

            nn::adamw_step(step_slots, opt.lr, opt.weight_decay);
        }
    }
    if (!metrics) throw IoError("finetune metrics write failed");

    std::string meta = opt.echo() + "objective = contrastive\nbase_config:\n" + base_cfg.echo();
    Checkpoint hc = head_to_checkpoint(head, meta);
    result.head_checkpoint = run_file(run_dir, "head.vqww");
    write_vqww_file(result.head_checkpoint, hc);
    if (opt.unfreeze_encoder) {
        Checkpoint mc = model_to_checkpoint(model, base_cfg.echo() + "epoch = 0\n");
        result.model_checkpoint = run_file(run_dir, "model_finetuned.vqww");
        write_vqww_file(result.model_checkpoint, mc);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Embedding export.
// ---------------------------------------------------------------------------

EmbeddingTable compute_embeddings(Vqvae<float>& model, ProjectionHead<float>* head,
                                  const TokenCorpus& corpus,
                                  const std::vector<size_t>& idx,
                                  const std::string& pool) {
    if (idx.empty()) throw EmptyDatasetError("no sequences to embed");
    if (pool != "ze" && pool != "zq") throw ConfigError("pool must be 'ze' or 'zq'");
    EmbeddingTable table;
    table.dim = head ? static_cast<uint32_t>(head->out_dim)
                     : static_cast<uint32_t>(model.dims.latent);
    VqvaeWorkspace<float> ws;
    ws.ensure(model.dims);
    StreamRng dummy(0);
    std::vector<float> pooled;
    std::vector<float> unit(table.dim);
    ContrastiveEmbedding<float> emb;
    for (size_t i : idx) {
        const auto& rec = corpus.records.at(i);
        std::copy(rec.ids.begin(), rec.ids.end(), ws.ids.begin());
        std::copy(rec.valid.begin(), rec.valid.end(), ws.valid.begin());
        ws.zero_rows.clear();
        encode(model, ws, false, dummy);
        pool_latent(model, ws, pool, pooled);
        if (head) {
            head_forward(*head, pooled, emb);
            std::copy(emb.normalized.begin(), emb.normalized.end(), unit.begin());
        } else {
            nn::l2_normalize(pooled.data(), pooled.size(), unit.data());
        }
        table.ids.push_back(rec.id);
        table.vectors.insert(table.vectors.end(), unit.begin(), unit.end());
    }
    return table;
}

// ---------------------------------------------------------------------------
// Masked-robustness sweep.
// ---------------------------------------------------------------------------

std::vector<MaskSweepPoint> masked_accuracy_sweep(Vqvae<float>& model,
                                                  const TokenCorpus& corpus,
                                                  const std::vector<size_t>& idx,
                                                  const std::vector<double>& fractions,
                                                  uint64_t seed) {
    if (idx.empty()) throw EmptyDatasetError("no sequences in sweep");
    const uint32_t mask_id = model.dims.vocab - 1;  // vocab layout: ..., PAD, UNK, MASK
    const size_t L = model.dims.max_len, V = model.dims.vocab;
    VqvaeWorkspace<float> ws;
    ws.ensure(model.dims);
    StreamRng dummy(0);

    std::vector<MaskSweepPoint> points;
    for (size_t fi = 0; fi < fractions.size(); ++fi) {
        const double f = fractions[fi];
        MaskSweepPoint pt;
        pt.fraction = f;
        size_t correct = 0, total = 0;
        double prob_sum = 0;
        for (size_t rec_index : idx) {
            const auto& rec = corpus.records.at(rec_index);
            std::copy(rec.ids.begin(), rec.ids.end(), ws.ids.begin());
            std::copy(rec.valid.begin(), rec.valid.end(), ws.valid.begin());
            ws.zero_rows.clear();
            ws.rows.clear();
            ws.row_targets.clear();
            if (f <= 0.0) {
                for (size_t pos = 0; pos < L; ++pos) {
                    if (!rec.valid[pos]) continue;
                    ws.rows.push_back(static_cast<uint32_t>(pos));
                    ws.row_targets.push_back(rec.ids[pos]);
                }
            } else {
                StreamRng mask_rng(stream_seed(seed, Stream::mask, fi, rec_index));
                MaskedSequence ms = apply_mask(rec, f, mask_id, mask_rng);
                std::copy(ms.corrupted_ids.begin(), ms.corrupted_ids.end(), ws.ids.begin());
                for (uint32_t pos : ms.masked_positions) {
                    ws.rows.push_back(pos);
                    ws.row_targets.push_back(rec.ids[pos]);
                }
            }
            if (ws.rows.empty()) continue;
            encode(model, ws, false, dummy);
            quantize(model.codebook, ws);
            decode_rows(model, ws, false, dummy);
            nn::softmax_xent_rows(ws.logits_rows.ptr(), ws.rows.size(), V,
                                  ws.row_targets.data(), ws.probs_rows.ptr());
            for (size_t s = 0; s < ws.rows.size(); ++s) {
                const float* probs = ws.probs_rows.ptr() + s * V;
                uint32_t best = 0;
                float best_val = probs[0];
                for (size_t j = 1; j < V; ++j) {
                    if (probs[j] > best_val) {
                        best_val = probs[j];
                        best = static_cast<uint32_t>(j);
                    }
                }
                correct += (best == ws.row_targets[s]);
                prob_sum += probs[ws.row_targets[s]];
                ++total;
            }
        }
        if (total == 0) throw EmptyMaskSetError("sweep scored no positions");
        pt.accuracy = static_cast<double>(correct) / static_cast<double>(total);
        pt.mean_true_prob = prob_sum / static_cast<double>(total);
        pt.positions = total;
        points.push_back(pt);
    }
    return points;
}

}  // namespace vqseq
