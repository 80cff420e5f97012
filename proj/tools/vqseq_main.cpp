// vqseq command-line interface.
//
// Subcommands: synth, qc, tokenize, train, finetune, eval-recon,
// eval-codebook, eval-cluster, embed, sweep-mask. Each writes its outputs
// (plus a config echo) into a fresh run directory. Exit codes: 0 success,
// 2 usage error, 3 configuration/validation error, 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "vqseq/checkpoint.hpp"
#include "vqseq/config.hpp"
#include "vqseq/evalsuite.hpp"
#include "vqseq/fastq.hpp"
#include "vqseq/synth.hpp"
#include "vqseq/tokenizer.hpp"
#include "vqseq/train.hpp"

namespace fs = std::filesystem;
using namespace vqseq;

namespace {

void make_out_dir(const std::string& dir) {
    if (fs::exists(dir))
        throw ConfigError("output directory '" + dir + "' already exists; runs are immutable");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create " + path);
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw IoError(what + " not found: " + path);
}

std::string fmtd(double v) { return format_double(v); }

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string config_path, out_dir;
    SynthConfig cfg;
};

int run_synth(const SynthArgs& args) {
    SynthConfig cfg = args.cfg;
    if (!args.config_path.empty()) {
        cfg = SynthConfig::from_key_values(read_config_file(args.config_path), true);
    }
    cfg.validate();
    make_out_dir(args.out_dir);
    SynthResult synth = generate_synthetic(cfg);
    write_fastq_file((fs::path(args.out_dir) / "reads.fastq").string(), synth.reads);
    write_truth_file((fs::path(args.out_dir) / "truth.tsv").string(), synth);
    write_text((fs::path(args.out_dir) / "config.echo.txt").string(), cfg.echo());
    std::cout << "wrote " << synth.reads.size() << " reads from " << cfg.n_lineages
              << " lineages to " << args.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// qc
// ---------------------------------------------------------------------------

int run_qc(const std::string& in_path, const std::string& out_dir, const QualityConfig& qcfg) {
    qcfg.validate();
    require_file(in_path, "input FASTQ");
    std::vector<QualityRead> before = read_fastq_file(in_path);
    make_out_dir(out_dir);
    std::vector<QualityRead> kept;
    kept.reserve(before.size());
    for (const auto& r : before) {
        if (auto trimmed = quality_trim(r, qcfg)) kept.push_back(std::move(*trimmed));
    }
    QcStats stats = qc_summary(before, kept);
    write_fastq_file((fs::path(out_dir) / "kept.fastq").string(), kept);
    std::ofstream report((fs::path(out_dir) / "qc_stats.txt").string(), std::ios::binary);
    write_qc_stats(report, stats);
    std::ostringstream echo;
    echo << "leading_q = " << qcfg.leading_q << "\ntrailing_q = " << qcfg.trailing_q
         << "\nwindow_len = " << qcfg.window_len << "\nwindow_q = " << fmtd(qcfg.window_q)
         << "\nmin_len = " << qcfg.min_len << '\n';
    write_text((fs::path(out_dir) / "config.echo.txt").string(), echo.str());
    std::cout << "kept " << stats.reads_kept << " of " << stats.reads_in << " reads\n";
    return 0;
}

// ---------------------------------------------------------------------------
// tokenize
// ---------------------------------------------------------------------------

int run_tokenize(const std::string& in_path, const std::string& out_dir,
                 const TokenizerConfig& tcfg) {
    tcfg.validate();
    require_file(in_path, "input FASTQ");
    std::vector<QualityRead> reads = read_fastq_file(in_path);
    make_out_dir(out_dir);
    TokenCorpus corpus;
    corpus.k = tcfg.k;
    corpus.max_len = tcfg.max_len;
    corpus.vocab_size = tcfg.vocab_size();
    size_t skipped = 0;
    for (const auto& r : reads) {
        if (r.bases.size() < tcfg.k) {
            ++skipped;
            continue;
        }
        TokenSequence seq = tokenize(r.bases, tcfg);
        seq.id = r.id;
        corpus.records.push_back(std::move(seq));
    }
    write_corpus_file((fs::path(out_dir) / "corpus.vqtk").string(), corpus);
    std::ostringstream echo;
    echo << "k = " << tcfg.k << "\nmax_len = " << tcfg.max_len
         << "\ncanonical = " << (tcfg.canonical ? 1 : 0) << '\n';
    write_text((fs::path(out_dir) / "config.echo.txt").string(), echo.str());
    std::cout << "tokenized " << corpus.records.size() << " reads";
    if (skipped) std::cout << " (skipped " << skipped << " shorter than k)";
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int run_train(const std::string& corpus_path, const std::string& out_dir,
              const std::string& config_path, const KeyValues& overrides,
              const std::string& resume, unsigned threads) {
    KeyValues kv;
    if (!config_path.empty()) kv = read_config_file(config_path);
    for (const auto& o : overrides) kv.push_back(o);
    TrainConfig cfg = TrainConfig::from_key_values(kv, true);
    require_file(corpus_path, "tokenized corpus");
    if (!resume.empty()) require_file(resume, "resume checkpoint");
    TokenCorpus corpus = read_corpus_file(corpus_path);
    TrainResult res = train_vqvae(cfg, corpus, out_dir, resume, threads);
    std::cout << "trained " << cfg.epochs << " epochs; final checkpoint at "
              << res.final_checkpoint << "\n";
    if (!res.epochs.empty()) {
        const auto& last = res.epochs.back();
        std::cout << "final loss " << fmtd(last.total) << " (recon " << fmtd(last.recon)
                  << ", perplexity " << fmtd(last.perplexity) << ")\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// finetune
// ---------------------------------------------------------------------------

int run_finetune(const std::string& corpus_path, const std::string& ckpt_path,
                 const std::string& out_dir, const std::string& ids_path,
                 FinetuneOptions opt, unsigned threads) {
    require_file(corpus_path, "tokenized corpus");
    require_file(ckpt_path, "checkpoint");
    TokenCorpus corpus = read_corpus_file(corpus_path);
    LoadedModel loaded = load_model_file(ckpt_path);
    std::vector<size_t> idx;
    if (!ids_path.empty()) {
        require_file(ids_path, "id list");
        idx = read_id_file(ids_path, corpus);
    } else {
        idx.resize(corpus.records.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    }
    FinetuneResult res = finetune_contrastive(loaded.model, loaded.config, corpus, idx,
                                              opt, out_dir, threads);
    std::cout << "fine-tuned head (D'=" << opt.dprime << ") written to "
              << res.head_checkpoint << "\n";
    if (!res.model_checkpoint.empty())
        std::cout << "unfrozen encoder written to " << res.model_checkpoint << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

int run_embed(const std::string& corpus_path, const std::string& ckpt_path,
              const std::string& head_path, const std::string& ids_path,
              const std::string& pool, const std::string& out_dir) {
    require_file(corpus_path, "tokenized corpus");
    require_file(ckpt_path, "checkpoint");
    if (!head_path.empty()) require_file(head_path, "head checkpoint");
    if (!ids_path.empty()) require_file(ids_path, "id list");
    TokenCorpus corpus = read_corpus_file(corpus_path);
    LoadedModel loaded = load_model_file(ckpt_path);
    ProjectionHead<float> head;
    ProjectionHead<float>* head_ptr = nullptr;
    if (!head_path.empty()) {
        head_from_checkpoint(head, read_vqww_file(head_path));
        if (head.in_dim != loaded.model.dims.latent)
            throw ConfigMismatchError("projection head input dimension does not match the model");
        head_ptr = &head;
    }
    std::vector<size_t> idx;
    if (!ids_path.empty()) {
        idx = read_id_file(ids_path, corpus);
    } else {
        idx.resize(corpus.records.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    }
    make_out_dir(out_dir);
    EmbeddingTable table = compute_embeddings(loaded.model, head_ptr, corpus, idx, pool);
    write_vqem_file((fs::path(out_dir) / "embeddings.vqem").string(), table);
    std::ostringstream echo;
    echo << "pool = " << pool << "\nhead = " << (head_path.empty() ? "none" : head_path)
         << "\ndim = " << table.dim << "\ncount = " << table.ids.size() << '\n';
    write_text((fs::path(out_dir) / "config.echo.txt").string(), echo.str());
    std::cout << "wrote " << table.ids.size() << " embeddings of dimension " << table.dim
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval-recon / eval-codebook
// ---------------------------------------------------------------------------

std::vector<size_t> resolve_ids(const TokenCorpus& corpus, const std::string& ids_path) {
    if (!ids_path.empty()) {
        require_file(ids_path, "id list");
        return read_id_file(ids_path, corpus);
    }
    std::vector<size_t> idx(corpus.records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

void write_eval_echo(const std::string& out_dir, const std::string& corpus_path,
                     const std::string& ckpt_path, const std::string& ids_path) {
    std::ostringstream echo;
    echo << "corpus = " << corpus_path << "\ncheckpoint = " << ckpt_path
         << "\nids = " << (ids_path.empty() ? "(all)" : ids_path) << '\n';
    write_text((fs::path(out_dir) / "config.echo.txt").string(), echo.str());
}

int run_eval_recon(const std::string& corpus_path, const std::string& ckpt_path,
                   const std::string& ids_path, const std::string& out_dir) {
    require_file(corpus_path, "tokenized corpus");
    require_file(ckpt_path, "checkpoint");
    TokenCorpus corpus = read_corpus_file(corpus_path);
    LoadedModel loaded = load_model_file(ckpt_path);
    auto idx = resolve_ids(corpus, ids_path);
    make_out_dir(out_dir);
    write_eval_echo(out_dir, corpus_path, ckpt_path, ids_path);
    ReconReport rep = recon_eval(loaded.model, select_records(corpus, idx));
    std::ostringstream kv;
    kv << "mean_token_acc\t" << fmtd(rep.mean_token_acc) << '\n'
       << "median_token_acc\t" << fmtd(rep.median_token_acc) << '\n'
       << "std_token_acc\t" << fmtd(rep.std_token_acc) << '\n'
       << "exact_match_rate\t" << fmtd(rep.exact_match_rate) << '\n'
       << "n_sequences\t" << rep.n_sequences << '\n';
    write_text((fs::path(out_dir) / "recon_report.txt").string(), kv.str());
    std::ostringstream tsv;
    tsv << "mean_token_acc\tmedian_token_acc\tstd_token_acc\texact_match_rate\tn_sequences\n"
        << fmtd(rep.mean_token_acc) << '\t' << fmtd(rep.median_token_acc) << '\t'
        << fmtd(rep.std_token_acc) << '\t' << fmtd(rep.exact_match_rate) << '\t'
        << rep.n_sequences << '\n';
    write_text((fs::path(out_dir) / "recon_report.tsv").string(), tsv.str());
    std::cout << kv.str();
    return 0;
}

int run_eval_codebook(const std::string& corpus_path, const std::string& ckpt_path,
                      const std::string& ids_path, const std::string& out_dir) {
    require_file(corpus_path, "tokenized corpus");
    require_file(ckpt_path, "checkpoint");
    TokenCorpus corpus = read_corpus_file(corpus_path);
    LoadedModel loaded = load_model_file(ckpt_path);
    auto idx = resolve_ids(corpus, ids_path);
    make_out_dir(out_dir);
    write_eval_echo(out_dir, corpus_path, ckpt_path, ids_path);
    auto usage = collect_usage(loaded.model, select_records(corpus, idx));
    CodebookReport rep = codebook_eval(usage);
    std::ostringstream kv;
    kv << "total_codes\t" << rep.total_codes << '\n'
       << "active_codes\t" << rep.active_codes << '\n'
       << "utilization\t" << fmtd(rep.utilization) << '\n'
       << "mean_usage\t" << fmtd(rep.mean_usage) << '\n'
       << "std_usage\t" << fmtd(rep.std_usage) << '\n'
       << "max_usage\t" << rep.max_usage << '\n'
       << "perplexity\t" << fmtd(rep.perplexity) << '\n';
    write_text((fs::path(out_dir) / "codebook_report.txt").string(), kv.str());
    std::ostringstream usage_tsv;
    usage_tsv << "code\tcount\n";
    for (size_t i = 0; i < rep.usage.size(); ++i)
        usage_tsv << i << '\t' << rep.usage[i] << '\n';
    write_text((fs::path(out_dir) / "codebook_usage.tsv").string(), usage_tsv.str());
    std::cout << kv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// eval-cluster
// ---------------------------------------------------------------------------

int run_eval_cluster(const std::string& embeddings_path, size_t k, uint64_t seed,
                     const std::string& truth_path, const std::string& provenance,
                     const std::string& out_dir) {
    require_file(embeddings_path, "embedding table");
    if (!truth_path.empty()) require_file(truth_path, "truth labels");
    EmbeddingTable table = read_vqem_file(embeddings_path);
    std::vector<uint32_t> truth;
    std::vector<uint32_t>* truth_ptr = nullptr;
    if (!truth_path.empty()) {
        auto by_id = read_truth_file(truth_path);
        truth.reserve(table.ids.size());
        for (const auto& id : table.ids) {
            auto it = by_id.find(id);
            if (it == by_id.end())
                throw ParseError("truth file has no label for read '" + id + "'");
            truth.push_back(it->second);
        }
        truth_ptr = &truth;
    }
    make_out_dir(out_dir);
    {
        std::ostringstream echo;
        echo << "embeddings = " << embeddings_path << "\nk = " << k << "\nseed = " << seed
             << "\ntruth = " << (truth_path.empty() ? "(none)" : truth_path) << '\n';
        write_text((fs::path(out_dir) / "config.echo.txt").string(), echo.str());
    }
    std::string prov = provenance.empty() ? fs::path(embeddings_path).filename().string()
                                          : provenance;
    ClusterReport rep = clustering_eval(table, k, seed, prov, truth_ptr);
    std::ofstream report((fs::path(out_dir) / "cluster_report.txt").string(), std::ios::binary);
    write_cluster_report(report, rep);
    std::ostringstream assigns;
    assigns << "read_id\tcluster\n";
    for (size_t i = 0; i < table.ids.size(); ++i)
        assigns << table.ids[i] << '\t' << rep.assignments[i] << '\n';
    write_text((fs::path(out_dir) / "assignments.tsv").string(), assigns.str());
    std::ostringstream kv;
    write_cluster_report(kv, rep);
    std::cout << kv.str();
    return 0;
}

// ---------------------------------------------------------------------------
// sweep-mask
// ---------------------------------------------------------------------------

int run_sweep_mask(const std::string& corpus_path, const std::string& ckpt_path,
                   const std::string& ids_path, std::vector<double> fractions,
                   uint64_t seed, const std::string& out_dir) {
    require_file(corpus_path, "tokenized corpus");
    require_file(ckpt_path, "checkpoint");
    TokenCorpus corpus = read_corpus_file(corpus_path);
    LoadedModel loaded = load_model_file(ckpt_path);
    auto idx = resolve_ids(corpus, ids_path);
    if (fractions.empty()) fractions = {0.10, 0.20, 0.30};
    make_out_dir(out_dir);
    {
        std::ostringstream echo;
        echo << "corpus = " << corpus_path << "\ncheckpoint = " << ckpt_path << "\nseed = "
             << seed << "\nfractions =";
        for (double f : fractions) echo << ' ' << fmtd(f);
        echo << '\n';
        write_text((fs::path(out_dir) / "config.echo.txt").string(), echo.str());
    }
    auto points = masked_accuracy_sweep(loaded.model, corpus, idx, fractions, seed);
    std::ostringstream tsv;
    tsv << "fraction\taccuracy\tmean_true_prob\tpositions\n";
    for (const auto& pt : points)
        tsv << fmtd(pt.fraction) << '\t' << fmtd(pt.accuracy) << '\t'
            << fmtd(pt.mean_true_prob) << '\t' << pt.positions << '\n';
    write_text((fs::path(out_dir) / "mask_sweep.tsv").string(), tsv.str());
    std::cout << tsv.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vqseq: discrete representation learning for sequencing reads"};
    app.require_subcommand(1);

    // synth
    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic read corpus");
    synth_cmd->add_option("--config", synth_args.config_path, "config file");
    synth_cmd->add_option("--out", synth_args.out_dir, "output directory")->required();
    synth_cmd->add_option("--genome_len", synth_args.cfg.genome_len);
    synth_cmd->add_option("--n_lineages", synth_args.cfg.n_lineages);
    synth_cmd->add_option("--mutations_per_lineage", synth_args.cfg.mutations_per_lineage);
    synth_cmd->add_option("--reads_per_lineage", synth_args.cfg.reads_per_lineage);
    synth_cmd->add_option("--read_len_min", synth_args.cfg.read_len_min);
    synth_cmd->add_option("--read_len_max", synth_args.cfg.read_len_max);
    synth_cmd->add_option("--base_error_rate", synth_args.cfg.base_error_rate);
    synth_cmd->add_option("--seed", synth_args.cfg.seed);

    // qc
    std::string qc_in, qc_out;
    QualityConfig qcfg;
    uint64_t qc_seed = 0;
    auto* qc_cmd = app.add_subcommand("qc", "quality-trim a FASTQ file");
    qc_cmd->add_option("--in", qc_in, "input FASTQ (.gz accepted)")->required();
    qc_cmd->add_option("--out", qc_out, "output directory")->required();
    qc_cmd->add_option("--leading_q", qcfg.leading_q);
    qc_cmd->add_option("--trailing_q", qcfg.trailing_q);
    qc_cmd->add_option("--window_len", qcfg.window_len);
    qc_cmd->add_option("--window_q", qcfg.window_q);
    qc_cmd->add_option("--min_len", qcfg.min_len);
    qc_cmd->add_option("--seed", qc_seed, "unused; accepted for uniformity");

    // tokenize
    std::string tok_in, tok_out;
    TokenizerConfig tcfg;
    uint64_t tok_seed = 0;
    auto* tok_cmd = app.add_subcommand("tokenize", "k-mer tokenize a FASTQ file");
    tok_cmd->add_option("--in", tok_in, "input FASTQ")->required();
    tok_cmd->add_option("--out", tok_out, "output directory")->required();
    tok_cmd->add_option("--k", tcfg.k);
    tok_cmd->add_option("--max_len", tcfg.max_len);
    tok_cmd->add_flag("--canonical", tcfg.canonical);
    tok_cmd->add_option("--seed", tok_seed, "unused; accepted for uniformity");

    // train: every TrainConfig key is mirrored as a --key flag overriding the
    // config file
    std::string train_corpus, train_out, train_config, train_resume;
    unsigned train_threads = 1;
    KeyValues train_overrides;
    auto* train_cmd = app.add_subcommand("train", "train the VQ-VAE (base or masked)");
    train_cmd->add_option("--corpus", train_corpus, "tokenized corpus (.vqtk)")->required();
    train_cmd->add_option("--out", train_out, "run directory")->required();
    train_cmd->add_option("--config", train_config, "config file");
    train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");
    train_cmd->add_option("--threads", train_threads, "worker threads");
    for (const char* key :
         {"K", "D", "embed", "hidden", "L", "k", "dropout", "gamma", "beta", "lambda",
          "batch", "epochs", "lr", "optimizer", "weight_decay", "seed", "objective",
          "p_mask", "train_frac", "entropy_mode"}) {
        train_cmd->add_option(std::string("--") + key)
            ->description(std::string("override config key ") + key)
            ->each([&train_overrides, key](const std::string& v) {
                train_overrides.emplace_back(key, v);
            });
    }

    // finetune
    std::string ft_corpus, ft_ckpt, ft_out, ft_ids;
    FinetuneOptions ft_opt;
    unsigned ft_threads = 1;
    auto* ft_cmd = app.add_subcommand("finetune", "contrastive fine-tuning of a projection head");
    ft_cmd->add_option("--corpus", ft_corpus)->required();
    ft_cmd->add_option("--checkpoint", ft_ckpt)->required();
    ft_cmd->add_option("--out", ft_out)->required();
    ft_cmd->add_option("--ids", ft_ids, "restrict to these record ids");
    ft_cmd->add_option("--dprime", ft_opt.dprime, "projection dimension (64 or 128)");
    ft_cmd->add_option("--epochs", ft_opt.epochs);
    ft_cmd->add_option("--lr", ft_opt.lr);
    ft_cmd->add_option("--batch", ft_opt.batch);
    ft_cmd->add_option("--weight_decay", ft_opt.weight_decay);
    ft_cmd->add_option("--seed", ft_opt.seed);
    ft_cmd->add_option("--mask_prob", ft_opt.mask_prob);
    ft_cmd->add_option("--dropout_prob", ft_opt.dropout_prob);
    ft_cmd->add_option("--temperature", ft_opt.temperature);
    ft_cmd->add_flag("--unfreeze-encoder", ft_opt.unfreeze_encoder);
    ft_cmd->add_option("--pool", ft_opt.pool, "ze or zq");
    ft_cmd->add_option("--threads", ft_threads);

    // embed
    std::string em_corpus, em_ckpt, em_head, em_ids, em_pool = "ze", em_out;
    auto* em_cmd = app.add_subcommand("embed", "export pooled embeddings (VQEM)");
    em_cmd->add_option("--corpus", em_corpus)->required();
    em_cmd->add_option("--checkpoint", em_ckpt)->required();
    em_cmd->add_option("--head", em_head, "projection head checkpoint");
    em_cmd->add_option("--ids", em_ids);
    em_cmd->add_option("--pool", em_pool, "ze or zq");
    em_cmd->add_option("--out", em_out)->required();
    uint64_t em_seed = 0;
    em_cmd->add_option("--seed", em_seed, "unused; accepted for uniformity");

    // eval-recon
    std::string er_corpus, er_ckpt, er_ids, er_out;
    auto* er_cmd = app.add_subcommand("eval-recon", "reconstruction quality report");
    er_cmd->add_option("--corpus", er_corpus)->required();
    er_cmd->add_option("--checkpoint", er_ckpt)->required();
    er_cmd->add_option("--ids", er_ids);
    er_cmd->add_option("--out", er_out)->required();
    uint64_t er_seed = 0;
    er_cmd->add_option("--seed", er_seed, "unused; accepted for uniformity");

    // eval-codebook
    std::string ec_corpus, ec_ckpt, ec_ids, ec_out;
    auto* ec_cmd = app.add_subcommand("eval-codebook", "codebook usage report");
    ec_cmd->add_option("--corpus", ec_corpus)->required();
    ec_cmd->add_option("--checkpoint", ec_ckpt)->required();
    ec_cmd->add_option("--ids", ec_ids);
    ec_cmd->add_option("--out", ec_out)->required();
    uint64_t ec_seed = 0;
    ec_cmd->add_option("--seed", ec_seed, "unused; accepted for uniformity");

    // eval-cluster
    std::string cl_embeddings, cl_truth, cl_prov, cl_out;
    size_t cl_k = 10;
    uint64_t cl_seed = 42;
    auto* cl_cmd = app.add_subcommand("eval-cluster", "k-means + clustering quality indices");
    cl_cmd->add_option("--embeddings", cl_embeddings, "VQEM embedding table")->required();
    cl_cmd->add_option("--k", cl_k);
    cl_cmd->add_option("--seed", cl_seed);
    cl_cmd->add_option("--truth", cl_truth, "truth labels for ARI");
    cl_cmd->add_option("--provenance", cl_prov, "embedding provenance note");
    cl_cmd->add_option("--out", cl_out)->required();

    // sweep-mask
    std::string sm_corpus, sm_ckpt, sm_ids, sm_out;
    std::vector<double> sm_fractions;
    uint64_t sm_seed = 42;
    auto* sm_cmd = app.add_subcommand("sweep-mask", "masked-position accuracy sweep");
    sm_cmd->add_option("--corpus", sm_corpus)->required();
    sm_cmd->add_option("--checkpoint", sm_ckpt)->required();
    sm_cmd->add_option("--ids", sm_ids);
    sm_cmd->add_option("--fractions", sm_fractions, "mask fractions (default 0.1 0.2 0.3)")
        ->take_all();
    sm_cmd->add_option("--seed", sm_seed);
    sm_cmd->add_option("--out", sm_out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (qc_cmd->parsed()) return run_qc(qc_in, qc_out, qcfg);
        if (tok_cmd->parsed()) return run_tokenize(tok_in, tok_out, tcfg);
        if (train_cmd->parsed())
            return run_train(train_corpus, train_out, train_config, train_overrides,
                             train_resume, train_threads);
        if (ft_cmd->parsed())
            return run_finetune(ft_corpus, ft_ckpt, ft_out, ft_ids, ft_opt, ft_threads);
        if (em_cmd->parsed())
            return run_embed(em_corpus, em_ckpt, em_head, em_ids, em_pool, em_out);
        if (er_cmd->parsed()) return run_eval_recon(er_corpus, er_ckpt, er_ids, er_out);
        if (ec_cmd->parsed()) return run_eval_codebook(ec_corpus, ec_ckpt, ec_ids, ec_out);
        if (cl_cmd->parsed())
            return run_eval_cluster(cl_embeddings, cl_k, cl_seed, cl_truth, cl_prov, cl_out);
        if (sm_cmd->parsed())
            return run_sweep_mask(sm_corpus, sm_ckpt, sm_ids, sm_fractions, sm_seed, sm_out);
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigMismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
