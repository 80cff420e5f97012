#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "vqseq/common.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    std::string cmd = std::string(VQSEQ_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Workbench {
    fs::path root{"cli_test_tmp"};
    Workbench() {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workbench() { fs::remove_all(root); }
    std::string p(const std::string& name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("cli end-to-end: synth -> qc -> tokenize -> train -> embed -> cluster") {
    Workbench wb;

    // unknown subcommand / flag: usage error (2)
    CHECK(run("frobnicate") == 2);
    CHECK(run("synth --no-such-flag 1 --out " + wb.p("x")) == 2);

    CHECK(run("synth --out " + wb.p("synth") +
              " --genome_len 200 --n_lineages 3 --mutations_per_lineage 5"
              " --reads_per_lineage 60 --read_len_min 40 --read_len_max 80 --seed 5") == 0);
    CHECK(fs::exists(wb.p("synth") + "/reads.fastq"));
    CHECK(fs::exists(wb.p("synth") + "/truth.tsv"));
    CHECK(fs::exists(wb.p("synth") + "/config.echo.txt"));

    // immutable run directories
    CHECK(run("synth --out " + wb.p("synth") + " --genome_len 200") == 3);

    // invalid config: exit 3
    CHECK(run("synth --out " + wb.p("bad") + " --read_len_max 9999 --genome_len 100") == 3);
    CHECK_FALSE(fs::exists(wb.p("bad")));  // no partial outputs

    CHECK(run("qc --in " + wb.p("synth") + "/reads.fastq --out " + wb.p("qc") +
              " --min_len 36") == 0);
    CHECK(fs::exists(wb.p("qc") + "/kept.fastq"));
    CHECK(slurp(wb.p("qc") + "/qc_stats.txt").find("reads_in\t180") != std::string::npos);

    // missing input: nonzero, no partial outputs
    CHECK(run("qc --in " + wb.p("nope.fastq") + " --out " + wb.p("qc2")) == 1);
    CHECK_FALSE(fs::exists(wb.p("qc2")));

    CHECK(run("tokenize --in " + wb.p("qc") + "/kept.fastq --out " + wb.p("tok") +
              " --k 3 --max_len 40") == 0);
    CHECK(fs::exists(wb.p("tok") + "/corpus.vqtk"));

    std::string cfg =
        "K = 16\nD = 6\nembed = 8\nhidden = 12\nL = 40\nk = 3\nbatch = 8\nepochs = 2\n";
    {
        std::ofstream out(wb.p("train.cfg"));
        out << cfg;
    }
    CHECK(run("train --corpus " + wb.p("tok") + "/corpus.vqtk --out " + wb.p("run") +
              " --config " + wb.p("train.cfg")) == 0);
    CHECK(fs::exists(wb.p("run") + "/ckpt_final.vqww"));
    CHECK(fs::exists(wb.p("run") + "/metrics.tsv"));
    CHECK(fs::exists(wb.p("run") + "/test_ids.txt"));
    // the echo reflects the config file values
    std::string echo = slurp(wb.p("run") + "/config.echo.txt");
    CHECK(echo.find("K = 16") != std::string::npos);
    CHECK(echo.find("epochs = 2") != std::string::npos);

    // command-line flags override config keys
    CHECK(run("train --corpus " + wb.p("tok") + "/corpus.vqtk --out " + wb.p("run_o") +
              " --config " + wb.p("train.cfg") + " --epochs 1 --seed 7") == 0);
    std::string echo_o = slurp(wb.p("run_o") + "/config.echo.txt");
    CHECK(echo_o.find("epochs = 1") != std::string::npos);
    CHECK(echo_o.find("seed = 7") != std::string::npos);

    // unknown config key: exit 3
    {
        std::ofstream out(wb.p("bad.cfg"));
        out << cfg << "bogus = 1\n";
    }
    CHECK(run("train --corpus " + wb.p("tok") + "/corpus.vqtk --out " + wb.p("run_bad") +
              " --config " + wb.p("bad.cfg")) == 3);

    CHECK(run("eval-recon --corpus " + wb.p("tok") + "/corpus.vqtk --checkpoint " +
              wb.p("run") + "/ckpt_final.vqww --ids " + wb.p("run") + "/test_ids.txt --out " +
              wb.p("recon")) == 0);
    CHECK(fs::exists(wb.p("recon") + "/recon_report.txt"));
    CHECK(fs::exists(wb.p("recon") + "/recon_report.tsv"));

    CHECK(run("eval-codebook --corpus " + wb.p("tok") + "/corpus.vqtk --checkpoint " +
              wb.p("run") + "/ckpt_final.vqww --out " + wb.p("codebook")) == 0);
    CHECK(fs::exists(wb.p("codebook") + "/codebook_report.txt"));

    CHECK(run("finetune --corpus " + wb.p("tok") + "/corpus.vqtk --checkpoint " +
              wb.p("run") + "/ckpt_final.vqww --ids " + wb.p("run") + "/train_ids.txt" +
              " --out " + wb.p("ft") + " --dprime 8 --epochs 1 --batch 16") == 0);
    CHECK(fs::exists(wb.p("ft") + "/head.vqww"));

    CHECK(run("embed --corpus " + wb.p("tok") + "/corpus.vqtk --checkpoint " + wb.p("run") +
              "/ckpt_final.vqww --out " + wb.p("emb_base")) == 0);
    CHECK(run("embed --corpus " + wb.p("tok") + "/corpus.vqtk --checkpoint " + wb.p("run") +
              "/ckpt_final.vqww --head " + wb.p("ft") + "/head.vqww --out " +
              wb.p("emb_head")) == 0);

    CHECK(run("eval-cluster --embeddings " + wb.p("emb_base") + "/embeddings.vqem --k 3"
              " --seed 7 --truth " + wb.p("synth") + "/truth.tsv --out " + wb.p("clust")) == 0);
    std::string report = slurp(wb.p("clust") + "/cluster_report.txt");
    CHECK(report.find("silhouette\t") != std::string::npos);
    CHECK(report.find("adjusted_rand_index\t") != std::string::npos);

    CHECK(run("sweep-mask --corpus " + wb.p("tok") + "/corpus.vqtk --checkpoint " +
              wb.p("run") + "/ckpt_final.vqww --ids " + wb.p("run") + "/test_ids.txt" +
              " --fractions 0.1 0.2 --seed 3 --out " + wb.p("sweep")) == 0);
    CHECK(slurp(wb.p("sweep") + "/mask_sweep.tsv").find("fraction\taccuracy") !=
          std::string::npos);

    // deterministic reruns: byte-identical metric logs
    CHECK(run("train --corpus " + wb.p("tok") + "/corpus.vqtk --out " + wb.p("run2") +
              " --config " + wb.p("train.cfg")) == 0);
    CHECK(slurp(wb.p("run") + "/metrics.tsv") == slurp(wb.p("run2") + "/metrics.tsv"));
}
