#include <doctest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "decs/checkpoint.hpp"
#include "decs/data_io.hpp"
#include "decs/metrics.hpp"
#include "decs/trainer.hpp"

namespace fs = std::filesystem;
using namespace decs;

namespace {

fs::path scratch() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / ("decs_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Run {
  int code = -1;
  std::string output;
};

Run decs_cli(const std::string& args) {
  const auto log = scratch() / "last.log";
  const std::string cmd = "cd '" + scratch().string() + "' && '" DECS_CLI_PATH "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::ostringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(scratch() / p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<int> read_labels(const fs::path& p) {
  std::ifstream in(scratch() / p);
  std::string line;
  std::getline(in, line);
  std::vector<int> out;
  while (std::getline(in, line)) out.push_back(std::stoi(line));
  return out;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(scratch() / p) << s; }

// A small blob set and a pretrained checkpoint shared by the cluster tests.
void small_fixture() {
  static bool done = false;
  if (done) return;
  REQUIRE(decs_cli("synth --k 3 --per-cluster 60 --dim 4 --seed 2 --out small.csv").code == 0);
  REQUIRE(decs_cli("pretrain --data small.csv --hidden 8 --latent 3 --epochs 20 --batch-size 32 "
                   "--out-dir small_pre").code == 0);
  done = true;
}

}  // namespace

TEST_SUITE("cli synth") {
  TEST_CASE("writes features plus label column, reproducibly") {
    REQUIRE(decs_cli("synth --k 4 --per-cluster 500 --dim 16 --seed 5 --out a.csv").code == 0);
    REQUIRE(decs_cli("synth --k 4 --per-cluster 500 --dim 16 --seed 5 --out b.csv").code == 0);
    CHECK(slurp("a.csv") == slurp("b.csv"));
    const auto d = load_csv(scratch() / "a.csv", true, false);
    CHECK(d.size() == 2000);
    CHECK(d.dim() == 16);
    CHECK(fs::exists(scratch() / "a.csv.manifest"));
  }

  TEST_CASE("sigma 0 gives duplicate rows within a cluster") {
    REQUIRE(decs_cli("synth --k 2 --per-cluster 5 --dim 3 --sigma 0 --out flat.csv").code == 0);
    const auto d = load_csv(scratch() / "flat.csv", true, false);
    for (std::size_t i = 1; i < 5; ++i) {
      CHECK(std::equal(d.features.row(i).begin(), d.features.row(i).end(), d.features.row(0).begin()));
    }
  }

  TEST_CASE("invalid spec is a usage error") {
    CHECK(decs_cli("synth --k 0 --out bad.csv").code == 2);
    CHECK(decs_cli("synth --sigma -1 --out bad.csv").code == 2);
    CHECK(decs_cli("synth").code == 2);
  }
}

TEST_SUITE("cli pretrain") {
  TEST_CASE("zero epochs leaves the initialization in the checkpoint") {
    REQUIRE(decs_cli("synth --k 2 --per-cluster 20 --dim 5 --out p.csv").code == 0);
    REQUIRE(decs_cli("pretrain --data p.csv --hidden 7,4 --latent 2 --epochs 0 --seed 9 --out-dir p0").code == 0);
    const auto ckpt = load_checkpoint(scratch() / "p0" / "checkpoint.bin");
    const std::size_t hidden[] = {7, 4};
    const auto init = make_autoencoder(5, hidden, 2, 9);
    CHECK(ckpt.encoder == init.encoder);
    CHECK(ckpt.decoder == init.decoder);
  }

  TEST_CASE("replaying the manifest reproduces the checkpoint bytes") {
    REQUIRE(decs_cli("synth --k 2 --per-cluster 20 --dim 5 --out p.csv").code == 0);
    REQUIRE(decs_cli("pretrain --data p.csv --hidden 6 --latent 2 --epochs 5 --batch-size 8 --augment vector "
                     "--out-dir r1").code == 0);
    REQUIRE(decs_cli("pretrain --config r1/manifest.txt --out-dir r2").code == 0);
    CHECK(slurp("r1/checkpoint.bin") == slurp("r2/checkpoint.bin"));
    CHECK(slurp("r1/pretrain_loss.csv") == slurp("r2/pretrain_loss.csv"));
  }

  TEST_CASE("missing data path exits 2 and writes nothing") {
    const auto r = decs_cli("pretrain --data missing.csv --out-dir nothing_here");
    CHECK(r.code == 2);
    CHECK(r.output.find("missing.csv") != std::string::npos);
    CHECK(!fs::exists(scratch() / "nothing_here"));
  }

  TEST_CASE("image augmentation needs an image shape") {
    REQUIRE(decs_cli("synth --k 2 --per-cluster 20 --dim 5 --out p.csv").code == 0);
    CHECK(decs_cli("pretrain --data p.csv --augment image --epochs 1 --out-dir img").code == 2);
  }
}

TEST_SUITE("cli cluster") {
  TEST_CASE("max-iter 0 returns the k-means labels") {
    small_fixture();
    REQUIRE(decs_cli("cluster --data small.csv --checkpoint small_pre/checkpoint.bin --k 3 --max-iter 0 "
                     "--out-dir c0").code == 0);
    const auto d = load_csv(scratch() / "small.csv", true);
    const auto ckpt = load_checkpoint(scratch() / "small_pre" / "checkpoint.bin");
    const auto km = kmeans_init(encode(d.features, ckpt.encoder), 3, 0);
    CHECK(read_labels("c0/labels.csv") == km.labels);
  }

  TEST_CASE("snapshot count is floor(iters / 100) + 1") {
    small_fixture();
    REQUIRE(decs_cli("cluster --data small.csv --checkpoint small_pre/checkpoint.bin --k 3 --max-iter 250 "
                     "--label-change-tol 0 --snapshot-every 100 --out-dir c1").code == 0);
    std::size_t embeddings = 0, centroids = 0;
    for (const auto& e : fs::directory_iterator(scratch() / "c1" / "snapshots")) {
      const auto name = e.path().filename().string();
      embeddings += name.rfind("embeddings_", 0) == 0;
      centroids += name.rfind("centroids_", 0) == 0;
    }
    CHECK(embeddings == 3);
    CHECK(centroids == 3);
    // d embedding columns then the label.
    const auto snap = load_csv(scratch() / "c1" / "snapshots" / "embeddings_00000100.csv", true, false);
    CHECK(snap.size() == 180);
    CHECK(snap.dim() == 3);
  }

  TEST_CASE("history carries threshold, gradient norm and bound per epoch") {
    small_fixture();
    REQUIRE(decs_cli("cluster --data small.csv --checkpoint small_pre/checkpoint.bin --k 3 --max-iter 30 "
                     "--label-change-tol 0 --out-dir c2").code == 0);
    const auto h = slurp("c2/history.csv");
    CHECK(h.rfind("iter,L_c,t,grad_norm,bound_M,", 0) == 0);
    CHECK(std::count(h.begin(), h.end(), '\n') == 1 + 30);  // 180 samples fit one batch: one epoch per iteration
  }

  TEST_CASE("identical flags give identical outputs") {
    small_fixture();
    const std::string base = "cluster --data small.csv --checkpoint small_pre/checkpoint.bin --k 3 --max-iter 40 ";
    REQUIRE(decs_cli(base + "--out-dir d1").code == 0);
    REQUIRE(decs_cli(base + "--out-dir d2").code == 0);
    for (const char* f : {"labels.csv", "history.csv", "loss_trace.csv", "checkpoint.bin"}) {
      CHECK(slurp(fs::path("d1") / f) == slurp(fs::path("d2") / f));
    }
  }

  TEST_CASE("explicit flags override the config file") {
    small_fixture();
    write_text("k2.cfg", "# comment\nk = 2\nmax_iter=5\nsgd-lr=0.05\n");
    REQUIRE(decs_cli("cluster --config k2.cfg --data small.csv --checkpoint small_pre/checkpoint.bin --k 3 "
                     "--out-dir cfg").code == 0);
    const auto m = slurp("cfg/manifest.txt");
    CHECK(m.find("\nk=3\n") != std::string::npos);
    CHECK(m.find("\nmax_iter=5\n") != std::string::npos);
    CHECK(m.find("\nsgd_lr=0.05\n") != std::string::npos);
  }

  TEST_CASE("k larger than n and bad checkpoints are usage errors") {
    small_fixture();
    CHECK(decs_cli("cluster --data small.csv --checkpoint small_pre/checkpoint.bin --k 500 --out-dir e1").code == 2);
    auto bytes = slurp("small_pre/checkpoint.bin");
    bytes[4] = 99;  // format version
    write_text("future.bin", bytes);
    const auto r = decs_cli("cluster --data small.csv --checkpoint future.bin --k 3 --out-dir e2");
    CHECK(r.code == 2);
    CHECK(r.output.find("version") != std::string::npos);
    CHECK(decs_cli("cluster --data small.csv --checkpoint nope.bin --k 3 --out-dir e3").code == 2);
  }

  TEST_CASE("blob fixture end to end reaches ACC >= 0.95") {
    REQUIRE(decs_cli("synth --seed 0 --out blobs.csv").code == 0);
    REQUIRE(decs_cli("pretrain --data blobs.csv --hidden 64,32 --latent 10 --epochs 50 --out-dir blob_pre").code == 0);
    const auto r = decs_cli("cluster --data blobs.csv --checkpoint blob_pre/checkpoint.bin --k 4 --max-iter 2000 "
                            "--sgd-lr 0.1 --label-change-tol 0 --out-dir blob_run");
    REQUIRE(r.code == 0);
    const auto truth = load_csv(scratch() / "blobs.csv", true).truth.value();
    CHECK(accuracy(read_labels("blob_run/labels.csv"), truth) >= 0.95);
  }
}

TEST_SUITE("cli eval") {
  TEST_CASE("identical, permuted and partial labelings") {
    write_text("t.csv", "label\n0\n0\n1\n1\n");
    write_text("perm.csv", "label\n1\n1\n0\n0\n");
    write_text("part.csv", "label\n0\n1\n1\n1\n");
    auto r = decs_cli("eval --pred t.csv --truth t.csv");
    CHECK(r.code == 0);
    CHECK(r.output.find("ACC=1.000000 NMI=1.000000") != std::string::npos);
    r = decs_cli("eval --pred perm.csv --truth t.csv");
    CHECK(r.output.find("ACC=1.000000") != std::string::npos);
    r = decs_cli("eval --pred part.csv --truth t.csv --out rep.csv");
    CHECK(r.output.find("ACC=0.750000") != std::string::npos);
    CHECK(slurp("rep.csv").rfind("n,k_pred,k_true,acc,nmi\n4,2,2,0.75,", 0) == 0);
  }

  TEST_CASE("truth may come from a dataset's label column") {
    write_text("ds.csv", "0.1,0.2,3\n0.3,0.4,3\n0.5,0.6,7\n");
    write_text("p3.csv", "label\n2\n2\n0\n");
    CHECK(decs_cli("eval --pred p3.csv --truth ds.csv").output.find("ACC=1.000000") != std::string::npos);
  }

  TEST_CASE("length mismatch exits 2") {
    write_text("t.csv", "label\n0\n0\n1\n1\n");
    write_text("short.csv", "label\n0\n1\n");
    CHECK(decs_cli("eval --pred short.csv --truth t.csv").code == 2);
  }
}

TEST_SUITE("cli gradcheck") {
  TEST_CASE("default sweep passes and is byte-reproducible") {
    REQUIRE(decs_cli("gradcheck --seed 4 --out g1.txt").code == 0);
    REQUIRE(decs_cli("gradcheck --seed 4 --out g2.txt").code == 0);
    CHECK(slurp("g1.txt") == slurp("g2.txt"));
    const auto rep = slurp("g1.txt");
    CHECK(rep.find("cluster0.") != std::string::npos);
    CHECK(rep.find("ae0.") != std::string::npos);
    CHECK(rep.substr(rep.size() - 5) == "PASS\n");
  }

  TEST_CASE("tolerance below float noise fails and names the worst coordinate") {
    const auto r = decs_cli("gradcheck --tolerance 1e-12");
    CHECK(r.code == 1);
    CHECK(r.output.find("# worst=") != std::string::npos);
    CHECK(r.output.find("FAIL") != std::string::npos);
  }
}
