#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "decs/autoencoder.hpp"
#include "decs/checkpoint.hpp"
#include "decs/data_io.hpp"
#include "decs/metrics.hpp"
#include "decs/stability_grad.hpp"
#include "decs/trainer.hpp"

namespace fs = std::filesystem;
using namespace decs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

// Usage or I/O problem detected by the tool itself.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : split(s, ',')) {
    std::size_t v = 0;
    const auto t = trim(part);
    const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size() || v == 0) {
      throw UsageError("bad layer width list '" + s + "'");
    }
    out.push_back(v);
  }
  return out;
}

// key=value lines; '#' starts a comment line. Keys may use '_' or '-'.
std::vector<std::string> config_args(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::vector<std::string> args;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError(path.string() + ":" + std::to_string(no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    for (auto& c : key) c = c == '_' ? '-' : c;
    if (key == "config") continue;
    args.push_back("--" + key + "=" + trim(line.substr(eq + 1)));
  }
  return args;
}

// Splices the contents of any --config file in front of the explicit
// arguments, so that explicit flags (parsed later) take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> from_file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      from_file = config_args(args[i + 1]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      from_file = config_args(args[i].substr(9));
    }
  }
  if (!from_file.empty() && !args.empty()) args.insert(args.begin() + 1, from_file.begin(), from_file.end());
  return args;
}

// Resolved settings of a run, written as a replayable config file.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), started_(utc_now()) {}
  void set(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }
  void set(const std::string& key, double value) { set(key, num(value)); }
  void set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    out << "# decs run manifest\n";
    out << "# tool_version=" << DECS_VERSION << "\n";
    out << "# command=" << command_ << "\n";
    out << "# started=" << started_ << "\n";
    out << "# finished=" << utc_now() << "\n";
    for (const auto& [k, v] : entries_) out << k << "=" << v << "\n";
    if (!out) throw UsageError("cannot write " + path.string());
  }

 private:
  std::string command_;
  std::string started_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create directory " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Shared option groups

struct DataOptions {
  std::string data;
  std::string labels;
  std::string format = "auto";
  bool has_labels = true;

  void add(CLI::App& app) {
    app.add_option("--data", data, "Input dataset (CSV or IDX images; comma-separate parts to merge)")->required();
    app.add_option("--labels", labels, "IDX label file(s) matching --data");
    app.add_option("--format", format, "Input format")->check(CLI::IsMember({"auto", "csv", "idx"}));
    app.add_flag("--has-labels", has_labels, "CSV input carries integer labels in its last column");
  }

  void record(Manifest& m) const {
    m.set("data", data);
    if (!labels.empty()) m.set("labels", labels);
    m.set("format", format);
    m.set("has_labels", has_labels);
  }

  Dataset load() const {
    const auto parts = split(data, ',');
    const auto label_parts = split(labels, ',');
    if (!label_parts.empty() && label_parts.size() != parts.size()) {
      throw UsageError("--labels needs one file per --data part");
    }
    for (const auto& p : parts) {
      if (!fs::is_regular_file(p)) throw UsageError("data file not found: " + p);
    }
    std::vector<Dataset> sets;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const bool csv = format == "csv" || (format == "auto" && fs::path(parts[i]).extension() == ".csv");
      if (csv) {
        sets.push_back(load_csv(parts[i], has_labels));
      } else {
        std::optional<fs::path> lp;
        if (!label_parts.empty()) lp = label_parts[i];
        sets.push_back(load_idx(parts[i], lp));
      }
    }
    return sets.size() == 1 ? std::move(sets.front()) : concatenate(sets, data);
  }
};

struct AugmentOptions {
  std::string mode = "none";
  AugmentSpec spec;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::int64_t seed = -1;

  void add(CLI::App& app) {
    app.add_option("--augment", mode, "Input augmentation")->check(CLI::IsMember({"none", "image", "vector"}));
    app.add_option("--max-shift-px", spec.max_shift_px, "Largest integer image shift");
    app.add_option("--max-rotate-deg", spec.max_rotate_deg, "Largest image rotation in degrees");
    app.add_option("--noise-sigma", spec.noise_sigma, "Gaussian noise in vector mode");
    app.add_option("--augment-seed", seed, "Augmentation seed (defaults to --seed)");
    app.add_option("--image-height", image_height, "Image height when the data carries no shape");
    app.add_option("--image-width", image_width, "Image width when the data carries no shape");
  }

  void record(Manifest& m) const {
    m.set("augment", mode);
    m.set("max_shift_px", spec.max_shift_px);
    m.set("max_rotate_deg", spec.max_rotate_deg);
    m.set("noise_sigma", spec.noise_sigma);
    m.set("augment_seed", std::to_string(seed));
    if (image_height) m.set("image_height", image_height);
    if (image_width) m.set("image_width", image_width);
  }

  std::optional<AugmentSpec> resolve(const Dataset& d, std::uint64_t run_seed) const {
    if (mode == "none") return std::nullopt;
    AugmentSpec s = spec;
    s.mode = mode == "image" ? AugmentMode::image : AugmentMode::vector;
    s.seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : run_seed;
    if (image_height && image_width) {
      s.image_height = image_height;
      s.image_width = image_width;
    } else if (d.image_shape) {
      s.image_height = d.image_shape->height;
      s.image_width = d.image_shape->width;
    }
    s.validate(d.dim());
    return s;
  }
};

void write_labels(const fs::path& path, const AssignmentLabels& labels) {
  auto out = open_out(path);
  out << "label\n";
  for (const int l : labels) out << l << "\n";
}

// Last column of every row as an integer; a non-numeric first row is a header.
std::vector<int> read_label_column(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::vector<int> out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    line = trim(line);
    if (line.empty()) continue;
    const auto cell = trim(line.substr(line.rfind(',') == std::string::npos ? 0 : line.rfind(',') + 1));
    int v = 0;
    const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (r.ec != std::errc() || r.ptr != cell.data() + cell.size()) {
      if (no == 1) continue;
      throw DataFormatError(path.string() + ":" + std::to_string(no) + ": label '" + cell + "' is not an integer");
    }
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct SynthCommand {
  BlobSpec spec;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--k", spec.k, "Number of clusters");
    app.add_option("--per-cluster", spec.per_cluster, "Samples per cluster");
    app.add_option("--dim", spec.dim, "Feature dimension");
    app.add_option("--center-low", spec.center_low, "Lower edge of the center box");
    app.add_option("--center-high", spec.center_high, "Upper edge of the center box");
    app.add_option("--sigma", spec.sigma, "Isotropic standard deviation");
    app.add_option("--seed", spec.seed, "Random seed");
    app.add_option("--out", out, "Output CSV (features, then label)")->required();
  }

  int run() const {
    Manifest m("synth");
    m.set("k", spec.k);
    m.set("per_cluster", spec.per_cluster);
    m.set("dim", spec.dim);
    m.set("center_low", spec.center_low);
    m.set("center_high", spec.center_high);
    m.set("sigma", spec.sigma);
    m.set("seed", std::to_string(spec.seed));
    m.set("out", out);
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const auto data = gen_blobs(spec);
    write_csv(out, data);
    m.write(out + ".manifest");
    std::printf("wrote %zu x %zu samples to %s\n", data.size(), data.dim(), out.c_str());
    return kExitOk;
  }
};

struct PretrainCommand {
  DataOptions data;
  AugmentOptions aug;
  std::string hidden = "500,500,2000";
  std::size_t latent = 10;
  PretrainConfig config;
  std::string out_dir;

  void add(CLI::App& app) {
    data.add(app);
    aug.add(app);
    app.add_option("--hidden", hidden, "Encoder hidden widths, comma-separated (decoder mirrors them)");
    app.add_option("--latent", latent, "Embedding dimension");
    app.add_option("--epochs", config.epochs, "Training epochs");
    app.add_option("--batch-size", config.batch_size, "Mini-batch size");
    app.add_option("--learning-rate", config.adam.learning_rate, "Adam step size");
    app.add_option("--seed", config.seed, "Seed for initialization and shuffling");
    app.add_option("--out-dir", out_dir, "Output directory")->required();
  }

  int run() {
    Manifest m("pretrain");
    data.record(m);
    aug.record(m);
    m.set("hidden", hidden);
    m.set("latent", latent);
    m.set("epochs", config.epochs);
    m.set("batch_size", config.batch_size);
    m.set("learning_rate", config.adam.learning_rate);
    m.set("seed", std::to_string(config.seed));
    m.set("out_dir", out_dir);

    const auto widths = parse_widths(hidden);
    if (latent == 0) throw UsageError("--latent must be >= 1");
    if (config.batch_size == 0) throw UsageError("--batch-size must be >= 1");
    const Dataset d = data.load();
    config.augment = aug.resolve(d, config.seed);
    auto ae = make_autoencoder(d.dim(), widths, latent, config.seed);

    make_dir(out_dir);
    const fs::path dir(out_dir);
    auto trace = open_out(dir / "pretrain_loss.csv");
    trace << "epoch,loss\n";
    const auto result = pretrain(d.features, ae.encoder, ae.decoder, config, [&](std::size_t epoch, double loss) {
      trace << epoch << "," << num(loss) << "\n";
    });
    save_checkpoint(dir / "checkpoint.bin", Checkpoint{ae.encoder, ae.decoder, std::nullopt});
    m.write(dir / "manifest.txt");
    if (!result.epoch_loss.empty()) {
      std::printf("pretrained %zu epochs, final loss %s\n", result.epoch_loss.size(),
                  num(result.epoch_loss.back()).c_str());
    }
    return kExitOk;
  }
};

struct ClusterCommand {
  DataOptions data;
  AugmentOptions aug;
  std::string checkpoint;
  TrainConfig config;
  std::string out_dir;

  void add(CLI::App& app) {
    data.add(app);
    aug.add(app);
    app.add_option("--checkpoint", checkpoint, "Pretrained autoencoder checkpoint")->required();
    app.add_option("--k", config.k, "Number of clusters")->required();
    app.add_option("--alpha", config.alpha, "Student-t degrees of freedom");
    app.add_option("--lambda", config.lambda, "Variance weight in sample stability");
    app.add_option("--batch-size", config.batch_size, "Mini-batch size");
    app.add_option("--max-iter", config.max_iter, "Iteration budget");
    app.add_option("--sgd-lr", config.sgd_lr, "SGD step size");
    app.add_option("--sgd-momentum", config.sgd_momentum, "SGD momentum");
    app.add_option("--label-change-tol", config.label_change_tol, "Stop when fewer labels change per epoch");
    app.add_option("--seed", config.seed, "Seed for k-means and shuffling");
    app.add_option("--snapshot-every", config.snapshot_every, "Write embeddings every N iterations (0 = off)");
    app.add_flag("--include-reconstruction-in-clustering", config.include_reconstruction_in_clustering,
                 "Add the reconstruction loss and train the decoder too");
    app.add_flag("--freeze-encoder", config.freeze_encoder, "Only move centroids");
    app.add_flag("--augment-in-clustering", config.augment_in_clustering, "Augment inputs during clustering");
    app.add_option("--out-dir", out_dir, "Output directory")->required();
  }

  int run() {
    Manifest m("cluster");
    data.record(m);
    aug.record(m);
    m.set("checkpoint", checkpoint);
    m.set("k", config.k);
    m.set("alpha", config.alpha);
    m.set("lambda", config.lambda);
    m.set("batch_size", config.batch_size);
    m.set("max_iter", config.max_iter);
    m.set("sgd_lr", config.sgd_lr);
    m.set("sgd_momentum", config.sgd_momentum);
    m.set("label_change_tol", config.label_change_tol);
    m.set("seed", std::to_string(config.seed));
    m.set("snapshot_every", config.snapshot_every);
    m.set("include_reconstruction_in_clustering", config.include_reconstruction_in_clustering);
    m.set("freeze_encoder", config.freeze_encoder);
    m.set("augment_in_clustering", config.augment_in_clustering);
    m.set("out_dir", out_dir);

    if (!fs::is_regular_file(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint);
    const Dataset d = data.load();
    const Checkpoint ckpt = load_checkpoint(checkpoint);
    if (ckpt.encoder.input_dim() != d.dim()) {
      throw UsageError("checkpoint expects " + std::to_string(ckpt.encoder.input_dim()) +
                       " features, data has " + std::to_string(d.dim()));
    }
    if (config.k > d.size()) {
      throw UsageError("k = " + std::to_string(config.k) + " exceeds the " + std::to_string(d.size()) + " samples");
    }
    config.augment = aug.resolve(d, config.seed);
    try {
      config.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }

    make_dir(out_dir);
    const fs::path dir(out_dir);
    TrainHooks hooks;
    if (config.snapshot_every > 0) {
      make_dir(dir / "snapshots");
      hooks.on_snapshot = [&](const Snapshot& s) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "%08zu", s.iter);
        write_csv(dir / "snapshots" / ("embeddings_" + std::string(stem) + ".csv"),
                  Dataset{s.embeddings, std::nullopt, s.labels, {}});
        write_csv(dir / "snapshots" / ("centroids_" + std::string(stem) + ".csv"),
                  Dataset{s.centroids, std::nullopt, std::nullopt, {}});
      };
    }
    auto history = open_out(dir / "history.csv");
    history << "iter,L_c,t,grad_norm,bound_M,epoch,mean_stability,label_change,t_degenerate,invariant_violations\n";
    hooks.on_epoch = [&](const EpochRecord& e) {
      history << e.iter << "," << num(e.loss) << "," << num(e.t) << "," << num(e.grad_norm) << ","
              << num(e.bound_m) << "," << e.epoch << "," << num(e.mean_stability) << ","
              << num(e.label_change) << "," << (e.t_degenerate ? 1 : 0) << "," << e.invariant_violations
              << "\n";
    };

    TrainResult r;
    try {
      r = train(d.features, ckpt.encoder, config, hooks, &ckpt.decoder);
    } catch (const TrainingDivergence& e) {
      save_checkpoint(dir / "diverged.bin", Checkpoint{e.encoder(), ckpt.decoder, e.centroids()});
      m.write(dir / "manifest.txt");
      throw;
    }
    history.close();

    write_labels(dir / "labels.csv", r.labels);
    {
      auto trace = open_out(dir / "loss_trace.csv");
      trace << "iter,L_c\n";
      for (std::size_t i = 0; i < r.loss_trace.size(); ++i) trace << i + 1 << "," << num(r.loss_trace[i]) << "\n";
    }
    save_checkpoint(dir / "checkpoint.bin",
                    Checkpoint{r.encoder, r.decoder ? *r.decoder : ckpt.decoder, r.centroids});
    m.write(dir / "manifest.txt");
    std::printf("%zu iterations, %s\n", r.iterations, r.converged ? "converged" : "iteration budget reached");
    if (d.truth) {
      const auto report = evaluate(r.labels, *d.truth);
      write_text(std::cout, report);
      auto out = open_out(dir / "eval.csv");
      write_csv(out, report);
    }
    return kExitOk;
  }
};

struct EvalCommand {
  std::string pred;
  std::string truth;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--pred", pred, "Predicted labels (last CSV column)")->required();
    app.add_option("--truth", truth, "True labels (last CSV column)")->required();
    app.add_option("--out", out, "CSV report path");
  }

  int run() const {
    for (const auto& p : {pred, truth}) {
      if (!fs::is_regular_file(p)) throw UsageError("label file not found: " + p);
    }
    const auto a = read_label_column(pred);
    const auto b = read_label_column(truth);
    if (a.size() != b.size()) {
      throw UsageError("label length mismatch: " + std::to_string(a.size()) + " predicted vs " +
                       std::to_string(b.size()) + " true");
    }
    if (a.empty()) throw UsageError("no labels in " + pred);
    const auto report = evaluate(a, b);
    write_text(std::cout, report);
    if (!out.empty()) {
      auto os = open_out(out);
      write_csv(os, report);
      Manifest m("eval");
      m.set("pred", pred);
      m.set("truth", truth);
      m.set("out", out);
      m.write(out + ".manifest");
    }
    return kExitOk;
  }
};

struct GradcheckCommand {
  std::uint64_t seed = 0;
  std::size_t configs = 12;
  std::size_t ae_configs = 3;
  double tolerance = 1e-5;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--seed", seed, "First seed of the sweep");
    app.add_option("--configs", configs, "Clustering-chain configurations (t cycles 0.2, 0.5, 0.8)");
    app.add_option("--ae-configs", ae_configs, "Autoencoder configurations");
    app.add_option("--tolerance", tolerance, "Largest accepted relative error")->check(CLI::PositiveNumber);
    app.add_option("--out", out, "Report path (also printed)");
  }

  int run() const {
    static constexpr double kThresholds[] = {0.2, 0.5, 0.8};
    GradCheckReport total;
    total.tolerance = tolerance;
    for (std::size_t c = 0; c < configs; ++c) {
      GradCheckConfig cfg;
      cfg.seed = seed + c;
      cfg.params.t = kThresholds[c % 3];
      total.merge(finite_difference_check(cfg, tolerance), "cluster" + std::to_string(c) + ".");
    }
    for (std::size_t c = 0; c < ae_configs; ++c) {
      total.merge(ae_gradient_check(seed + c, tolerance), "ae" + std::to_string(c) + ".");
    }
    std::ostringstream report;
    write_report(report, total);
    std::cout << report.str();
    if (!out.empty()) {
      auto os = open_out(out);
      os << report.str();
      Manifest m("gradcheck");
      m.set("seed", std::to_string(seed));
      m.set("configs", configs);
      m.set("ae_configs", ae_configs);
      m.set("tolerance", tolerance);
      m.set("out", out);
      m.write(out + ".manifest");
    }
    return total.pass ? kExitOk : kExitFailed;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep embedding clustering driven by sample stability"};
  app.set_version_flag("--version", DECS_VERSION);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  SynthCommand synth;
  PretrainCommand pre;
  ClusterCommand cluster;
  EvalCommand eval;
  GradcheckCommand grad;
  std::string config_file;
  const auto sub = [&](const char* name, const char* help, auto& cmd) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--config", config_file, "key=value file; explicit flags override it");
    cmd.add(*s);
    return s;
  };
  auto* s_synth = sub("synth", "Generate a Gaussian blob dataset as CSV", synth);
  auto* s_pre = sub("pretrain", "Pretrain the autoencoder on reconstruction loss", pre);
  auto* s_cluster = sub("cluster", "Run stability-driven clustering from a pretrained checkpoint", cluster);
  auto* s_eval = sub("eval", "Score predicted labels against truth (ACC, NMI)", eval);
  auto* s_grad = sub("gradcheck", "Check analytic gradients against finite differences", grad);

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (s_synth->parsed()) return synth.run();
    if (s_pre->parsed()) return pre.run();
    if (s_cluster->parsed()) return cluster.run();
    if (s_eval->parsed()) return eval.run();
    if (s_grad->parsed()) return grad.run();
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitFailed;
  } catch (const TrainingDivergence& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
