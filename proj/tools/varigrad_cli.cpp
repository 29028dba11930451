// Command-line surface for the varifold-gradient pipeline: synthetic data
// generation, gradient checking, training, evaluation and the
// reparameterization-invariance experiment. Every command writes a run
// manifest into --out before any result file, and reruns with the same flags
// and seed reproduce the result files (timestamps live only in the manifest).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "varigrad/datasets.hpp"
#include "varigrad/model_io.hpp"
#include "varigrad/models.hpp"
#include "varigrad/shape_io.hpp"
#include "varigrad/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace varigrad;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitCheckFailed = 2;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

/// Written atomically before any result file; every result references it.
void write_manifest(const fs::path& out_dir, const std::string& command, const json& flags,
                    std::uint64_t seed, const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["rng_seed"] = seed;
  m["flags"] = flags;
  m["created_utc"] = utc_now();
  m["outputs"] = outputs;
  write_text_atomic(out_dir / "manifest.json", m.dump(2) + "\n");
}

fs::path prepare_out_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out directory is required");
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("VARIGRAD_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

data::LabeledDataset load_labeled(const std::string& path, const std::string& tag) {
  data::LabeledDataset ds;
  ds.shapes = read_dataset_file(path);
  ds.split_tag = tag;
  if (ds.shapes.empty()) throw EmptyDatasetError("dataset is empty: " + path);
  return ds;
}

void write_metrics_csv(const fs::path& path, const nn::TrainLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "epoch,split,loss,accuracy_or_error,seconds_per_batch,manifest\n";
  for (const auto& row : log.rows)
    out << row.epoch << "," << row.split << "," << fmt(row.loss) << "," << fmt(row.metric) << ","
        << fmt(row.sec_per_batch) << ",manifest.json\n";
}

struct GenArgs {
  std::string kind = "curve";
  int classes = 4;
  int per_class = 100;
  Index vmin = 64;
  Index vmax = 96;
  double noise = 0.01;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  data::SyntheticSpec spec;
  spec.kind = a.kind == "curve" ? data::Kind::Curve : data::Kind::StickFigure;
  spec.class_count = a.classes;
  spec.samples_per_class = a.per_class;
  spec.min_vertices = a.vmin;
  spec.max_vertices = a.vmax;
  spec.noise_scale = a.noise;
  spec.rng_seed = a.seed;

  const fs::path dir = prepare_out_dir(a.out);
  json flags = {{"kind", a.kind},        {"classes", a.classes}, {"per_class", a.per_class},
                {"vmin", a.vmin},        {"vmax", a.vmax},       {"noise", a.noise},
                {"test_fraction", a.test_fraction}, {"seed", a.seed}, {"out", a.out}};
  write_manifest(dir, "gen", flags, a.seed, {"train.jsonl", "test.jsonl"});

  const auto ds = data::generate(spec);
  const auto [train, test] = data::split(ds, a.test_fraction, a.seed);
  write_dataset_file((dir / "train.jsonl").string(), train.shapes);
  write_dataset_file((dir / "test.jsonl").string(), test.shapes);
  std::cout << "wrote " << train.shapes.size() << " train / " << test.shapes.size() << " test shapes to "
            << dir.string() << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  int n = 100;
  double h = 1e-5;
  double tol = 1e-4;
  double sigma_ratio = 0.2;
  std::uint64_t seed = 20;
  std::string out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.n < 1) throw ConfigError("--n must be positive");
  Rng rng(a.seed);
  double max_rel = 0, mean_sum = 0;
  for (int i = 0; i < a.n; ++i) {
    const ShapeGraph g1 = data::random_open_curve(rng, 10, 40);
    const ShapeGraph g2 = data::random_open_curve(rng, 10, 40);
    const KernelConfig k = default_kernel(g1, a.sigma_ratio);
    const auto report = check_grad(g1, g2, k, a.h, a.tol);
    max_rel = std::max(max_rel, report.max_rel_err);
    mean_sum += report.mean_rel_err;
  }
  const bool passed = max_rel <= a.tol;
  json report = {{"pairs", a.n},       {"h", a.h},
                 {"tol", a.tol},       {"sigma_ratio", a.sigma_ratio},
                 {"seed", a.seed},     {"max_rel_err", max_rel},
                 {"mean_rel_err", mean_sum / a.n}, {"passed", passed}};
  if (!a.out.empty()) {
    const fs::path dir = prepare_out_dir(a.out);
    json flags = {{"n", a.n}, {"h", a.h}, {"tol", a.tol}, {"sigma_ratio", a.sigma_ratio}, {"seed", a.seed}};
    write_manifest(dir, "gradcheck", flags, a.seed, {"gradcheck.json"});
    report["manifest"] = "manifest.json";
    write_text_atomic(dir / "gradcheck.json", report.dump(2) + "\n");
  }
  std::cout << report.dump(2) << "\n";
  return passed ? kExitOk : kExitCheckFailed;
}

struct TrainArgs {
  std::string task = "classifier";
  std::string encoder = "varigrad";
  std::string data_path;
  std::string test_path;
  std::string template_path;
  int template_index = 0;
  int epochs = 50;
  int batch = 10;
  double lr = 1e-3;
  int latent = 64;
  double sigma_ratio = 0.2;
  bool edge_pool = false;
  std::vector<Index> conv_channels{3, 16, 32};
  std::vector<Index> head_widths{256, 128};
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out;
};

/// --template <path> wins; otherwise the template is the k-th training shape
/// after a seeded shuffle. A sidecar JSON records the kernel ratio.
ShapeGraph pick_template(const TrainArgs& a, const data::LabeledDataset& train) {
  if (!a.template_path.empty()) {
    if (!fs::exists(a.template_path)) throw ConfigError("template file not found: " + a.template_path);
    ShapeGraph t = read_shape_file(a.template_path);
    t.label.reset();
    return t;
  }
  if (a.template_index < 0 || static_cast<std::size_t>(a.template_index) >= train.shapes.size())
    throw ConfigError("--template-index outside the training set");
  Rng rng(a.seed);
  const auto order = rng.permutation(static_cast<Index>(train.shapes.size()));
  ShapeGraph t = train.shapes[static_cast<std::size_t>(order[static_cast<std::size_t>(a.template_index)])];
  t.label.reset();
  return t;
}

int cmd_train(const TrainArgs& a) {
  if (a.data_path.empty() || !fs::exists(a.data_path)) throw ConfigError("training dataset not found: " + a.data_path);
  if (a.test_path.empty() || !fs::exists(a.test_path)) throw ConfigError("test dataset not found: " + a.test_path);
  const int threads = resolve_threads(a.threads);

  const auto train_ds = load_labeled(a.data_path, "train");
  const auto test_ds = load_labeled(a.test_path, "test");
  const ShapeGraph template_shape = pick_template(a, train_ds);

  nn::ModelConfig mc;
  mc.task = nn::task_from_string(a.task);
  mc.encoder = nn::encoder_from_string(a.encoder);
  mc.latent_dim = a.latent;
  mc.conv_channels = a.conv_channels;
  mc.head_widths = a.head_widths;
  mc.sigma_ratio = a.sigma_ratio;
  mc.edge_pool = a.edge_pool;
  mc.init_seed = a.seed;
  mc.template_shape = template_shape;
  if (mc.task == nn::Task::Classifier) {
    int max_label = -1;
    for (const auto& g : train_ds.shapes)
      if (g.label) max_label = std::max(max_label, *g.label);
    mc.class_count = max_label + 1;
    if (mc.class_count < 2) throw SingleClassError("training set needs at least 2 classes");
  }

  const fs::path dir = prepare_out_dir(a.out);
  json flags = {{"task", a.task},       {"encoder", a.encoder},   {"data", a.data_path},
                {"test", a.test_path},  {"template", a.template_path}, {"template_index", a.template_index},
                {"epochs", a.epochs},   {"batch", a.batch},       {"lr", a.lr},
                {"latent", a.latent},   {"sigma_ratio", a.sigma_ratio}, {"edge_pool", a.edge_pool},
                {"seed", a.seed},       {"threads", threads}};
  write_manifest(dir, "train", flags, a.seed,
                 {"model.bin", "metrics.csv", "template.json", "template.sigma.json"});

  write_shape_file((dir / "template.json").string(), template_shape);
  write_text_atomic(dir / "template.sigma.json", json{{"sigma_ratio", a.sigma_ratio}}.dump() + "\n");

  nn::Model model = nn::build_model(mc);
  nn::TrainConfig tc;
  tc.batch_size = a.batch;
  tc.epochs = a.epochs;
  tc.learning_rate = a.lr;
  tc.rng_seed = a.seed;
  tc.latent_dim = a.latent;
  tc.class_count = mc.class_count;

  const nn::TrainLog log = mc.task == nn::Task::Classifier
                               ? nn::train_classifier(model, train_ds, test_ds, tc, threads)
                               : nn::train_autoencoder(model, train_ds, test_ds, tc, threads);

  nn::save_model((dir / "model.bin").string(), model);
  write_metrics_csv(dir / "metrics.csv", log);
  if (!log.rows.empty()) {
    const auto& last = log.rows.back();
    std::cout << "final " << last.split << " "
              << (mc.task == nn::Task::Classifier ? "accuracy " : "mean varifold error ") << fmt(last.metric)
              << "; median s/batch " << fmt(log.median_sec_per_batch) << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string model_path;
  std::string data_path;
  int threads = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::exists(a.model_path)) throw ConfigError("model file not found: " + a.model_path);
  if (!fs::exists(a.data_path)) throw ConfigError("dataset not found: " + a.data_path);
  const int threads = resolve_threads(a.threads);
  auto loaded = nn::load_model(a.model_path);
  const auto ds = load_labeled(a.data_path, "eval");
  const nn::EvalResult r = nn::evaluate(loaded.model, ds, threads);

  json report;
  report["command"] = "eval";
  report["task"] = nn::to_string(loaded.model.config.task);
  report["encoder"] = nn::to_string(loaded.model.config.encoder);
  report["model"] = a.model_path;
  report["dataset"] = a.data_path;
  report["count"] = ds.shapes.size();
  if (loaded.model.config.task == nn::Task::Classifier) {
    report["loss"] = r.loss;
    report["accuracy"] = r.metric;
  } else {
    report["mean_varifold_error"] = r.metric;
  }
  if (!a.out.empty()) {
    const fs::path dir = prepare_out_dir(a.out);
    json flags = {{"model", a.model_path}, {"data", a.data_path}, {"threads", threads}};
    write_manifest(dir, "eval", flags, 0, {"eval.json"});
    report["manifest"] = "manifest.json";
    write_text_atomic(dir / "eval.json", report.dump(2) + "\n");
  }
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

struct InvarianceArgs {
  std::string model_varigrad;
  std::string model_pointnet;
  std::string data_path;
  int index = 0;
  int n = 100;
  bool permute_flip_only = false;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
};

struct SpreadStats {
  double mean_pairwise_dist_sq = 0;
  double mean_vertex_std = 0;
};

SpreadStats spread_of(const std::vector<ShapeGraph>& recons, const KernelConfig& k, int threads) {
  SpreadStats s;
  const auto n = static_cast<Index>(recons.size());
  if (n < 2) return s;
  std::vector<DiscreteVarifold> lifted(recons.size());
  std::vector<double> self(recons.size());
  parallel_for(n, threads, [&](Index i) {
    lifted[static_cast<std::size_t>(i)] = lift_clamped(recons[static_cast<std::size_t>(i)].vertices,
                                                       recons[static_cast<std::size_t>(i)].edges);
    self[static_cast<std::size_t>(i)] =
        inner(lifted[static_cast<std::size_t>(i)], lifted[static_cast<std::size_t>(i)], k);
  });
  double total = 0;
  Index pairs = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      total += std::max(0.0, self[static_cast<std::size_t>(i)] + self[static_cast<std::size_t>(j)] -
                                 2.0 * inner(lifted[static_cast<std::size_t>(i)], lifted[static_cast<std::size_t>(j)], k));
      ++pairs;
    }
  s.mean_pairwise_dist_sq = total / double(pairs);

  // Per-vertex standard deviation over the reconstructions (all share the
  // template vertex count), averaged into one scalar.
  const Index v = recons.front().vertices.rows();
  double std_sum = 0;
  for (Index vtx = 0; vtx < v; ++vtx) {
    Eigen::RowVector3d mean = Eigen::RowVector3d::Zero();
    for (const auto& r : recons) mean += r.vertices.row(vtx);
    mean /= double(n);
    double var = 0;
    for (const auto& r : recons) var += (r.vertices.row(vtx) - mean).squaredNorm();
    std_sum += std::sqrt(var / double(n));
  }
  s.mean_vertex_std = std_sum / double(v);
  return s;
}

int cmd_invariance(const InvarianceArgs& a) {
  if (!fs::exists(a.model_varigrad)) throw ConfigError("model file not found: " + a.model_varigrad);
  if (!fs::exists(a.model_pointnet)) throw ConfigError("model file not found: " + a.model_pointnet);
  if (!fs::exists(a.data_path)) throw ConfigError("dataset not found: " + a.data_path);
  if (a.n < 1) throw ConfigError("--n must be positive");
  const int threads = resolve_threads(a.threads);

  auto vg = nn::load_model(a.model_varigrad);
  auto pn = nn::load_model(a.model_pointnet);
  if (vg.model.config.task != nn::Task::Autoencoder || pn.model.config.task != nn::Task::Autoencoder)
    throw ConfigError("invariance needs two autoencoder models");
  if (vg.model.config.encoder != nn::EncoderKind::VariGrad) throw ConfigError("--model-varigrad is not a varigrad model");
  if (pn.model.config.encoder != nn::EncoderKind::PointNet) throw ConfigError("--model-pointnet is not a pointnet model");

  const auto ds = load_labeled(a.data_path, "source");
  if (a.index < 0 || static_cast<std::size_t>(a.index) >= ds.shapes.size())
    throw ConfigError("--index outside the dataset");
  const ShapeGraph& source = ds.shapes[static_cast<std::size_t>(a.index)];

  // The n random re-descriptions of the source shape.
  Rng rng(a.seed);
  std::vector<ShapeGraph> variants;
  variants.reserve(static_cast<std::size_t>(a.n));
  for (int i = 0; i < a.n; ++i) {
    ReparamSpec spec;
    spec.permute_vertices = rng.coin();
    spec.flip_edges = rng.coin();
    spec.resample_factor = a.permute_flip_only ? 1.0 : rng.uniform(0.7, 1.4);
    spec.rng_seed = rng.bits();
    variants.push_back(apply_reparam(source, spec));
  }

  std::vector<ShapeGraph> recon_vg(variants.size()), recon_pn(variants.size());
  parallel_for(static_cast<Index>(variants.size()), threads, [&](Index i) {
    recon_vg[static_cast<std::size_t>(i)] = nn::reconstruct(vg.model, variants[static_cast<std::size_t>(i)]);
    recon_pn[static_cast<std::size_t>(i)] = nn::reconstruct(pn.model, variants[static_cast<std::size_t>(i)]);
  });

  const KernelConfig& k = vg.model.kernel();
  const SpreadStats svg = spread_of(recon_vg, k, threads);
  const SpreadStats spn = spread_of(recon_pn, k, threads);

  json report;
  report["command"] = "invariance";
  report["n"] = a.n;
  report["source_index"] = a.index;
  report["permute_flip_only"] = a.permute_flip_only;
  report["varigrad"] = {{"mean_pairwise_dist_sq", svg.mean_pairwise_dist_sq},
                        {"mean_vertex_std", svg.mean_vertex_std}};
  report["pointnet"] = {{"mean_pairwise_dist_sq", spn.mean_pairwise_dist_sq},
                        {"mean_vertex_std", spn.mean_vertex_std}};
  report["spread_ratio"] =
      spn.mean_pairwise_dist_sq > 0 ? svg.mean_pairwise_dist_sq / spn.mean_pairwise_dist_sq : 0.0;

  if (!a.out.empty()) {
    const fs::path dir = prepare_out_dir(a.out);
    json flags = {{"model_varigrad", a.model_varigrad}, {"model_pointnet", a.model_pointnet},
                  {"data", a.data_path},                {"index", a.index},
                  {"n", a.n},                           {"permute_flip_only", a.permute_flip_only},
                  {"seed", a.seed},                     {"threads", threads}};
    write_manifest(dir, "invariance", flags, a.seed,
                   {"invariance.json", "variants.jsonl", "recons_varigrad.jsonl", "recons_pointnet.jsonl"});
    report["manifest"] = "manifest.json";
    write_dataset_file((dir / "variants.jsonl").string(), variants);
    write_dataset_file((dir / "recons_varigrad.jsonl").string(), recon_vg);
    write_dataset_file((dir / "recons_pointnet.jsonl").string(), recon_pn);
    write_text_atomic(dir / "invariance.json", report.dump(2) + "\n");
  }
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"varifold-gradient shape features: data generation, training, evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* cgen = app.add_subcommand("gen", "generate a synthetic labeled dataset and split it");
  cgen->add_option("--kind", gen.kind)->check(CLI::IsMember({"curve", "stickfigure"}));
  cgen->add_option("--classes", gen.classes);
  cgen->add_option("--per-class", gen.per_class);
  cgen->add_option("--vmin", gen.vmin);
  cgen->add_option("--vmax", gen.vmax);
  cgen->add_option("--noise", gen.noise);
  cgen->add_option("--test-fraction", gen.test_fraction);
  cgen->add_option("--seed", gen.seed);
  cgen->add_option("--out", gen.out)->required();

  GradcheckArgs gc;
  auto* cgc = app.add_subcommand("gradcheck", "verify the analytic gradient against central differences");
  cgc->add_option("--n", gc.n);
  cgc->add_option("--step", gc.h);
  cgc->add_option("--tol", gc.tol);
  cgc->add_option("--sigma-ratio", gc.sigma_ratio);
  cgc->add_option("--seed", gc.seed);
  cgc->add_option("--out", gc.out);

  TrainArgs tr;
  auto* ctr = app.add_subcommand("train", "train a classifier or autoencoder");
  ctr->add_option("--task", tr.task)->check(CLI::IsMember({"classifier", "autoencoder"}));
  ctr->add_option("--encoder", tr.encoder)->check(CLI::IsMember({"varigrad", "pointnet"}));
  ctr->add_option("--data", tr.data_path)->required();
  ctr->add_option("--test", tr.test_path)->required();
  ctr->add_option("--template", tr.template_path);
  ctr->add_option("--template-index", tr.template_index);
  ctr->add_option("--epochs", tr.epochs);
  ctr->add_option("--batch", tr.batch);
  ctr->add_option("--lr", tr.lr);
  ctr->add_option("--latent", tr.latent);
  ctr->add_option("--sigma-ratio", tr.sigma_ratio);
  ctr->add_flag("--edge-pool", tr.edge_pool);
  ctr->add_option("--conv-channels", tr.conv_channels)->delimiter(',');
  ctr->add_option("--head-widths", tr.head_widths)->delimiter(',');
  ctr->add_option("--seed", tr.seed);
  ctr->add_option("--threads", tr.threads);
  ctr->add_option("--out", tr.out)->required();

  EvalArgs ev;
  auto* cev = app.add_subcommand("eval", "evaluate a trained model on a dataset");
  cev->add_option("--model", ev.model_path)->required();
  cev->add_option("--data", ev.data_path)->required();
  cev->add_option("--threads", ev.threads);
  cev->add_option("--out", ev.out);

  InvarianceArgs inv;
  auto* cinv = app.add_subcommand("invariance", "reconstruct many re-descriptions of one shape and report spread");
  cinv->add_option("--model-varigrad", inv.model_varigrad)->required();
  cinv->add_option("--model-pointnet", inv.model_pointnet)->required();
  cinv->add_option("--data", inv.data_path)->required();
  cinv->add_option("--index", inv.index);
  cinv->add_option("--n", inv.n);
  cinv->add_flag("--permute-flip-only", inv.permute_flip_only);
  cinv->add_option("--seed", inv.seed);
  cinv->add_option("--threads", inv.threads);
  cinv->add_option("--out", inv.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cgen->parsed()) return cmd_gen(gen);
    if (cgc->parsed()) return cmd_gradcheck(gc);
    if (ctr->parsed()) return cmd_train(tr);
    if (cev->parsed()) return cmd_eval(ev);
    if (cinv->parsed()) return cmd_invariance(inv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
