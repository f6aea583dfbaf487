#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "irbnn/config.hpp"
#include "irbnn/data.hpp"
#include "irbnn/errors.hpp"
#include "irbnn/inspect.hpp"
#include "irbnn/net.hpp"
#include "irbnn/packed_model.hpp"

namespace {

using namespace irbnn;

constexpr const char* kDataRootEnv = "IRBNN_DATA_ROOT";

std::string resolve_data_dir(const std::string& configured, const std::string& dataset) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  return "data/" + dataset;
}

/// Generates the synthetic digits in place on first use so `dataset =
/// synth` runs out of the box.
void ensure_synth(const std::string& dir, std::uint64_t seed) {
  if (std::filesystem::exists(std::filesystem::path(dir) / "train-images-idx3-ubyte")) return;
  std::cerr << "generating synthetic digit set in " << dir << "\n";
  write_synth_dataset(dir, 8000, 2000, seed);
}

Dataset load_split(const std::string& dataset, const std::string& dir, bool train,
                   std::uint64_t seed) {
  if (dataset == "synth") {
    ensure_synth(dir, seed);
    return load_auto(dir, train);
  }
  if (dataset == "mnist") return load_mnist_split(dir, train);
  if (dataset == "cifar10") return load_cifar10(dir, train);
  if (dataset == "auto") return load_auto(dir, train);
  throw ConfigError("unknown dataset \"" + dataset + "\" (synth, mnist, cifar10, auto)");
}

std::string csv_header(TrainState& st) {
  std::string h = "epoch,loss,train_acc,test_acc,t,k,lr,seconds";
  for (const auto& [layer, ratio] : layer_sign_entropies(st.model)) {
    (void)ratio;
    h += ",entropy_" + layer;
  }
  return h;
}

std::string csv_row(const EpochMetrics& m) {
  std::ostringstream out;
  out.precision(10);
  out << m.epoch << ',' << m.loss << ',' << m.train_acc << ',' << m.test_acc << ',' << m.t << ','
      << m.k << ',' << m.lr << ',' << m.seconds;
  for (const auto& [layer, ratio] : m.layer_entropy_ratio) {
    (void)layer;
    out << ',' << ratio;
  }
  return out.str();
}

void cmd_train(const std::string& config_path, const std::string& seed_str,
               const std::string& estimator, const std::string& arm) {
  RunConfig cfg = load_config(config_path);
  if (!seed_str.empty()) {
    std::uint64_t v = 0;
    const char* end = seed_str.data() + seed_str.size();
    auto [p, ec] = std::from_chars(seed_str.data(), end, v);
    if (ec != std::errc{} || p != end) throw ConfigError("--seed expects an unsigned integer");
    cfg.seed = v;
  }
  if (!estimator.empty()) cfg.estimator = estimator;
  if (!arm.empty()) cfg.arm = arm;

  const Arm arm_v = arm_from_string(cfg.arm);
  const Estimator est_v =
      cfg.estimator.empty() ? default_estimator(arm_v) : estimator_from_string(cfg.estimator);

  const std::string data_dir = resolve_data_dir(cfg.data_root, cfg.dataset);
  const Dataset train = load_split(cfg.dataset, data_dir, true, cfg.seed);
  const Dataset test = load_split(cfg.dataset, data_dir, false, cfg.seed);

  TrainState st;
  Rng rng(cfg.seed);
  st.model = build_model(cfg.arch, arm_v, est_v, rng);
  st.rng = rng;  // training stream continues after the init draws
  st.optim = cfg.optim;
  st.sched = EdeSchedule{cfg.t_min, cfg.t_max, cfg.epochs};
  st.seed = cfg.seed;
  st.dataset_name = train.name;

  std::filesystem::create_directories(cfg.out_dir);
  const std::filesystem::path out(cfg.out_dir);
  {
    std::ofstream f(out / "config.ini");
    f << serialize_config(cfg);
  }
  std::ofstream metrics(out / "metrics.csv");
  if (!metrics) throw IoError("cannot write " + (out / "metrics.csv").string());
  metrics << "# arch=" << cfg.arch << " arm=" << arm_name(arm_v)
          << " estimator=" << estimator_name(est_v) << " seed=" << cfg.seed
          << " dataset=" << train.name << "\n";
  metrics << csv_header(st) << "\n";

  save_checkpoint(st, (out / "ckpt-0.irbnn").string());
  for (int e = 1; e <= cfg.epochs; ++e) {
    const EpochMetrics m = train_epoch(st, train, &test, cfg.batch_size, cfg.augment);
    metrics << csv_row(m) << "\n";
    metrics.flush();
    save_checkpoint(st, (out / ("ckpt-" + std::to_string(e) + ".irbnn")).string());
    std::cout << "epoch " << e << "/" << cfg.epochs << "  loss " << m.loss << "  train "
              << m.train_acc << "%  test " << m.test_acc << "%  t " << m.t
              << "  k " << m.k << "  lr " << m.lr << "  (" << m.seconds << "s)\n";
  }
  std::cout << "wrote " << (out / "metrics.csv").string() << " and " << (cfg.epochs + 1)
            << " checkpoints under " << cfg.out_dir << "\n";
}

void cmd_eval(const std::string& model_path, const std::string& data_dir, int batch) {
  const Dataset test = load_auto(data_dir, false);
  double acc = 0;
  if (is_checkpoint_file(model_path)) {
    TrainState st = load_checkpoint(model_path);
    acc = evaluate(st.model, test, batch);
  } else {
    acc = packed_evaluate(load_packed_model(model_path), test, batch);
  }
  std::cout << "top1 " << acc << "% on " << test.name << " test (" << test.count
            << " samples)\n";
}

void cmd_export(const std::string& checkpoint_path, const std::string& out_path) {
  TrainState st = load_checkpoint(checkpoint_path);
  const PackedModel pm = export_model(st);
  save_packed_model(pm, out_path);
  std::cout << "wrote " << out_path << "  arch=" << pm.arch << " arm=" << pm.arm << "  "
            << packed_model_bytes(pm) << " bytes\n";
}

void cmd_bench(const std::string& suite) {
  std::cout << format_bench_table(bench_suite(suite));
}

void cmd_inspect(const std::string& model_path, const std::string& json_path) {
  InspectionReport rep;
  if (is_checkpoint_file(model_path)) {
    TrainState st = load_checkpoint(model_path);
    rep = inspect_state(st);
  } else {
    rep = inspect_packed(load_packed_model(model_path));
  }
  std::cout << report_csv(rep);
  if (!json_path.empty()) {
    std::ofstream f(json_path);
    if (!f) throw IoError("cannot write " + json_path);
    f << report_json(rep);
  }
}

void cmd_synth(const std::string& dir, std::int64_t train_n, std::int64_t test_n,
               std::uint64_t seed) {
  write_synth_dataset(dir, train_n, test_n, seed);
  std::cout << "wrote " << train_n << " train + " << test_n << " test samples to " << dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binary-network training, inference, and inspection"};
  app.require_subcommand(1);

  std::string config_path, seed_str, estimator, arm;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config_path, "run config path")->required();
  train->add_option("--seed", seed_str, "override [run] seed");
  train->add_option("--estimator", estimator, "override estimator: ede|ste_identity|ste_clip");
  train->add_option("--arm", arm,
                    "override ablation arm: full_precision|vanilla_sign|libra_no_std|"
                    "libra_no_shift|libra|ede_only|irnet");
  train->callback([&] { cmd_train(config_path, seed_str, estimator, arm); });

  std::string model_path, data_dir;
  int eval_batch = 256;
  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint or packed model");
  eval->add_option("--model", model_path, "checkpoint or packed model path")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--batch", eval_batch, "eval batch size");
  eval->callback([&] { cmd_eval(model_path, data_dir, eval_batch); });

  std::string ckpt_path, out_path;
  auto* exp = app.add_subcommand("export", "freeze a checkpoint into a packed model");
  exp->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
  exp->add_option("--out", out_path, "output path")->required();
  exp->callback([&] { cmd_export(ckpt_path, out_path); });

  std::string suite = "small";
  auto* bench = app.add_subcommand("bench", "time packed kernels against the float path");
  bench->add_option("--suite", suite, "small|gemm|conv");
  bench->callback([&] { cmd_bench(suite); });

  std::string inspect_model_path, json_path;
  auto* inspect = app.add_subcommand("inspect", "per-layer sign statistics and op counts");
  inspect->add_option("--model", inspect_model_path, "checkpoint or packed model path")
      ->required();
  inspect->add_option("--json", json_path, "also write a JSON report here");
  inspect->callback([&] { cmd_inspect(inspect_model_path, json_path); });

  std::string synth_dir = "data/synth";
  std::int64_t synth_train = 8000, synth_test = 2000;
  std::uint64_t synth_seed = 1;
  auto* synth = app.add_subcommand("synth", "write the synthetic digit dataset");
  synth->add_option("--out", synth_dir, "output directory");
  synth->add_option("--train", synth_train, "training sample count");
  synth->add_option("--test", synth_test, "test sample count");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->callback([&] { cmd_synth(synth_dir, synth_train, synth_test, synth_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const irbnn::Error& e) {
    std::cerr << "error: category=" << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: category=internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
