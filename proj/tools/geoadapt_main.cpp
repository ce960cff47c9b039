// Command-line front end: benchmark generation, training, evaluation, the
// gradient-check suite, and the ablation report.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "geoadapt/dataset.hpp"
#include "geoadapt/errors.hpp"
#include "geoadapt/gradcheck.hpp"
#include "geoadapt/harness.hpp"

namespace {

using namespace geoadapt;

int cmd_gen_data(const std::string& out, int classes, int per_class,
                 int points, std::uint64_t seed) {
  dataset::GenParams params;
  params.classes = classes;
  params.per_class = per_class;
  params.points = points;
  params.seed = seed;
  dataset::generate_benchmark(out, params);
  std::printf("wrote %s/source and %s/target (%d classes, %d/class, %d points, seed %llu)\n",
              out.c_str(), out.c_str(), classes, per_class, points,
              static_cast<unsigned long long>(seed));
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& source_dir,
              const std::string& target_dir, const std::string& out_dir) {
  harness::TrainConfig config;
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw ArgumentError("cannot open config " + config_path);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError("config " + config_path + ": " + e.what());
    }
    config = harness::TrainConfig::from_json(j);
  }
  config.validate();

  std::printf("loading datasets...\n");
  const dataset::LoadedDataset source = dataset::load_dataset(source_dir);
  const dataset::LoadedDataset target = dataset::load_dataset(target_dir);
  std::printf("variant %s, %d epochs, seed %llu\n",
              config.variant_name().c_str(), config.epochs,
              static_cast<unsigned long long>(config.seed));

  int last_epoch = -1;
  const harness::TrainResult result = harness::train(
      config, source, target, out_dir, [&](const harness::BatchTrace& t) {
        if (t.epoch != last_epoch && t.step == 0) {
          last_epoch = t.epoch;
          if (t.epoch % 5 == 0) {
            std::printf("epoch %3d  total %.4f\n", t.epoch, t.total);
            std::fflush(stdout);
          }
        }
      });

  std::printf("final:    source-test %.4f  target-test %.4f\n",
              result.final_source_test_acc, result.final_target_test_acc);
  std::printf("best-val: epoch %d  source-test %.4f  target-test %.4f\n",
              result.best_val_epoch, result.best_val_source_test_acc,
              result.best_val_target_test_acc);
  std::printf("outputs in %s\n", out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& split) {
  const harness::EvalResult r = harness::evaluate_checkpoint(
      checkpoint, data_dir, dataset::split_from_string(split));
  std::printf("accuracy: %.6f (%d samples)\n", r.accuracy, r.total);
  const dataset::LoadedDataset data = dataset::load_dataset(data_dir);
  std::printf("%-12s %8s %8s\n", "class", "count", "acc");
  for (std::size_t c = 0; c < r.per_class_accuracy.size(); ++c) {
    std::printf("%-12s %8d %8.4f\n", data.class_names[c].c_str(),
                r.class_counts[c], r.per_class_accuracy[c]);
  }
  std::printf("confusion matrix (rows = truth, cols = prediction):\n");
  for (const auto& row : r.confusion) {
    for (int v : row) std::printf("%6d", v);
    std::printf("\n");
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int instances) {
  const net::GradCheckReport report =
      net::run_gradient_checks(seed, instances);
  double per_loss_worst[5] = {};
  for (const auto& c : report.cases) {
    std::printf("instance %2d  %-22s max rel err %.3e\n", c.instance,
                c.loss.c_str(), c.max_rel_err);
    (void)per_loss_worst;
  }
  std::printf("gradcheck: %d instances, max rel err %.3e, tolerance %.1e: %s\n",
              instances, report.max_rel_err, report.tolerance,
              report.passed ? "PASS" : "FAIL");
  return report.passed ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
  const harness::Report report = harness::build_report(dirs);
  std::fputs(harness::report_to_text(report).c_str(), stdout);
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw ArgumentError("cannot write " + out);
    os << harness::report_to_csv(report);
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"point-cloud domain adaptation workbench"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate the two-domain benchmark");
  std::string gen_out;
  int gen_classes = 6, gen_per_class = 100, gen_points = 256;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--classes", gen_classes, "number of shape classes (2-8)");
  gen->add_option("--per-class", gen_per_class, "instances per class per domain");
  gen->add_option("--points", gen_points, "points per cloud");
  gen->add_option("--seed", gen_seed, "master seed");

  auto* train = app.add_subcommand("train", "train a model");
  std::string train_config, train_source, train_target, train_out;
  train->add_option("--config", train_config, "JSON config file (defaults when omitted)");
  train->add_option("--source", train_source, "source domain directory")->required();
  train->add_option("--target", train_target, "target domain directory")->required();
  train->add_option("--out", train_out, "run output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "test";
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "domain directory")->required();
  eval->add_option("--split", eval_split, "train or test");

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference gradient verification");
  std::uint64_t gc_seed = 2024;
  int gc_instances = 20;
  gradcheck->add_option("--seed", gc_seed, "instance seed");
  gradcheck->add_option("--instances", gc_instances, "number of random instances");

  auto* report = app.add_subcommand("report", "aggregate runs into an ablation table");
  std::vector<std::string> report_runs;
  std::string report_out;
  report->add_option("--runs", report_runs, "run directories")->required()->expected(-1);
  report->add_option("--out", report_out, "also write the table as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_out, gen_classes, gen_per_class, gen_points, gen_seed);
    }
    if (train->parsed()) {
      return cmd_train(train_config, train_source, train_target, train_out);
    }
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_split);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed, gc_instances);
    if (report->parsed()) return cmd_report(report_runs, report_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
