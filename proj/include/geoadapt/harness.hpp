#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "geoadapt/dataset.hpp"
#include "geoadapt/net.hpp"
#include "geoadapt/selftrain.hpp"

namespace geoadapt::harness {

// Purpose tags for every random stream the training loop consumes. Streams
// are keyed by (master seed, tag, epoch, sample index), so enabling or
// disabling one consumer never shifts another one's draws.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kValSplit = 2;
inline constexpr std::uint64_t kShuffleSource = 3;
inline constexpr std::uint64_t kTargetOrder = 4;
inline constexpr std::uint64_t kTargetSslOrder = 5;
inline constexpr std::uint64_t kAugmentSource = 6;
inline constexpr std::uint64_t kAugmentTarget = 7;
inline constexpr std::uint64_t kMixupSource = 8;
inline constexpr std::uint64_t kMixupTarget = 9;
inline constexpr std::uint64_t kDistortSource = 10;
inline constexpr std::uint64_t kDistortTarget = 11;
}  // namespace streams

struct TrainConfig {
  int epochs = 150;
  int batch_size = 16;
  double base_lr = 1e-3;
  double weight_decay = 5e-5;
  double beta = 1.0;    // weight of the two geometric losses
  double gamma = 0.05;  // pseudo-label confidence knob, threshold exp(-gamma)
  int lambda_warmup_epochs = -1;  // -1 resolves to epochs/5
  int lambda_ramp_epochs = -1;    // -1 resolves to epochs/5
  std::vector<int> encoder_widths{3, 64, 128, 256};
  int head_hidden = 128;
  int grid_k = 3;
  double mixup_alpha_min = 0.1;
  double mixup_alpha_max = 0.9;
  double distortion_sigma = 0.05;
  int curvature_k = 16;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
  double source_val_fraction = 0.1;
  std::uint64_t seed = 1;
  bool use_spst = true;
  bool use_rot = true;
  bool use_loc = true;
  int threads = 0;  // 0 = all hardware threads

  int resolved_warmup() const {
    return lambda_warmup_epochs >= 0 ? lambda_warmup_epochs : epochs / 5;
  }
  int resolved_ramp() const {
    return lambda_ramp_epochs >= 0 ? lambda_ramp_epochs : epochs / 5;
  }
  int resolved_threads() const;
  selftrain::SelfTrainConfig selftrain_config() const {
    return {gamma, resolved_warmup(), resolved_ramp()};
  }

  // baseline / selftrain / rot / loc / rot_loc / full, compound otherwise.
  std::string variant_name() const;

  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct MetricsRow {
  int epoch = 0;
  double lr = 0.0;
  double source_ce = 0.0;
  double target_st = 0.0;
  double rot_loss = 0.0;
  double loc_loss = 0.0;
  double total_loss = 0.0;
  int assigned = 0;
  double pl_accuracy = 0.0;  // NaN when no pseudo-label was assigned
  double source_val_acc = 0.0;
  double source_test_acc = 0.0;
  double target_test_acc = 0.0;
};

std::string metrics_header();
std::string metrics_to_csv_row(const MetricsRow& row);

// Per-step loss components, exposed for tests and monitoring.
struct BatchTrace {
  int epoch = 0;
  int step = 0;
  double source_ce = 0.0;
  double target_st = 0.0;
  double rot_loss = 0.0;
  double loc_loss = 0.0;
  double lambda = 0.0;
  double beta = 0.0;
  double total = 0.0;
};
using BatchObserver = std::function<void(const BatchTrace&)>;

struct TrainResult {
  std::vector<MetricsRow> metrics;
  int best_val_epoch = -1;
  double best_val_acc = 0.0;
  double best_val_source_test_acc = 0.0;
  double best_val_target_test_acc = 0.0;
  double final_source_test_acc = 0.0;
  double final_target_test_acc = 0.0;
  double wall_seconds = 0.0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics_csv;
  std::filesystem::path summary_json;
};

// Deterministic stratified carve-out of source train indices used for
// checkpoint selection. Returns (fit, validation) index lists.
struct SourceSplit {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> val;
};
SourceSplit split_source_validation(const dataset::LoadedDataset& source,
                                    double fraction, std::uint64_t seed);

TrainResult train(const TrainConfig& config,
                  const dataset::LoadedDataset& source,
                  const dataset::LoadedDataset& target,
                  const std::filesystem::path& out_dir,
                  const BatchObserver& observer = {});

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<int> class_counts;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
  int total = 0;
};

// Inference uses only the encoder and the class head.
EvalResult evaluate(const net::ModelState<float>& model,
                    const dataset::LoadedDataset& data, dataset::Split split,
                    int threads = 0);
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const std::filesystem::path& data_dir,
                               dataset::Split split);

// --- ablation report ------------------------------------------------------

struct ReportRow {
  std::string variant;
  int runs = 0;
  double final_target_mean = 0.0;
  double final_target_sem = 0.0;  // NaN when runs < 2
  double best_target_mean = 0.0;
  double best_target_sem = 0.0;
  std::vector<double> final_target_accs;
};

struct Report {
  std::vector<ReportRow> rows;
};

// Reads summary.json from each run directory and aggregates target-test
// accuracy per variant (mean and standard error over seeds). Variants with no
// completed run are listed with runs = 0.
Report build_report(const std::vector<std::filesystem::path>& run_dirs);
std::string report_to_text(const Report& report);
std::string report_to_csv(const Report& report);

}  // namespace geoadapt::harness
