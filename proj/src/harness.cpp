#include "geoadapt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "geoadapt/checkpoint.hpp"
#include "geoadapt/errors.hpp"
#include "geoadapt/selfsup.hpp"

namespace geoadapt::harness {

namespace {

// The training loop allocates many short-lived ~1 MB activation buffers.
// Keeping them on the heap instead of per-allocation mmap/munmap cycles
// removes most of the page-fault cost.
void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace

using dataset::Domain;
using dataset::LoadedDataset;
using dataset::Split;
using net::ModelState;

// --- config -----------------------------------------------------------------

int TrainConfig::resolved_threads() const {
  if (threads > 0) return threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

std::string TrainConfig::variant_name() const {
  if (!use_spst && !use_rot && !use_loc) return "baseline";
  if (use_spst && use_rot && use_loc) return "full";
  std::string name;
  auto append = [&name](const char* part) {
    if (!name.empty()) name += "+";
    name += part;
  };
  if (use_spst) append("selftrain");
  if (use_rot) append("rot");
  if (use_loc) append("loc");
  if (name == "rot+loc") return "rot_loc";
  return name;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("config: epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("config: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ArgumentError("config: base_lr must be > 0");
  if (!(weight_decay >= 0.0)) {
    throw ArgumentError("config: weight_decay must be >= 0");
  }
  if (!(beta >= 0.0)) throw ArgumentError("config: beta must be >= 0");
  if (!(gamma > 0.0)) throw ArgumentError("config: gamma must be > 0");
  if (resolved_warmup() + resolved_ramp() > epochs) {
    throw ArgumentError(
        "config: lambda warmup + ramp must not exceed total epochs");
  }
  net::NetConfig nc;
  nc.encoder_widths = encoder_widths;
  nc.head_hidden = head_hidden;
  nc.num_classes = 2;  // placeholder, dataset decides
  nc.num_location_classes = grid_k * grid_k * grid_k;
  nc.validate();
  if (grid_k < 2) throw ArgumentError("config: grid_k must be >= 2");
  if (!(mixup_alpha_min > 0.0 && mixup_alpha_max < 1.0 &&
        mixup_alpha_min <= mixup_alpha_max)) {
    throw ArgumentError("config: mixup alpha range must satisfy 0 < min <= max < 1");
  }
  if (!(distortion_sigma > 0.0)) {
    throw ArgumentError("config: distortion_sigma must be > 0");
  }
  if (curvature_k < 3) throw ArgumentError("config: curvature_k must be >= 3");
  if (!(jitter_sigma > 0.0) || !(jitter_clip >= jitter_sigma)) {
    throw ArgumentError("config: need jitter_sigma > 0 and clip >= sigma");
  }
  if (!(source_val_fraction >= 0.0 && source_val_fraction <= 0.5)) {
    throw ArgumentError("config: source_val_fraction must lie in [0, 0.5]");
  }
  if (threads < 0) throw ArgumentError("config: threads must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"epochs", epochs},
                        {"batch_size", batch_size},
                        {"base_lr", base_lr},
                        {"weight_decay", weight_decay},
                        {"beta", beta},
                        {"gamma", gamma},
                        {"lambda_warmup_epochs", resolved_warmup()},
                        {"lambda_ramp_epochs", resolved_ramp()},
                        {"encoder_widths", encoder_widths},
                        {"head_hidden", head_hidden},
                        {"grid_k", grid_k},
                        {"mixup_alpha_min", mixup_alpha_min},
                        {"mixup_alpha_max", mixup_alpha_max},
                        {"distortion_sigma", distortion_sigma},
                        {"curvature_k", curvature_k},
                        {"jitter_sigma", jitter_sigma},
                        {"jitter_clip", jitter_clip},
                        {"source_val_fraction", source_val_fraction},
                        {"seed", seed},
                        {"use_spst", use_spst},
                        {"use_rot", use_rot},
                        {"use_loc", use_loc},
                        {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "base_lr") c.base_lr = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "lambda_warmup_epochs") c.lambda_warmup_epochs = value.get<int>();
      else if (key == "lambda_ramp_epochs") c.lambda_ramp_epochs = value.get<int>();
      else if (key == "encoder_widths") c.encoder_widths = value.get<std::vector<int>>();
      else if (key == "head_hidden") c.head_hidden = value.get<int>();
      else if (key == "grid_k") c.grid_k = value.get<int>();
      else if (key == "mixup_alpha_min") c.mixup_alpha_min = value.get<double>();
      else if (key == "mixup_alpha_max") c.mixup_alpha_max = value.get<double>();
      else if (key == "distortion_sigma") c.distortion_sigma = value.get<double>();
      else if (key == "curvature_k") c.curvature_k = value.get<int>();
      else if (key == "jitter_sigma") c.jitter_sigma = value.get<double>();
      else if (key == "jitter_clip") c.jitter_clip = value.get<double>();
      else if (key == "source_val_fraction") c.source_val_fraction = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "use_spst") c.use_spst = value.get<bool>();
      else if (key == "use_rot") c.use_rot = value.get<bool>();
      else if (key == "use_loc") c.use_loc = value.get<bool>();
      else if (key == "threads") c.threads = value.get<int>();
      else throw ArgumentError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("config: bad value type: ") + e.what());
  }
  c.validate();
  return c;
}

// --- metrics ----------------------------------------------------------------

std::string metrics_header() {
  return "epoch,lr,source_ce,target_st,rot_loss,loc_loss,total_loss,assigned,"
         "pl_accuracy,source_val_acc,source_test_acc,target_test_acc";
}

std::string metrics_to_csv_row(const MetricsRow& r) {
  char buf[512];
  std::string pl;
  if (std::isfinite(r.pl_accuracy)) {
    char plbuf[32];
    std::snprintf(plbuf, sizeof(plbuf), "%.9f", r.pl_accuracy);
    pl = plbuf;
  }
  std::snprintf(buf, sizeof(buf),
                "%d,%.9f,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%s,%.9f,%.9f,%.9f",
                r.epoch, r.lr, r.source_ce, r.target_st, r.rot_loss,
                r.loc_loss, r.total_loss, r.assigned, pl.c_str(),
                r.source_val_acc, r.source_test_acc, r.target_test_acc);
  return buf;
}

// --- helpers ----------------------------------------------------------------

SourceSplit split_source_validation(const LoadedDataset& source,
                                    double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 0.5)) {
    throw ArgumentError("split_source_validation: fraction must lie in [0, 0.5]");
  }
  SourceSplit out;
  const int n_classes = source.num_classes();
  for (int cls = 0; cls < n_classes; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t idx : source.train_indices) {
      if (source.labels[idx] == cls) members.push_back(idx);
    }
    Rng rng = Rng::derive(seed, streams::kValSplit,
                          static_cast<std::uint64_t>(cls));
    rng.shuffle(members);
    const auto n_val = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < n_val ? out.val : out.fit).push_back(members[i]);
    }
  }
  std::sort(out.fit.begin(), out.fit.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

namespace {

int argmax_lowest(const net::Vector<float>& v) {
  int arg = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[arg]) arg = i;
  }
  return arg;
}

// Per-thread forward buffers; contents are fully overwritten per use, so
// reuse never affects results.
struct Workspace {
  net::Matrix<float> input;
  net::EncoderCache<float> enc;
  net::MlpCache<float> head;
};

Workspace& workspace() {
  static thread_local Workspace ws;
  return ws;
}

// Forward-only class prediction for a list of samples.
std::vector<int> predict_classes(const ModelState<float>& model,
                                 const LoadedDataset& data,
                                 const std::vector<std::size_t>& indices,
                                 int nthreads) {
  std::vector<int> pred(indices.size());
  const auto n = static_cast<std::int64_t>(indices.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(nthreads)
  for (std::int64_t i = 0; i < n; ++i) {
    Workspace& ws = workspace();
    net::cloud_to_matrix(data.clouds[indices[static_cast<std::size_t>(i)]],
                         ws.input);
    net::encoder_forward(model, ws.input, ws.enc);
    const auto p = net::head_forward(model.head_cls, ws.enc.feature);
    pred[static_cast<std::size_t>(i)] = argmax_lowest(p.probs);
  }
  return pred;
}

double accuracy_on(const ModelState<float>& model, const LoadedDataset& data,
                   const std::vector<std::size_t>& indices, int nthreads) {
  if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::vector<int> pred = predict_classes(model, data, indices, nthreads);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (pred[i] == data.labels[indices[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

enum class TaskKind { source_cls, target_cls, mixup, distort };

struct Task {
  TaskKind kind = TaskKind::source_cls;
  std::size_t index = 0;  // dataset index
  bool from_source = true;
  int label = -1;    // class label (source) or pseudo label (target)
  double weight = 0.0;  // gradient scale
};

struct TrainContext {
  const TrainConfig& cfg;
  const LoadedDataset& source;
  const LoadedDataset& target;
  const std::vector<std::vector<double>>* source_curv;
  const std::vector<std::vector<double>>* target_curv;
  int epoch = 0;
};

// Materializes one task's input, runs forward + backward, accumulates the
// parameter gradient into `slot`, and returns the task's unweighted loss.
double run_task(const TrainContext& ctx, const ModelState<float>& model,
                const Task& task, ModelState<float>& slot) {
  const TrainConfig& cfg = ctx.cfg;
  const auto epoch = static_cast<std::uint64_t>(ctx.epoch);
  switch (task.kind) {
    case TaskKind::source_cls:
    case TaskKind::target_cls: {
      const bool src = task.kind == TaskKind::source_cls;
      Rng rng = Rng::derive(
          cfg.seed, src ? streams::kAugmentSource : streams::kAugmentTarget,
          epoch, task.index);
      geom::PointCloud cloud = src ? ctx.source.clouds[task.index]
                                   : ctx.target.clouds[task.index];
      if (!src) {
        // pseudo-labeled target samples additionally get a random z rotation
        cloud = geom::rotate_z(
            cloud, rng.uniform(0.0, 2.0 * 3.14159265358979323846));
      }
      cloud = geom::jitter(cloud, cfg.jitter_sigma, cfg.jitter_clip, rng);

      Workspace& ws = workspace();
      net::cloud_to_matrix(cloud, ws.input);
      net::encoder_forward(model, ws.input, ws.enc);
      const auto pred = net::head_forward(model.head_cls, ws.enc.feature, &ws.head);
      const double ce =
          static_cast<double>(net::cross_entropy(pred, task.label));
      const net::Vector<float> dlogits =
          static_cast<float>(task.weight) *
          net::cross_entropy_logit_grad(pred, task.label);
      const net::Vector<float> dz =
          net::mlp_backward(model.head_cls, ws.head, dlogits, slot.head_cls);
      net::encoder_backward(model.encoder, ws.enc, dz, slot.encoder);
      return src ? ce : ce - cfg.gamma;
    }
    case TaskKind::mixup: {
      Rng rng = Rng::derive(
          cfg.seed,
          task.from_source ? streams::kMixupSource : streams::kMixupTarget,
          epoch, task.index);
      const geom::PointCloud& base = task.from_source
                                         ? ctx.source.clouds[task.index]
                                         : ctx.target.clouds[task.index];
      const selfsup::RotationMixupSample sample = selfsup::make_rotation_mixup(
          base, cfg.mixup_alpha_min, cfg.mixup_alpha_max, rng);

      Workspace& ws = workspace();
      net::cloud_to_matrix(sample.mixed_cloud, ws.input);
      net::encoder_forward(model, ws.input, ws.enc);
      const auto pred = net::head_forward(model.head_rot, ws.enc.feature, &ws.head);
      const double loss =
          static_cast<double>(net::rotation_mixup_loss(pred, sample));
      const net::Vector<float> dlogits =
          static_cast<float>(task.weight) *
          net::rotation_mixup_logit_grad(pred, sample);
      const net::Vector<float> dz =
          net::mlp_backward(model.head_rot, ws.head, dlogits, slot.head_rot);
      net::encoder_backward(model.encoder, ws.enc, dz, slot.encoder);
      return loss;
    }
    case TaskKind::distort: {
      Rng rng = Rng::derive(
          cfg.seed,
          task.from_source ? streams::kDistortSource : streams::kDistortTarget,
          epoch, task.index);
      const geom::PointCloud& base = task.from_source
                                         ? ctx.source.clouds[task.index]
                                         : ctx.target.clouds[task.index];
      const std::vector<double>& curv =
          task.from_source ? (*ctx.source_curv)[task.index]
                           : (*ctx.target_curv)[task.index];
      const selfsup::DistortionSample sample = selfsup::make_distortion_sample(
          base, curv, cfg.grid_k, cfg.distortion_sigma, rng);

      Workspace& ws = workspace();
      net::cloud_to_matrix(sample.distorted_cloud, ws.input);
      net::encoder_forward(model, ws.input, ws.enc);
      const auto pred = net::head_forward(model.head_loc, ws.enc.feature, &ws.head);
      const double loss = static_cast<double>(net::location_loss(pred, sample));
      const net::Vector<float> dlogits =
          static_cast<float>(task.weight) *
          net::location_logit_grad(pred, sample);
      const net::Vector<float> dz =
          net::mlp_backward(model.head_loc, ws.head, dlogits, slot.head_loc);
      net::encoder_backward(model.encoder, ws.enc, dz, slot.encoder);
      return loss;
    }
  }
  throw ContractError("run_task: unreachable");
}

nlohmann::json task_to_json(const Task& t) {
  const char* kind = t.kind == TaskKind::source_cls   ? "source_cls"
                     : t.kind == TaskKind::target_cls ? "target_cls"
                     : t.kind == TaskKind::mixup      ? "mixup"
                                                      : "distort";
  return nlohmann::json{{"kind", kind},
                        {"index", t.index},
                        {"from_source", t.from_source},
                        {"label", t.label}};
}

}  // namespace

// --- training ---------------------------------------------------------------

TrainResult train(const TrainConfig& config, const LoadedDataset& source,
                  const LoadedDataset& target,
                  const std::filesystem::path& out_dir,
                  const BatchObserver& observer) {
  const auto t_start = std::chrono::steady_clock::now();
  tune_allocator();
  config.validate();
  if (source.class_names != target.class_names) {
    throw ArgumentError("train: source and target class names differ");
  }
  if (source.train_indices.empty()) {
    throw ArgumentError("train: source train split is empty");
  }
  for (std::size_t idx : source.train_indices) {
    if (source.labels[idx] < 0) {
      throw ArgumentError("train: source train samples must carry labels");
    }
  }

  std::filesystem::create_directories(out_dir);
  const int nthreads = config.resolved_threads();
  const int num_classes = source.num_classes();
  const int num_voxels = config.grid_k * config.grid_k * config.grid_k;

  net::NetConfig netcfg;
  netcfg.encoder_widths = config.encoder_widths;
  netcfg.head_hidden = config.head_hidden;
  netcfg.num_classes = num_classes;
  netcfg.num_rotation_classes = 8;
  netcfg.num_location_classes = num_voxels;

  Rng init_rng = Rng::derive(config.seed, streams::kInit);
  ModelState<float> model = ModelState<float>::init(netcfg, init_rng);
  net::OptimizerState<float> opt = net::OptimizerState<float>::init(model);
  opt.base_lr = static_cast<float>(config.base_lr);
  opt.weight_decay = static_cast<float>(config.weight_decay);

  const SourceSplit src_split = split_source_validation(
      source, config.source_val_fraction, config.seed);
  const std::vector<std::size_t>& fit = src_split.fit;
  const std::vector<std::size_t>& val = src_split.val;
  const std::vector<std::size_t>& tgt_train = target.train_indices;

  // Per-cloud curvature of the clean train clouds, cached once; the
  // distortion cost always refers to the pre-distortion geometry.
  std::vector<std::vector<double>> source_curv, target_curv;
  if (config.use_loc) {
    source_curv.resize(source.clouds.size());
    target_curv.resize(target.clouds.size());
    const auto nf = static_cast<std::int64_t>(fit.size());
#pragma omp parallel for schedule(dynamic, 8) num_threads(nthreads)
    for (std::int64_t i = 0; i < nf; ++i) {
      const std::size_t idx = fit[static_cast<std::size_t>(i)];
      source_curv[idx] = geom::pca_curvature(
          source.clouds[idx], static_cast<std::size_t>(config.curvature_k));
    }
    const auto nt = static_cast<std::int64_t>(tgt_train.size());
#pragma omp parallel for schedule(dynamic, 8) num_threads(nthreads)
    for (std::int64_t i = 0; i < nt; ++i) {
      const std::size_t idx = tgt_train[static_cast<std::size_t>(i)];
      target_curv[idx] = geom::pca_curvature(
          target.clouds[idx], static_cast<std::size_t>(config.curvature_k));
    }
  }

  TrainContext ctx{config, source, target, &source_curv, &target_curv, 0};

  std::ofstream csv(out_dir / "metrics.csv");
  if (!csv) throw ArgumentError("train: cannot write metrics.csv");
  csv << metrics_header() << "\n";

  // gradient slots, reused across steps; reduction is always in task order
  const std::size_t max_tasks =
      static_cast<std::size_t>(config.batch_size) * 6;
  std::vector<ModelState<float>> slots(
      max_tasks, ModelState<float>::zeros_like(model));
  std::vector<double> task_losses(max_tasks, 0.0);
  ModelState<float> grad = ModelState<float>::zeros_like(model);

  selftrain::PseudoLabelTable table(tgt_train.size());
  const selftrain::SelfTrainConfig st_cfg = config.selftrain_config();

  TrainResult result;
  result.best_val_acc = -1.0;
  ModelState<float> best_model = model;

  const std::size_t steps_per_epoch =
      (fit.size() + static_cast<std::size_t>(config.batch_size) - 1) /
      static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    ctx.epoch = epoch;
    const double lr = net::cosine_lr(epoch, config.epochs, config.base_lr);
    const double lambda =
        config.use_spst ? selftrain::lambda_schedule(epoch, st_cfg) : 0.0;

    // refresh pseudo labels over the full target train split, clean clouds
    int assigned_count = 0;
    double pl_accuracy = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> assigned;  // positions into tgt_train
    if (config.use_spst && !tgt_train.empty()) {
      std::vector<std::vector<double>> probs(tgt_train.size());
      const auto nt = static_cast<std::int64_t>(tgt_train.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(nthreads)
      for (std::int64_t i = 0; i < nt; ++i) {
        Workspace& ws = workspace();
        net::cloud_to_matrix(
            target.clouds[tgt_train[static_cast<std::size_t>(i)]], ws.input);
        net::encoder_forward(model, ws.input, ws.enc);
        const auto pred = net::head_forward(model.head_cls, ws.enc.feature);
        std::vector<double> p(static_cast<std::size_t>(pred.probs.size()));
        for (Eigen::Index c = 0; c < pred.probs.size(); ++c) {
          p[static_cast<std::size_t>(c)] = static_cast<double>(pred.probs[c]);
        }
        probs[static_cast<std::size_t>(i)] = std::move(p);
      }
      table = selftrain::assign_pseudo_labels(probs, config.gamma);

      int pl_correct = 0, pl_labeled = 0;
      for (std::size_t i = 0; i < table.size(); ++i) {
        if (!table[i].assigned) continue;
        assigned.push_back(i);
        const int truth = target.labels[tgt_train[i]];
        if (truth >= 0) {
          ++pl_labeled;
          if (truth == table[i].label) ++pl_correct;
        }
      }
      assigned_count = static_cast<int>(assigned.size());
      if (pl_labeled > 0) {
        pl_accuracy = static_cast<double>(pl_correct) / pl_labeled;
      }
    }

    std::vector<std::size_t> src_order = fit;
    Rng::derive(config.seed, streams::kShuffleSource,
                static_cast<std::uint64_t>(epoch))
        .shuffle(src_order);

    std::vector<std::size_t> tgt_order;  // dataset indices of usable targets
    if (config.use_spst && lambda > 0.0 && !assigned.empty()) {
      tgt_order = assigned;
      Rng::derive(config.seed, streams::kTargetOrder,
                  static_cast<std::uint64_t>(epoch))
          .shuffle(tgt_order);
    }
    std::vector<std::size_t> ssl_order;  // positions into tgt_train
    const bool use_ssl = config.use_rot || config.use_loc;
    if (use_ssl && !tgt_train.empty()) {
      ssl_order.resize(tgt_train.size());
      for (std::size_t i = 0; i < tgt_train.size(); ++i) ssl_order[i] = i;
      Rng::derive(config.seed, streams::kTargetSslOrder,
                  static_cast<std::uint64_t>(epoch))
          .shuffle(ssl_order);
    }
    std::size_t tgt_ptr = 0;
    std::size_t ssl_ptr = 0;

    double ep_src = 0.0, ep_tgt = 0.0, ep_rot = 0.0, ep_loc = 0.0, ep_total = 0.0;

    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t lo = step * static_cast<std::size_t>(config.batch_size);
      const std::size_t hi =
          std::min(fit.size(), lo + static_cast<std::size_t>(config.batch_size));

      std::vector<Task> tasks;
      std::vector<std::size_t> ssl_pool_src;  // source dataset indices
      std::vector<std::size_t> ssl_pool_tgt;  // target dataset indices

      for (std::size_t i = lo; i < hi; ++i) {
        tasks.push_back({TaskKind::source_cls, src_order[i], true,
                         source.labels[src_order[i]], 0.0});
        ssl_pool_src.push_back(src_order[i]);
      }
      const std::size_t n_src = hi - lo;

      std::size_t n_tgt = 0;
      if (!tgt_order.empty()) {
        n_tgt = std::min<std::size_t>(
            static_cast<std::size_t>(config.batch_size), tgt_order.size());
        for (std::size_t i = 0; i < n_tgt; ++i) {
          const std::size_t pos = tgt_order[(tgt_ptr + i) % tgt_order.size()];
          tasks.push_back({TaskKind::target_cls, tgt_train[pos], false,
                           table[pos].label, 0.0});
        }
        tgt_ptr = (tgt_ptr + n_tgt) % tgt_order.size();
      }

      if (use_ssl && !ssl_order.empty()) {
        // match the source count so both domains feed the pretext tasks
        for (std::size_t i = 0; i < n_src; ++i) {
          const std::size_t pos = ssl_order[(ssl_ptr + i) % ssl_order.size()];
          ssl_pool_tgt.push_back(tgt_train[pos]);
        }
        ssl_ptr = (ssl_ptr + n_src) % ssl_order.size();
      }

      std::size_t n_mix = 0, n_dis = 0;
      if (config.use_rot) {
        for (std::size_t idx : ssl_pool_src) {
          tasks.push_back({TaskKind::mixup, idx, true, -1, 0.0});
        }
        for (std::size_t idx : ssl_pool_tgt) {
          tasks.push_back({TaskKind::mixup, idx, false, -1, 0.0});
        }
        n_mix = ssl_pool_src.size() + ssl_pool_tgt.size();
      }
      if (config.use_loc) {
        for (std::size_t idx : ssl_pool_src) {
          tasks.push_back({TaskKind::distort, idx, true, -1, 0.0});
        }
        for (std::size_t idx : ssl_pool_tgt) {
          tasks.push_back({TaskKind::distort, idx, false, -1, 0.0});
        }
        n_dis = ssl_pool_src.size() + ssl_pool_tgt.size();
      }

      // gradient scales realizing src_ce + lambda*target_st + beta*(rot+loc)
      for (Task& t : tasks) {
        switch (t.kind) {
          case TaskKind::source_cls:
            t.weight = 1.0 / static_cast<double>(n_src);
            break;
          case TaskKind::target_cls:
            t.weight = lambda / static_cast<double>(n_tgt);
            break;
          case TaskKind::mixup:
            t.weight = config.beta / static_cast<double>(n_mix);
            break;
          case TaskKind::distort:
            t.weight = config.beta / static_cast<double>(n_dis);
            break;
        }
      }

      const auto n_tasks = static_cast<std::int64_t>(tasks.size());
      if (tasks.size() > slots.size()) {
        throw ContractError("train: task count exceeds slot capacity");
      }
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
      for (std::int64_t k = 0; k < n_tasks; ++k) {
        auto& slot = slots[static_cast<std::size_t>(k)];
        slot.set_zero();
        task_losses[static_cast<std::size_t>(k)] =
            run_task(ctx, model, tasks[static_cast<std::size_t>(k)], slot);
      }

      grad.set_zero();
      for (std::size_t k = 0; k < tasks.size(); ++k) {
        net::accumulate(grad, slots[k]);
      }

      double src_ce = 0.0, tgt_st = 0.0, rot = 0.0, loc = 0.0;
      for (std::size_t k = 0; k < tasks.size(); ++k) {
        switch (tasks[k].kind) {
          case TaskKind::source_cls: src_ce += task_losses[k]; break;
          case TaskKind::target_cls: tgt_st += task_losses[k]; break;
          case TaskKind::mixup: rot += task_losses[k]; break;
          case TaskKind::distort: loc += task_losses[k]; break;
        }
      }
      src_ce /= static_cast<double>(n_src);
      if (n_tgt > 0) tgt_st /= static_cast<double>(n_tgt);
      if (n_mix > 0) rot /= static_cast<double>(n_mix);
      if (n_dis > 0) loc /= static_cast<double>(n_dis);
      const double total =
          src_ce + lambda * tgt_st + config.beta * (rot + loc);

      if (!std::isfinite(total)) {
        nlohmann::json dump;
        dump["epoch"] = epoch;
        dump["step"] = step;
        dump["source_ce"] = src_ce;
        dump["target_st"] = tgt_st;
        dump["rot_loss"] = rot;
        dump["loc_loss"] = loc;
        dump["tasks"] = nlohmann::json::array();
        for (const Task& t : tasks) dump["tasks"].push_back(task_to_json(t));
        std::ofstream diag(out_dir / "diagnostic.json");
        diag << dump.dump(2) << "\n";
        throw Error("train: non-finite loss at epoch " +
                    std::to_string(epoch) + " step " + std::to_string(step) +
                    "; batch dumped to diagnostic.json");
      }

      net::adam_step(model, opt, grad, static_cast<float>(lr));

      if (observer) {
        observer(BatchTrace{epoch, static_cast<int>(step), src_ce, tgt_st,
                            rot, loc, lambda, config.beta, total});
      }
      ep_src += src_ce;
      ep_tgt += tgt_st;
      ep_rot += rot;
      ep_loc += loc;
      ep_total += total;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.lr = lr;
    const auto steps_d = static_cast<double>(steps_per_epoch);
    row.source_ce = ep_src / steps_d;
    row.target_st = ep_tgt / steps_d;
    row.rot_loss = ep_rot / steps_d;
    row.loc_loss = ep_loc / steps_d;
    row.total_loss = ep_total / steps_d;
    row.assigned = assigned_count;
    row.pl_accuracy = pl_accuracy;
    row.source_val_acc = accuracy_on(model, source, val, nthreads);
    row.source_test_acc =
        accuracy_on(model, source, source.test_indices, nthreads);
    row.target_test_acc =
        accuracy_on(model, target, target.test_indices, nthreads);
    result.metrics.push_back(row);
    csv << metrics_to_csv_row(row) << "\n";
    csv.flush();

    // checkpoint selection on source validation; without a carve-out the
    // final model doubles as the selected one
    const double selector =
        val.empty() ? row.source_test_acc : row.source_val_acc;
    if (selector > result.best_val_acc) {
      result.best_val_acc = selector;
      result.best_val_epoch = epoch;
      result.best_val_source_test_acc = row.source_test_acc;
      result.best_val_target_test_acc = row.target_test_acc;
      best_model = model;
    }
  }

  result.final_source_test_acc = result.metrics.back().source_test_acc;
  result.final_target_test_acc = result.metrics.back().target_test_acc;

  nlohmann::json meta;
  meta["config"] = config.to_json();
  meta["classes"] = source.class_names;
  meta["variant"] = config.variant_name();

  result.final_checkpoint = out_dir / "checkpoint_final.ckpt";
  result.best_checkpoint = out_dir / "checkpoint_best.ckpt";
  result.metrics_csv = out_dir / "metrics.csv";
  result.summary_json = out_dir / "summary.json";

  {
    nlohmann::json m = meta;
    m["selected"] = "final";
    m["epoch"] = config.epochs - 1;
    net::save_checkpoint(result.final_checkpoint, model, m);
  }
  {
    nlohmann::json m = meta;
    m["selected"] = "best_val";
    m["epoch"] = result.best_val_epoch;
    net::save_checkpoint(result.best_checkpoint, best_model, m);
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();

  nlohmann::json summary;
  summary["variant"] = config.variant_name();
  summary["seed"] = config.seed;
  summary["config"] = config.to_json();
  summary["classes"] = source.class_names;
  summary["final"] = {{"epoch", config.epochs - 1},
                      {"source_test_acc", result.final_source_test_acc},
                      {"target_test_acc", result.final_target_test_acc}};
  summary["best_val"] = {
      {"epoch", result.best_val_epoch},
      {"source_val_acc", result.best_val_acc},
      {"source_test_acc", result.best_val_source_test_acc},
      {"target_test_acc", result.best_val_target_test_acc}};
  summary["assigned_last_epoch"] = result.metrics.back().assigned;
  summary["wall_seconds"] = result.wall_seconds;
  std::ofstream sj(result.summary_json);
  sj << summary.dump(2) << "\n";

  return result;
}

// --- evaluation -------------------------------------------------------------

EvalResult evaluate(const ModelState<float>& model, const LoadedDataset& data,
                    Split split, int threads) {
  const int n_classes = data.num_classes();
  if (model.config.num_classes != n_classes) {
    throw CheckpointError("evaluate: checkpoint classes (" +
                          std::to_string(model.config.num_classes) +
                          ") do not match dataset classes (" +
                          std::to_string(n_classes) + ")");
  }
  const std::vector<std::size_t>& indices = data.indices(split);
  if (indices.empty()) throw ArgumentError("evaluate: empty split");
  for (std::size_t idx : indices) {
    if (data.labels[idx] < 0) {
      throw ArgumentError("evaluate: sample without a label in this split");
    }
  }
  const int nthreads = threads > 0
                           ? threads
                           : static_cast<int>(std::max(
                                 1u, std::thread::hardware_concurrency()));
  const std::vector<int> pred = predict_classes(model, data, indices, nthreads);

  EvalResult result;
  result.total = static_cast<int>(indices.size());
  result.class_counts.assign(static_cast<std::size_t>(n_classes), 0);
  result.confusion.assign(static_cast<std::size_t>(n_classes),
                          std::vector<int>(static_cast<std::size_t>(n_classes), 0));
  int correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int truth = data.labels[indices[i]];
    result.class_counts[static_cast<std::size_t>(truth)] += 1;
    result.confusion[static_cast<std::size_t>(truth)]
                    [static_cast<std::size_t>(pred[i])] += 1;
    if (truth == pred[i]) ++correct;
  }
  result.accuracy = static_cast<double>(correct) / result.total;
  result.per_class_accuracy.assign(static_cast<std::size_t>(n_classes), 0.0);
  for (int c = 0; c < n_classes; ++c) {
    const int count = result.class_counts[static_cast<std::size_t>(c)];
    result.per_class_accuracy[static_cast<std::size_t>(c)] =
        count > 0 ? static_cast<double>(
                        result.confusion[static_cast<std::size_t>(c)]
                                        [static_cast<std::size_t>(c)]) /
                        count
                  : std::numeric_limits<double>::quiet_NaN();
  }
  return result;
}

EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint,
                               const std::filesystem::path& data_dir,
                               Split split) {
  const ModelState<float> model = net::load_checkpoint(checkpoint);
  const LoadedDataset data = dataset::load_dataset(data_dir);
  return evaluate(model, data, split);
}

}  // namespace geoadapt::harness
