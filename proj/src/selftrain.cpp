#include "geoadapt/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "geoadapt/errors.hpp"

namespace geoadapt::selftrain {

namespace {

constexpr double kProbFloor = 1e-12;

void validate_prob_vector(const std::vector<double>& p, std::size_t i) {
  if (p.size() < 2) {
    throw ArgumentError("pseudo labels: probability vector " +
                        std::to_string(i) + " has fewer than 2 classes");
  }
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= -1e-9) || !std::isfinite(v)) {
      throw ArgumentError("pseudo labels: probability vector " +
                          std::to_string(i) + " has an invalid entry");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ArgumentError("pseudo labels: probability vector " +
                        std::to_string(i) + " does not sum to 1");
  }
}

}  // namespace

PseudoLabelTable assign_pseudo_labels(
    const std::vector<std::vector<double>>& probabilities, double gamma) {
  if (!(gamma > 0.0)) {
    throw ArgumentError("assign_pseudo_labels: gamma must be positive");
  }
  const double threshold = std::exp(-gamma);

  PseudoLabelTable table(probabilities.size());
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const auto& p = probabilities[i];
    validate_prob_vector(p, i);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < p.size(); ++c) {
      if (p[c] > p[arg]) arg = c;  // strict: lowest index wins ties
    }
    PseudoLabel& rec = table[i];
    rec.confidence = p[arg];
    if (p[arg] > threshold) {
      rec.assigned = true;
      rec.label = static_cast<int>(arg);
    }
  }
  return table;
}

double target_self_training_loss(
    const std::vector<std::vector<double>>& probabilities,
    const PseudoLabelTable& table, double gamma) {
  if (probabilities.size() != table.size()) {
    throw ArgumentError(
        "target_self_training_loss: table length must match predictions");
  }
  if (!(gamma > 0.0)) {
    throw ArgumentError("target_self_training_loss: gamma must be positive");
  }
  if (table.empty()) return 0.0;

  double sum = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!table[i].assigned) continue;
    const auto& p = probabilities[i];
    if (table[i].label < 0 ||
        static_cast<std::size_t>(table[i].label) >= p.size()) {
      throw ArgumentError("target_self_training_loss: label out of range");
    }
    sum += -std::log(std::max(p[static_cast<std::size_t>(table[i].label)],
                              kProbFloor)) -
           gamma;
  }
  return sum / static_cast<double>(table.size());
}

double lambda_schedule(int epoch, const SelfTrainConfig& config) {
  if (epoch < 0) throw ArgumentError("lambda_schedule: epoch must be >= 0");
  if (config.lambda_warmup_epochs < 0 || config.lambda_ramp_epochs < 0) {
    throw ArgumentError("lambda_schedule: negative schedule lengths");
  }
  if (epoch < config.lambda_warmup_epochs) return 0.0;
  if (config.lambda_ramp_epochs == 0) return 1.0;
  const double t = static_cast<double>(epoch - config.lambda_warmup_epochs) /
                   static_cast<double>(config.lambda_ramp_epochs);
  return std::min(1.0, t);
}

double semantic_loss(double source_ce, double target_st, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ArgumentError("semantic_loss: lambda must lie in [0,1]");
  }
  return source_ce + lambda * target_st;
}

}  // namespace geoadapt::selftrain
