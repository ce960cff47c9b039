#pragma once

#include <vector>

namespace geoadapt::selftrain {

// One target sample's pseudo-label slot. `assigned` is true exactly when the
// maximum predicted probability strictly exceeds exp(-gamma).
struct PseudoLabel {
  bool assigned = false;
  int label = -1;          // argmax class, valid iff assigned
  double confidence = 0.0; // max predicted probability
};

using PseudoLabelTable = std::vector<PseudoLabel>;

struct SelfTrainConfig {
  double gamma = 0.05;
  int lambda_warmup_epochs = 0;
  int lambda_ramp_epochs = 0;
};

// Closed-form per-sample assignment: one-hot at the argmax when the max
// probability strictly exceeds exp(-gamma), otherwise unassigned. Argmax ties
// break toward the lowest class index.
PseudoLabelTable assign_pseudo_labels(
    const std::vector<std::vector<double>>& probabilities, double gamma);

// (1/n) * sum over assigned samples of (-log p[label] - gamma); unassigned
// samples contribute zero. n is the table length.
double target_self_training_loss(
    const std::vector<std::vector<double>>& probabilities,
    const PseudoLabelTable& table, double gamma);

// 0 during warmup, then a linear ramp to 1 over ramp_epochs, then 1.
double lambda_schedule(int epoch, const SelfTrainConfig& config);

// source_ce + lambda * target_st.
double semantic_loss(double source_ce, double target_st, double lambda);

}  // namespace geoadapt::selftrain
