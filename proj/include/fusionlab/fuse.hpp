// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusionlab/distillstore.hpp"
#include "fusionlab/tinylm.hpp"

namespace fusionlab::fuse {

struct PhaseEntry {
  int first_epoch = 1;  // inclusive, 1-based
  int last_epoch = 1;   // inclusive
  double w1 = 1.0;      // inference-mode weight
  double w2 = 0.0;      // training-mode weight
  double beta = 0.1;    // KL weight inside the per-mode fusion loss
};

// Progressive defaults: one inference-mode epoch, then two epochs with the
// training mode stressed and the inference signal kept at 0.1.
std::vector<PhaseEntry> default_phases();

struct FusionConfig {
  double kl_temperature = 1.0;
  store::ResidualPolicy residual_policy = store::ResidualPolicy::kSingleBucket;
  std::vector<PhaseEntry> phases = default_phases();
  // Optional per-mode KL weight overrides; when absent the phase beta
  // applies to both modes.
  std::optional<double> beta_infer;
  std::optional<double> beta_train;

  void validate() const;
};

// Supervision for one mode of one example, already in the target vocab:
// prompt ids, supervision ids, and one teacher row per supervision position.
struct FusionItem {
  std::vector<int> x;
  std::vector<int> y;
  std::vector<store::SparseDistribution> teacher_rows;

  void validate() const;
};

// Forward KL D(teacher || target softmax at kl_temperature), both sides
// densified per the residual policy; 0*ln(0) = 0 and target probabilities
// floored at 1e-12.
double kl_divergence(const store::SparseDistribution& teacher,
                     std::span<const double> target_logits, double kl_temperature,
                     store::ResidualPolicy policy);

// Same value plus d KL / d target_logits accumulated into grad (scaled by
// `grad_scale`).
double kl_divergence_with_grad(const store::SparseDistribution& teacher,
                               std::span<const double> target_logits, double kl_temperature,
                               store::ResidualPolicy policy, double grad_scale,
                               std::span<double> grad);

struct FusionLossResult {
  double loss = 0.0;     // ce + beta * kl
  double ce = 0.0;       // summed over positions
  double kl = 0.0;       // summed over positions
  lm::Matrix upstream;   // T x V, d loss / d logits, ready for TinyLM::backward
};

// L_Fuse = L_SFT(x, y) + beta * sum_t KL(teacher_t, target_t). When beta is
// zero the KL path is skipped entirely so the result is arithmetically
// identical to plain SFT.
FusionLossResult fusion_loss(const lm::TinyLM& model, const FusionItem& item, double beta,
                             double kl_temperature = 1.0,
                             store::ResidualPolicy policy = store::ResidualPolicy::kSingleBucket);

struct ProfuserLossResult {
  double loss = 0.0;
  // Weighted per-mode parts; absent when the mode's weight is zero or its
  // item was not supplied. Upstream matrices are already scaled by w1/w2.
  std::optional<FusionLossResult> infer_part;
  std::optional<FusionLossResult> train_part;
  double w1 = 0.0;
  double w2 = 0.0;
};

// L_ProFuser = w1 * L_Infer-Fuse + w2 * L_Train-Fuse. Items may be null when
// their weight is zero; both absent (or both weights zero) is an error.
ProfuserLossResult profuser_loss(const lm::TinyLM& model, const FusionItem* infer_item,
                                 const FusionItem* train_item, double w1, double w2,
                                 double beta_infer, double beta_train, double kl_temperature = 1.0,
                                 store::ResidualPolicy policy = store::ResidualPolicy::kSingleBucket);

struct PhaseWeights {
  double w1 = 0.0;
  double w2 = 0.0;
  double beta = 0.0;
};

// Weights for a 1-based epoch; throws when no phase covers it.
PhaseWeights phase_schedule(const FusionConfig& config, int epoch);

std::string fusion_config_to_json(const FusionConfig& config);
FusionConfig fusion_config_from_json(const std::string& text);

}  // namespace fusionlab::fuse
