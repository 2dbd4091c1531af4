// SPDX-License-Identifier: Apache-2.0
#include "fusionlab/fuse.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "fusionlab/numerics.hpp"

namespace fusionlab::fuse {

namespace {
constexpr double kProbFloor = 1e-12;
}

std::vector<PhaseEntry> default_phases() {
  return {{1, 1, 1.0, 0.0, 0.1}, {2, 3, 0.1, 1.0, 0.5}};
}

void FusionConfig::validate() const {
  if (kl_temperature <= 0.0) throw std::invalid_argument("fusion config: kl_temperature must be > 0");
  if (phases.empty()) throw std::invalid_argument("fusion config: at least one phase required");
  for (const auto& p : phases) {
    if (p.first_epoch < 1 || p.last_epoch < p.first_epoch)
      throw std::invalid_argument("fusion config: bad phase epoch range");
    if (p.w1 < 0.0 || p.w2 < 0.0 || p.beta < 0.0)
      throw std::invalid_argument("fusion config: phase weights must be nonnegative");
    if (p.w1 + p.w2 <= 0.0)
      throw std::invalid_argument("fusion config: every phase needs w1 + w2 > 0");
  }
}

void FusionItem::validate() const {
  if (y.empty()) throw std::invalid_argument("fusion item: empty supervision sequence");
  if (teacher_rows.size() != y.size())
    throw std::invalid_argument("fusion item: one teacher row per supervision position required");
  for (const auto& row : teacher_rows) row.validate(1e-6);
}

double kl_divergence_with_grad(const store::SparseDistribution& teacher,
                               std::span<const double> target_logits, double kl_temperature,
                               store::ResidualPolicy policy, double grad_scale,
                               std::span<double> grad) {
  if (!all_finite(target_logits)) throw std::invalid_argument("kl: target logits must be finite");
  if (!grad.empty() && grad.size() != target_logits.size())
    throw std::invalid_argument("kl: gradient span size mismatch");
  const int v = static_cast<int>(target_logits.size());
  for (int id : teacher.token_ids)
    if (id < 0 || id >= v)
      throw std::invalid_argument("kl: teacher id out of range for target vocabulary");

  const std::vector<double> s = softmax(target_logits, kl_temperature);
  const double inv_tau = 1.0 / kl_temperature;

  double kl = 0.0;
  if (policy == store::ResidualPolicy::kSingleBucket) {
    // Common space = kept ids + one bucket holding everything else.
    std::vector<char> kept(static_cast<std::size_t>(v), 0);
    double target_kept = 0.0;
    for (std::size_t i = 0; i < teacher.token_ids.size(); ++i) {
      const auto id = static_cast<std::size_t>(teacher.token_ids[i]);
      kept[id] = 1;
      target_kept += s[id];
      const double p = teacher.probs[i];
      kl += p * (std::log(p) - std::log(std::max(s[id], kProbFloor)));
    }
    const double bucket = std::max(1.0 - target_kept, 0.0);
    const double r = teacher.residual;
    if (r > 0.0) kl += r * (std::log(r) - std::log(std::max(bucket, kProbFloor)));

    if (!grad.empty()) {
      // d KL / d logit_m = (s_m - q_m) / tau, with q the teacher mass mapped
      // onto the target support: kept ids keep their own probability, the
      // residual spreads over the bucket proportionally to the target.
      const double bucket_safe = std::max(bucket, kProbFloor);
      std::vector<double> q(static_cast<std::size_t>(v), 0.0);
      for (std::size_t i = 0; i < teacher.token_ids.size(); ++i)
        q[static_cast<std::size_t>(teacher.token_ids[i])] = teacher.probs[i];
      for (int m = 0; m < v; ++m) {
        const auto mu = static_cast<std::size_t>(m);
        const double qm = kept[mu] ? q[mu] : r * s[mu] / bucket_safe;
        grad[mu] += grad_scale * inv_tau * (s[mu] - qm);
      }
    }
  } else {
    const std::vector<double> t = store::densify(teacher, v, store::ResidualPolicy::kUniformOverRest);
    for (int m = 0; m < v; ++m) {
      const auto mu = static_cast<std::size_t>(m);
      if (t[mu] > 0.0) kl += t[mu] * (std::log(t[mu]) - std::log(std::max(s[mu], kProbFloor)));
      if (!grad.empty()) grad[mu] += grad_scale * inv_tau * (s[mu] - t[mu]);
    }
  }
  return kl;
}

double kl_divergence(const store::SparseDistribution& teacher,
                     std::span<const double> target_logits, double kl_temperature,
                     store::ResidualPolicy policy) {
  return kl_divergence_with_grad(teacher, target_logits, kl_temperature, policy, 0.0, {});
}

FusionLossResult fusion_loss(const lm::TinyLM& model, const FusionItem& item, double beta,
                             double kl_temperature, store::ResidualPolicy policy) {
  item.validate();
  if (beta < 0.0) throw std::invalid_argument("fusion_loss: beta must be nonnegative");

  const lm::LogitsMatrix logits = model.teacher_forcing_logits(item.x, item.y);
  FusionLossResult result;
  result.upstream = lm::Matrix(logits.rows, logits.cols);

  for (int t = 0; t < logits.rows; ++t) {
    const auto row = logits.row(t);
    auto up = result.upstream.row(t);
    const int target_id = item.y[static_cast<std::size_t>(t)];

    // SFT term; upstream = softmax - onehot.
    result.ce += log_sum_exp(row) - row[static_cast<std::size_t>(target_id)];
    const std::vector<double> probs = softmax(row);
    std::copy(probs.begin(), probs.end(), up.begin());
    up[static_cast<std::size_t>(target_id)] -= 1.0;

    // Skipped (not multiplied by zero) when beta == 0 so the beta=0 path is
    // arithmetically identical to plain SFT.
    if (beta != 0.0)
      result.kl += kl_divergence_with_grad(item.teacher_rows[static_cast<std::size_t>(t)], row,
                                           kl_temperature, policy, beta, up);
  }
  result.loss = beta != 0.0 ? result.ce + beta * result.kl : result.ce;
  return result;
}

ProfuserLossResult profuser_loss(const lm::TinyLM& model, const FusionItem* infer_item,
                                 const FusionItem* train_item, double w1, double w2,
                                 double beta_infer, double beta_train, double kl_temperature,
                                 store::ResidualPolicy policy) {
  if (w1 < 0.0 || w2 < 0.0) throw std::invalid_argument("profuser_loss: weights must be nonnegative");
  if (w1 + w2 <= 0.0) throw std::invalid_argument("profuser_loss: need w1 + w2 > 0");
  if (infer_item == nullptr && train_item == nullptr)
    throw std::invalid_argument("profuser_loss: both items absent");
  if (w1 > 0.0 && infer_item == nullptr)
    throw std::invalid_argument("profuser_loss: w1 > 0 requires an inference-mode item");
  if (w2 > 0.0 && train_item == nullptr)
    throw std::invalid_argument("profuser_loss: w2 > 0 requires a training-mode item");

  ProfuserLossResult result;
  result.w1 = w1;
  result.w2 = w2;
  if (w1 > 0.0) {
    FusionLossResult part = fusion_loss(model, *infer_item, beta_infer, kl_temperature, policy);
    result.loss += w1 * part.loss;
    for (double& g : part.upstream.data) g *= w1;
    result.infer_part = std::move(part);
  }
  if (w2 > 0.0) {
    FusionLossResult part = fusion_loss(model, *train_item, beta_train, kl_temperature, policy);
    result.loss += w2 * part.loss;
    for (double& g : part.upstream.data) g *= w2;
    result.train_part = std::move(part);
  }
  return result;
}

PhaseWeights phase_schedule(const FusionConfig& config, int epoch) {
  config.validate();
  if (epoch < 1) throw std::invalid_argument("phase_schedule: epochs are 1-based");
  for (const auto& p : config.phases) {
    if (epoch >= p.first_epoch && epoch <= p.last_epoch) return PhaseWeights{p.w1, p.w2, p.beta};
  }
  throw std::out_of_range("phase_schedule: epoch " + std::to_string(epoch) +
                          " not covered by any phase");
}

std::string fusion_config_to_json(const FusionConfig& config) {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : config.phases)
    phases.push_back({{"first_epoch", p.first_epoch},
                      {"last_epoch", p.last_epoch},
                      {"w1", p.w1},
                      {"w2", p.w2},
                      {"beta", p.beta}});
  nlohmann::json j{{"kl_temperature", config.kl_temperature},
                   {"residual_policy", config.residual_policy == store::ResidualPolicy::kSingleBucket
                                            ? "single_bucket"
                                            : "uniform_over_rest"},
                   {"phases", phases}};
  if (config.beta_infer) j["beta_infer"] = *config.beta_infer;
  if (config.beta_train) j["beta_train"] = *config.beta_train;
  return j.dump(2);
}

FusionConfig fusion_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  FusionConfig config;
  config.kl_temperature = j.value("kl_temperature", 1.0);
  const std::string policy = j.value("residual_policy", std::string("single_bucket"));
  if (policy == "single_bucket")
    config.residual_policy = store::ResidualPolicy::kSingleBucket;
  else if (policy == "uniform_over_rest")
    config.residual_policy = store::ResidualPolicy::kUniformOverRest;
  else
    throw std::invalid_argument("fusion config: unknown residual_policy '" + policy + "'");
  if (j.contains("phases")) {
    config.phases.clear();
    for (const auto& pj : j.at("phases"))
      config.phases.push_back(PhaseEntry{pj.at("first_epoch").get<int>(),
                                         pj.at("last_epoch").get<int>(), pj.at("w1").get<double>(),
                                         pj.at("w2").get<double>(), pj.at("beta").get<double>()});
  }
  if (j.contains("beta_infer")) config.beta_infer = j.at("beta_infer").get<double>();
  if (j.contains("beta_train")) config.beta_train = j.at("beta_train").get<double>();
  config.validate();
  return config;
}

}  // namespace fusionlab::fuse
