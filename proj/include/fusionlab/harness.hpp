// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusionlab/advantage.hpp"
#include "fusionlab/align.hpp"
#include "fusionlab/corpus.hpp"
#include "fusionlab/distillstore.hpp"
#include "fusionlab/fuse.hpp"
#include "fusionlab/tinylm.hpp"

namespace fusionlab::harness {

// --- tokenizers over the synthetic charset ---------------------------------

// Single characters: task-name letters, the symbol alphabet, space, colon.
lm::TokenizerSpec synthetic_char_tokenizer(int alphabet_size);
// Same charset plus whole task words and all symbol bigrams, so the same
// text tokenizes into fewer pieces (the heterogeneous-vocabulary regime).
lm::TokenizerSpec synthetic_merged_tokenizer(int alphabet_size);

// --- source model pretraining ------------------------------------------------

struct TaskMixture {
  corpus::SyntheticTaskSpec task;
  double weight = 1.0;
};

struct SftOptions {
  int epochs = 6;
  double lr = 0.1;
  double momentum = 0.9;
  int batch_size = 8;
  bool cosine_decay = false;
  double grad_clip_norm = 10.0;
  std::uint64_t seed = 0;
};

struct SourceModelSpec {
  std::string model_id;
  lm::TokenizerKind tokenizer_kind = lm::TokenizerKind::kChar;
  std::vector<TaskMixture> mixture;
  int train_examples = 2000;
  lm::ModelDims dims{10, 14, 64};
  SftOptions train;
  std::uint64_t seed = 1;
};

// Weighted multi-task sample: per-task counts proportional to the weights,
// deterministically shuffled together.
std::vector<corpus::Example> sample_mixture(std::span<const TaskMixture> mixture, int n,
                                            std::uint64_t seed);

// Plain SFT loop (also the CSFT reference trajectory: run_strategy with the
// CSFT spec takes the arithmetically identical path).
void sft_train(lm::TinyLM& model, const std::vector<corpus::Example>& data,
               const SftOptions& options);

lm::TinyLM train_source_model(const SourceModelSpec& spec, int alphabet_size);
std::vector<lm::TinyLM> train_source_models(std::span<const SourceModelSpec> specs,
                                            int alphabet_size);

// --- snapshot preprocessing ---------------------------------------------------

struct PreprocessOptions {
  store::SparsifyParams sparsify;      // Appendix-A defaults
  lm::DecodingParams infer_decoding;   // sampling for inference outputs
  std::uint64_t seed = 0;              // stream for per-(model, example) decode seeds
};

// Two records per (example, model): teacher-forcing rows on the ground
// truth (train) and one sampled generation with its rows (infer).
std::vector<store::SnapshotRecord> build_snapshots(const std::vector<corpus::Example>& data,
                                                   std::span<const lm::TinyLM* const> models,
                                                   std::span<const std::string> model_ids,
                                                   const PreprocessOptions& options);

// --- strategies ---------------------------------------------------------------

enum class StrategyName {
  kCsft,
  kTrainFuse,
  kSimulFuse,
  kReverseFuse,
  kProFuser,
  kGtLenCurriculum,
  kRmScoreCurriculum,
};

std::string strategy_name(StrategyName name);
std::optional<StrategyName> strategy_from_name(const std::string& name);

struct StrategySpec {
  StrategyName name = StrategyName::kProFuser;
  int epochs = 3;
  std::optional<std::vector<fuse::PhaseEntry>> phase_override;
};

// Name-specific phase defaults: CSFT (w2=1, beta=0), TrainFuse (w2=1,
// beta=0.5), SimulFuse (w1=0.1, w2=1, beta=0.5 throughout), ReverseFuse
// (ProFuser phases with the mode weights swapped), ProFuser and the two
// curricula (inference epoch then training epochs).
std::vector<fuse::PhaseEntry> strategy_phases(const StrategySpec& spec);

// --- experiment configuration ---------------------------------------------------

struct TaskShare {
  corpus::TaskKind kind = corpus::TaskKind::kCopy;
  int length = 4;       // fixed input length
  double share = 0.0;   // fraction of the fusion dataset
};

struct ExperimentConfig {
  int alphabet_size = 5;
  std::vector<TaskShare> fusion_tasks;
  int fusion_examples = 300;
  std::vector<SourceModelSpec> sources;
  std::string target_model_id = "auto";  // "auto": strongest source by held-out macro EM
  fuse::FusionConfig fusion;             // kl temperature, residual policy, override betas
  store::SparsifyParams sparsify;
  lm::DecodingParams infer_decoding;
  SftOptions fusion_train;
  advantage::CeNormalization ce_normalization = advantage::CeNormalization::kSum;
  int eval_examples_per_task = 150;
  int perplexity_examples = 100;
  std::uint64_t base_seed = 0;
};

// The two-source complementary-skill setup used by the default experiments:
// "alpha" (merged tokenizer, REVERSE-leaning generalist) and "bravo" (char
// tokenizer, MODSUM specialist).
ExperimentConfig default_experiment();

std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const std::string& text);

// --- per-seed world -------------------------------------------------------------

// Everything one seed's runs share: trained sources, fusion data, snapshots,
// advantage records, the target initialization, and alignment maps onto the
// target vocabulary. Move-only (reward scorers reference the models).
struct ExperimentWorld {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::vector<lm::TinyLM> sources;
  std::vector<std::string> model_ids;
  int target_source = 0;
  std::vector<corpus::Example> fusion_data;
  store::SnapshotSet snapshots;
  std::string snapshot_hash;  // FNV-1a hex of the serialized snapshot bytes
  std::vector<advantage::AdvantageRecord> records;

  ExperimentWorld() = default;
  ExperimentWorld(const ExperimentWorld&) = delete;
  ExperimentWorld& operator=(const ExperimentWorld&) = delete;
  ExperimentWorld(ExperimentWorld&&) = default;
  ExperimentWorld& operator=(ExperimentWorld&&) = default;

  const lm::TinyLM& target_init() const { return sources[static_cast<std::size_t>(target_source)]; }
};

ExperimentWorld build_world(const ExperimentConfig& config, std::uint64_t seed);

// Scorers reference world.sources; keep the world alive while using them.
// Index 0 is the designated strongest scorer (task correctness).
std::vector<advantage::RewardScorer> make_scorers(const ExperimentWorld& world);

// --- evaluation & runs -----------------------------------------------------------

struct EvalReport {
  std::string strategy;
  std::uint64_t seed = 0;
  std::map<std::string, double> task_exact_match;
  double macro_average = 0.0;
  double heldout_perplexity = 0.0;
  std::map<std::string, double> train_win_fraction;  // per model id
  std::map<std::string, double> infer_win_fraction;
  std::string snapshot_hash;
  std::string resolved_config_json;  // experiment config + strategy + phases
};

std::string eval_report_to_json(const EvalReport& report);

struct EvalSuite {
  std::map<std::string, std::vector<corpus::Example>> per_task;
  std::vector<corpus::Example> perplexity_set;
};

EvalSuite build_eval_suite(const ExperimentConfig& config, std::uint64_t seed);

double exact_match(const lm::TinyLM& model, const std::vector<corpus::Example>& examples);
double heldout_perplexity(const lm::TinyLM& model, const std::vector<corpus::Example>& examples);

struct WinFractions {
  std::vector<double> train;  // per model index, sums to 1
  std::vector<double> infer;
};

WinFractions analyze_advantage(std::span<const advantage::AdvantageRecord> records,
                               std::size_t n_models);

struct RunResult {
  lm::TinyLM fused;
  EvalReport report;
};

RunResult run_strategy(const ExperimentWorld& world, const StrategySpec& strategy,
                       std::uint64_t run_seed);

// --- strategy comparison ----------------------------------------------------------

struct ComparisonResult {
  std::vector<EvalReport> rows;                    // one per (strategy, seed)
  std::map<std::string, double> mean_macro;        // per strategy
  std::map<std::string, double> mean_perplexity;
  // win_counts[a][b] = #seeds where strategy a's macro beats strategy b's.
  std::map<std::string, std::map<std::string, int>> win_counts;
};

ComparisonResult compare_strategies(const ExperimentConfig& config,
                                    std::span<const StrategySpec> strategies,
                                    std::span<const std::uint64_t> seeds);

std::string comparison_to_json(const ComparisonResult& result);
std::string comparison_to_markdown(const ComparisonResult& result);

}  // namespace fusionlab::harness
