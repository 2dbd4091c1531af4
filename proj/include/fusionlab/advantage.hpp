// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fusionlab/corpus.hpp"
#include "fusionlab/distillstore.hpp"
#include "fusionlab/tinylm.hpp"

namespace fusionlab::advantage {

// A quality judge over (system, instruction, response); higher is better.
// Desk-scale stand-in for a trained reward model; must be deterministic.
struct RewardScorer {
  std::string id;
  std::string descriptor;
  std::function<double(const std::string& system, const std::string& instruction,
                       const std::string& response)>
      score;
};

enum class CeNormalization { kSum, kMean };

struct MinCeResult {
  int winner = 0;                // index into the model list
  std::vector<double> ce;        // one value per model
};

// Cross-entropy of the ground-truth response under each model's own
// tokenization; winner is the argmin, ties to the lowest index.
MinCeResult min_ce_select(std::span<const lm::TinyLM* const> models, const std::string& system,
                          const std::string& instruction, const std::string& response,
                          CeNormalization normalization = CeNormalization::kSum);

struct Candidate {
  std::vector<int> token_ids;  // supervision ids in the model's vocab (EOS included when emitted)
  std::string text;
  std::vector<store::SparseDistribution> rows;  // one per supervision position
};

// One sampled output per model with its per-position sparse distributions.
std::vector<Candidate> generate_candidates(std::span<const lm::TinyLM* const> models,
                                           const std::string& system,
                                           const std::string& instruction,
                                           std::span<const lm::DecodingParams> params_per_model,
                                           const store::SparsifyParams& sparsify_params);

struct VoteResult {
  int winner = 0;
  std::vector<int> votes;  // one count per candidate
};

// Each scorer votes for its best candidate (scorer-internal ties to the
// lowest candidate index); plurality wins; vote ties are decided by the
// designated strongest scorer's raw scores, remaining ties by lowest index.
VoteResult rm_vote(const std::vector<std::string>& candidates,
                   std::span<const RewardScorer> scorers, int strongest_scorer,
                   const std::string& system, const std::string& instruction);

struct ReferenceScoreBreakdown {
  double bleu = 0.0;
  double rouge = 0.0;
  double semantic = 0.0;
  double combined = 0.0;  // 0.25*bleu + 0.25*rouge + 0.5*semantic
};

double combine_reference_scores(double bleu, double rouge, double semantic);

// Whitespace-token sentence BLEU: uniform 1-4 gram geometric mean with
// add-one smoothing and brevity penalty.
double sentence_bleu(const std::string& candidate, const std::string& reference);
// ROUGE-L F1 over whitespace tokens.
double rouge_l_f1(const std::string& candidate, const std::string& reference);
// Cosine similarity of mean token embeddings, affinely mapped to [0, 1].
double embedding_similarity(const std::string& candidate, const std::string& reference,
                            const lm::TinyLM& embedder);

ReferenceScoreBreakdown reference_score(const std::string& candidate, const std::string& reference,
                                        const lm::TinyLM& embedder);

struct AdvantageRecord {
  std::string example_id;
  int train_winner = 0;            // model index, argmin CE
  std::string train_winner_model;  // model id
  std::vector<double> train_ce;
  int infer_winner = 0;
  std::string infer_winner_model;
  std::vector<int> infer_votes;
  std::vector<int> infer_response;  // winner's supervision ids (its own vocab)
};

// Builds per-example records from precomputed snapshots: CE per model from
// live teacher forcing, inference candidates from the stored infer records.
// Throws naming the missing (example, model, mode) when coverage is broken.
std::vector<AdvantageRecord> build_advantage_records(
    const std::vector<corpus::Example>& dataset, std::span<const lm::TinyLM* const> models,
    std::span<const std::string> model_ids, std::span<const RewardScorer> scorers,
    int strongest_scorer, const store::SnapshotSet& snapshots,
    CeNormalization normalization = CeNormalization::kSum);

void write_advantage_report(const std::string& path, std::span<const AdvantageRecord> records,
                            std::span<const std::string> model_ids);

// --- Desk-scale reward scorers -------------------------------------------

// 1 if the response solves the synthetic task named in the instruction,
// else 0; minus a small length penalty so degenerate padding never ties a
// correct answer.
RewardScorer make_task_correctness_scorer(int alphabet_size);

// reference_score against the ground truth, looked up by instruction.
RewardScorer make_reference_similarity_scorer(const std::vector<corpus::Example>& dataset,
                                              const lm::TinyLM& embedder);

// Mean per-token log-likelihood of the response under a judge model.
RewardScorer make_loglikelihood_scorer(const lm::TinyLM& judge);

}  // namespace fusionlab::advantage
