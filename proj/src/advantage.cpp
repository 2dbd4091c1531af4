// SPDX-License-Identifier: Apache-2.0
#include "fusionlab/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fusionlab/numerics.hpp"

namespace fusionlab::advantage {

MinCeResult min_ce_select(std::span<const lm::TinyLM* const> models, const std::string& system,
                          const std::string& instruction, const std::string& response,
                          CeNormalization normalization) {
  if (models.empty()) throw std::invalid_argument("min_ce_select: need at least one model");
  if (response.empty()) throw std::invalid_argument("min_ce_select: empty response");

  MinCeResult result;
  result.ce.reserve(models.size());
  for (const lm::TinyLM* model : models) {
    const auto x = lm::encode_prompt(model->tokenizer(), system, instruction);
    const auto y = lm::encode_supervision(model->tokenizer(), response);
    double ce = model->sequence_cross_entropy(x, y);
    if (normalization == CeNormalization::kMean) ce /= static_cast<double>(y.size());
    result.ce.push_back(ce);
  }
  result.winner = static_cast<int>(
      std::min_element(result.ce.begin(), result.ce.end()) - result.ce.begin());
  return result;
}

std::vector<Candidate> generate_candidates(std::span<const lm::TinyLM* const> models,
                                           const std::string& system,
                                           const std::string& instruction,
                                           std::span<const lm::DecodingParams> params_per_model,
                                           const store::SparsifyParams& sparsify_params) {
  if (params_per_model.size() != models.size())
    throw std::invalid_argument("generate_candidates: one DecodingParams per model required");

  std::vector<Candidate> out;
  out.reserve(models.size());
  for (std::size_t m = 0; m < models.size(); ++m) {
    const lm::TinyLM& model = *models[m];
    const auto x = lm::encode_prompt(model.tokenizer(), system, instruction);
    const auto trace = model.generate_trace(x, params_per_model[m]);

    Candidate cand;
    cand.token_ids = trace.ids;
    if (trace.ended_with_eos) cand.token_ids.push_back(model.tokenizer().eos_id);
    cand.text = lm::decode(model.tokenizer(), trace.ids);
    cand.rows.reserve(trace.step_logits.size());
    for (const auto& logits : trace.step_logits)
      cand.rows.push_back(store::sparsify(logits, sparsify_params));
    out.push_back(std::move(cand));
  }
  return out;
}

VoteResult rm_vote(const std::vector<std::string>& candidates,
                   std::span<const RewardScorer> scorers, int strongest_scorer,
                   const std::string& system, const std::string& instruction) {
  if (candidates.empty()) throw std::invalid_argument("rm_vote: need at least one candidate");
  if (scorers.empty()) throw std::invalid_argument("rm_vote: need at least one scorer");
  if (strongest_scorer < 0 || strongest_scorer >= static_cast<int>(scorers.size()))
    throw std::invalid_argument("rm_vote: strongest_scorer index out of range");

  VoteResult result;
  result.votes.assign(candidates.size(), 0);
  std::vector<double> strongest_scores(candidates.size(), 0.0);
  for (std::size_t s = 0; s < scorers.size(); ++s) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double score = scorers[s].score(system, instruction, candidates[c]);
      if (!std::isfinite(score))
        throw std::runtime_error("rm_vote: scorer '" + scorers[s].id + "' returned non-finite score");
      if (score > best_score) {
        best_score = score;
        best = c;
      }
      if (static_cast<int>(s) == strongest_scorer) strongest_scores[c] = score;
    }
    result.votes[best] += 1;
  }

  const int max_votes = *std::max_element(result.votes.begin(), result.votes.end());
  std::vector<std::size_t> tied;
  for (std::size_t c = 0; c < candidates.size(); ++c)
    if (result.votes[c] == max_votes) tied.push_back(c);

  std::size_t winner = tied.front();
  // Vote tie: the designated strongest scorer's raw score decides; any
  // remaining tie falls to the lowest index.
  for (std::size_t c : tied)
    if (strongest_scores[c] > strongest_scores[winner]) winner = c;
  result.winner = static_cast<int>(winner);
  return result;
}

// --- text metrics ----------------------------------------------------------

namespace {

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) tokens.push_back(tok);
  return tokens;
}

}  // namespace

double sentence_bleu(const std::string& candidate, const std::string& reference) {
  const auto cand = whitespace_tokens(candidate);
  const auto ref = whitespace_tokens(reference);
  if (cand.empty()) return 0.0;

  double log_precision_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, int> ref_counts;
    if (ref.size() >= n)
      for (std::size_t i = 0; i + n <= ref.size(); ++i)
        ref_counts[std::vector<std::string>(ref.begin() + static_cast<std::ptrdiff_t>(i),
                                            ref.begin() + static_cast<std::ptrdiff_t>(i + n))]++;
    int matches = 0;
    int total = 0;
    if (cand.size() >= n) {
      for (std::size_t i = 0; i + n <= cand.size(); ++i) {
        ++total;
        auto key = std::vector<std::string>(cand.begin() + static_cast<std::ptrdiff_t>(i),
                                            cand.begin() + static_cast<std::ptrdiff_t>(i + n));
        auto it = ref_counts.find(key);
        if (it != ref_counts.end() && it->second > 0) {
          ++matches;
          --it->second;  // clipped counts
        }
      }
    }
    // Add-one smoothing keeps zero-count orders defined.
    log_precision_sum += 0.25 * std::log((matches + 1.0) / (total + 1.0));
  }

  const double bp = cand.size() >= ref.size()
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(cand.size()));
  return bp * std::exp(log_precision_sum);
}

double rouge_l_f1(const std::string& candidate, const std::string& reference) {
  const auto cand = whitespace_tokens(candidate);
  const auto ref = whitespace_tokens(reference);
  if (cand.empty() || ref.empty()) return 0.0;

  // Longest common subsequence, O(|cand|*|ref|).
  std::vector<std::vector<int>> lcs(cand.size() + 1, std::vector<int>(ref.size() + 1, 0));
  for (std::size_t i = 1; i <= cand.size(); ++i)
    for (std::size_t j = 1; j <= ref.size(); ++j)
      lcs[i][j] = cand[i - 1] == ref[j - 1] ? lcs[i - 1][j - 1] + 1
                                            : std::max(lcs[i - 1][j], lcs[i][j - 1]);
  const double l = lcs[cand.size()][ref.size()];
  if (l == 0.0) return 0.0;
  const double precision = l / static_cast<double>(cand.size());
  const double recall = l / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

double embedding_similarity(const std::string& candidate, const std::string& reference,
                            const lm::TinyLM& embedder) {
  auto mean_embedding = [&embedder](const std::string& text) {
    const auto ids = lm::encode(embedder.tokenizer(), text);
    std::vector<double> mean(static_cast<std::size_t>(embedder.dims().embed_dim), 0.0);
    if (ids.empty()) return mean;
    for (int id : ids) {
      const auto row = embedder.embed.row(id);
      for (std::size_t e = 0; e < mean.size(); ++e) mean[e] += row[e];
    }
    for (double& x : mean) x /= static_cast<double>(ids.size());
    return mean;
  };

  if (candidate.empty()) return 0.0;
  const auto a = mean_embedding(candidate);
  const auto b = mean_embedding(reference);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t e = 0; e < a.size(); ++e) {
    dot += a[e] * b[e];
    na += a[e] * a[e];
    nb += b[e] * b[e];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double cosine = dot / (std::sqrt(na) * std::sqrt(nb));
  return 0.5 * (cosine + 1.0);
}

double combine_reference_scores(double bleu, double rouge, double semantic) {
  return 0.25 * bleu + 0.25 * rouge + 0.5 * semantic;
}

ReferenceScoreBreakdown reference_score(const std::string& candidate, const std::string& reference,
                                        const lm::TinyLM& embedder) {
  if (reference.empty()) throw std::invalid_argument("reference_score: empty reference");
  ReferenceScoreBreakdown b;
  b.bleu = sentence_bleu(candidate, reference);
  b.rouge = rouge_l_f1(candidate, reference);
  b.semantic = embedding_similarity(candidate, reference, embedder);
  b.combined = combine_reference_scores(b.bleu, b.rouge, b.semantic);
  return b;
}

// --- record assembly --------------------------------------------------------

std::vector<AdvantageRecord> build_advantage_records(
    const std::vector<corpus::Example>& dataset, std::span<const lm::TinyLM* const> models,
    std::span<const std::string> model_ids, std::span<const RewardScorer> scorers,
    int strongest_scorer, const store::SnapshotSet& snapshots, CeNormalization normalization) {
  if (models.size() != model_ids.size())
    throw std::invalid_argument("build_advantage_records: one id per model required");

  std::vector<AdvantageRecord> records;
  records.reserve(dataset.size());
  for (const auto& ex : dataset) {
    // Coverage check up front so gaps are reported even for modes that the
    // CE path would not touch.
    for (const auto& model_id : model_ids) {
      snapshots.require(ex.id, model_id, store::SnapshotMode::kTrain);
      snapshots.require(ex.id, model_id, store::SnapshotMode::kInfer);
    }

    AdvantageRecord rec;
    rec.example_id = ex.id;

    const MinCeResult min_ce = min_ce_select(models, ex.system, ex.instruction, ex.response,
                                             normalization);
    rec.train_winner = min_ce.winner;
    rec.train_winner_model = model_ids[static_cast<std::size_t>(min_ce.winner)];
    rec.train_ce = min_ce.ce;

    std::vector<std::string> candidate_texts;
    candidate_texts.reserve(models.size());
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto& snap = snapshots.require(ex.id, model_ids[m], store::SnapshotMode::kInfer);
      candidate_texts.push_back(lm::decode(models[m]->tokenizer(), snap.response_token_ids));
    }
    const VoteResult vote = rm_vote(candidate_texts, scorers, strongest_scorer, ex.system,
                                    ex.instruction);
    rec.infer_winner = vote.winner;
    rec.infer_winner_model = model_ids[static_cast<std::size_t>(vote.winner)];
    rec.infer_votes = vote.votes;
    rec.infer_response = snapshots
                             .require(ex.id, rec.infer_winner_model, store::SnapshotMode::kInfer)
                             .response_token_ids;
    records.push_back(std::move(rec));
  }
  return records;
}

void write_advantage_report(const std::string& path, std::span<const AdvantageRecord> records,
                            std::span<const std::string> model_ids) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& rec : records) {
    nlohmann::json j{{"example_id", rec.example_id},
                     {"train_winner", rec.train_winner_model},
                     {"train_ce", rec.train_ce},
                     {"infer_winner", rec.infer_winner_model},
                     {"infer_votes", rec.infer_votes},
                     {"models", std::vector<std::string>(model_ids.begin(), model_ids.end())}};
    out << j.dump() << '\n';
  }
}

// --- desk-scale scorers ------------------------------------------------------

RewardScorer make_task_correctness_scorer(int alphabet_size) {
  RewardScorer scorer;
  scorer.id = "task_correctness";
  scorer.descriptor = "1.0 when the response solves the synthetic task, minus 0.001/char length gap";
  scorer.score = [alphabet_size](const std::string&, const std::string& instruction,
                                 const std::string& response) {
    const auto parsed = corpus::parse_instruction(instruction);
    if (!parsed) return 0.0;
    const std::string answer = corpus::task_answer(parsed->kind, parsed->input, alphabet_size);
    const double correct = response == answer ? 1.0 : 0.0;
    const double length_gap = std::abs(static_cast<double>(response.size()) -
                                       static_cast<double>(answer.size()));
    return correct - 0.001 * length_gap;
  };
  return scorer;
}

RewardScorer make_reference_similarity_scorer(const std::vector<corpus::Example>& dataset,
                                              const lm::TinyLM& embedder) {
  auto references = std::make_shared<std::map<std::string, std::string>>();
  for (const auto& ex : dataset) references->emplace(ex.instruction, ex.response);

  RewardScorer scorer;
  scorer.id = "reference_similarity";
  scorer.descriptor = "0.25 BLEU + 0.25 ROUGE-L + 0.5 embedding cosine vs the ground truth";
  scorer.score = [references, &embedder](const std::string&, const std::string& instruction,
                                         const std::string& response) {
    auto it = references->find(instruction);
    if (it == references->end() || it->second.empty()) return 0.0;
    return reference_score(response, it->second, embedder).combined;
  };
  return scorer;
}

RewardScorer make_loglikelihood_scorer(const lm::TinyLM& judge) {
  RewardScorer scorer;
  scorer.id = "judge_loglikelihood";
  scorer.descriptor = "mean per-token log-likelihood of the response under the judge model";
  scorer.score = [&judge](const std::string& system, const std::string& instruction,
                          const std::string& response) {
    const auto x = lm::encode_prompt(judge.tokenizer(), system, instruction);
    const auto y = lm::encode_supervision(judge.tokenizer(), response);
    return -judge.sequence_cross_entropy(x, y) / static_cast<double>(y.size());
  };
  return scorer;
}

}  // namespace fusionlab::advantage
