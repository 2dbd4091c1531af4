// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fusionlab/distillstore.hpp"
#include "fusionlab/tokenizer.hpp"

namespace fusionlab::align {

enum class FallbackPolicy { kLongestCommonPrefix, kDrop };

// Vocabulary-level mapping from a source tokenizer onto a target tokenizer.
// `exact` pairs string-identical tokens; `fallback` holds the longest-prefix
// substitutes for unmapped tokens under the longest_common_prefix policy
// (absent entries fall through to the residual bucket).
struct AlignmentMap {
  FallbackPolicy policy = FallbackPolicy::kLongestCommonPrefix;
  std::unordered_map<int, int> exact;
  std::unordered_map<int, int> fallback;
  std::uint64_t source_vocab_hash = 0;
  std::uint64_t target_vocab_hash = 0;

  bool is_identity(int source_vocab_size) const;
};

AlignmentMap build_alignment_map(const lm::TokenizerSpec& src, const lm::TokenizerSpec& tgt,
                                 FallbackPolicy policy);

// Half-open index spans into the source and target token sequences.
struct SpanPair {
  int src_begin = 0;
  int src_end = 0;
  int tgt_begin = 0;
  int tgt_end = 0;
};

// Minimal segmentation of two tokenizations of the same string into
// text-equal span pairs (cut wherever both streams share a character
// boundary). Throws when the sequences decode to different strings.
std::vector<SpanPair> align_positions(std::span<const int> src_ids, const lm::TokenizerSpec& src,
                                      std::span<const int> tgt_ids, const lm::TokenizerSpec& tgt);

// Moves kept mass through the map: exact entries id-to-id, the rest per
// policy (prefix substitute, or residual under drop). Colliding targets
// accumulate; the result is renormalized to total mass 1.
store::SparseDistribution project_distribution(const store::SparseDistribution& dist,
                                               const AlignmentMap& map);

// Per-position teacher transfer: for every target position, the projected
// distribution of the last source position in the covering span pair.
std::vector<store::SparseDistribution> transfer_rows(
    std::span<const int> src_ids, std::span<const store::SparseDistribution> src_rows,
    const lm::TokenizerSpec& src, std::span<const int> tgt_ids, const lm::TokenizerSpec& tgt,
    const AlignmentMap& map);

std::string alignment_map_to_json(const AlignmentMap& map, const lm::TokenizerSpec& src,
                                  const lm::TokenizerSpec& tgt);

}  // namespace fusionlab::align
