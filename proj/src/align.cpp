// SPDX-License-Identifier: Apache-2.0
#include "fusionlab/align.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace fusionlab::align {

bool AlignmentMap::is_identity(int source_vocab_size) const {
  if (static_cast<int>(exact.size()) != source_vocab_size) return false;
  for (const auto& [s, t] : exact)
    if (s != t) return false;
  return true;
}

AlignmentMap build_alignment_map(const lm::TokenizerSpec& src, const lm::TokenizerSpec& tgt,
                                 FallbackPolicy policy) {
  AlignmentMap map;
  map.policy = policy;
  map.source_vocab_hash = lm::vocab_hash(src);
  map.target_vocab_hash = lm::vocab_hash(tgt);
  for (int s = 0; s < src.size(); ++s) {
    const std::string& piece = src.piece(s);
    const int t = tgt.id_of(piece);
    if (t >= 0) {
      map.exact.emplace(s, t);
      continue;
    }
    if (policy == FallbackPolicy::kLongestCommonPrefix) {
      // Longest proper prefix of the source piece present in the target vocab.
      for (std::size_t len = piece.size() - 1; len >= 1; --len) {
        const int p = tgt.id_of(std::string_view(piece).substr(0, len));
        if (p >= 0) {
          map.fallback.emplace(s, p);
          break;
        }
      }
    }
  }
  return map;
}

std::vector<SpanPair> align_positions(std::span<const int> src_ids, const lm::TokenizerSpec& src,
                                      std::span<const int> tgt_ids, const lm::TokenizerSpec& tgt) {
  auto piece_len = [](const lm::TokenizerSpec& tok, int id) -> std::size_t {
    return tok.is_special(id) ? 0 : tok.piece(id).size();
  };
  {
    std::vector<int> s(src_ids.begin(), src_ids.end());
    std::vector<int> t(tgt_ids.begin(), tgt_ids.end());
    if (lm::decode(src, s) != lm::decode(tgt, t))
      throw std::invalid_argument("align_positions: sequences decode to different strings");
  }

  std::vector<SpanPair> pairs;
  std::size_t i = 0, j = 0;
  while (i < src_ids.size() || j < tgt_ids.size()) {
    SpanPair pair;
    pair.src_begin = static_cast<int>(i);
    pair.tgt_begin = static_cast<int>(j);
    std::size_t acc_src = 0, acc_tgt = 0;
    if (i < src_ids.size()) acc_src = piece_len(src, src_ids[i++]);
    if (j < tgt_ids.size()) acc_tgt = piece_len(tgt, tgt_ids[j++]);
    while (acc_src != acc_tgt) {
      if (acc_src < acc_tgt) {
        if (i >= src_ids.size())
          throw std::invalid_argument("align_positions: unbalanced token boundaries");
        acc_src += piece_len(src, src_ids[i++]);
      } else {
        if (j >= tgt_ids.size())
          throw std::invalid_argument("align_positions: unbalanced token boundaries");
        acc_tgt += piece_len(tgt, tgt_ids[j++]);
      }
    }
    // Zero-width specials are only balanced when both sides advanced; a
    // trailing EOS on one side alone has no partner span.
    if (i == static_cast<std::size_t>(pair.src_begin) ||
        j == static_cast<std::size_t>(pair.tgt_begin))
      throw std::invalid_argument("align_positions: unbalanced trailing special tokens");
    pair.src_end = static_cast<int>(i);
    pair.tgt_end = static_cast<int>(j);
    pairs.push_back(pair);
  }
  return pairs;
}

store::SparseDistribution project_distribution(const store::SparseDistribution& dist,
                                               const AlignmentMap& map) {
  dist.validate(1e-6);

  std::unordered_map<int, double> mass;
  double residual = dist.residual;
  for (std::size_t i = 0; i < dist.token_ids.size(); ++i) {
    const int s = dist.token_ids[i];
    const double p = dist.probs[i];
    if (auto it = map.exact.find(s); it != map.exact.end()) {
      mass[it->second] += p;
    } else if (auto fb = map.fallback.find(s);
               map.policy == FallbackPolicy::kLongestCommonPrefix && fb != map.fallback.end()) {
      mass[fb->second] += p;
    } else {
      residual += p;
    }
  }

  store::SparseDistribution out;
  out.token_ids.reserve(mass.size());
  for (const auto& [id, p] : mass) out.token_ids.push_back(id);
  // Descending probability, ascending id on ties.
  std::sort(out.token_ids.begin(), out.token_ids.end(), [&mass](int a, int b) {
    const double pa = mass.at(a), pb = mass.at(b);
    return pa != pb ? pa > pb : a < b;
  });
  double total = residual;
  for (int id : out.token_ids) total += mass.at(id);
  out.probs.reserve(out.token_ids.size());
  for (int id : out.token_ids) out.probs.push_back(mass.at(id) / total);
  out.residual = residual / total;
  return out;
}

std::vector<store::SparseDistribution> transfer_rows(
    std::span<const int> src_ids, std::span<const store::SparseDistribution> src_rows,
    const lm::TokenizerSpec& src, std::span<const int> tgt_ids, const lm::TokenizerSpec& tgt,
    const AlignmentMap& map) {
  if (src_rows.size() != src_ids.size())
    throw std::invalid_argument("transfer_rows: one source row per source position required");

  const auto pairs = align_positions(src_ids, src, tgt_ids, tgt);
  std::vector<store::SparseDistribution> out(tgt_ids.size());
  for (const auto& pair : pairs) {
    const auto projected = project_distribution(src_rows[static_cast<std::size_t>(pair.src_end - 1)], map);
    for (int t = pair.tgt_begin; t < pair.tgt_end; ++t) out[static_cast<std::size_t>(t)] = projected;
  }
  return out;
}

std::string alignment_map_to_json(const AlignmentMap& map, const lm::TokenizerSpec& src,
                                  const lm::TokenizerSpec& tgt) {
  nlohmann::json exact = nlohmann::json::object();
  for (int s = 0; s < src.size(); ++s)
    if (auto it = map.exact.find(s); it != map.exact.end())
      exact[src.piece(s)] = tgt.piece(it->second);
  nlohmann::json fallback = nlohmann::json::object();
  for (int s = 0; s < src.size(); ++s)
    if (auto it = map.fallback.find(s); it != map.fallback.end())
      fallback[src.piece(s)] = tgt.piece(it->second);
  nlohmann::json unmapped = nlohmann::json::array();
  for (int s = 0; s < src.size(); ++s)
    if (!map.exact.count(s) && !map.fallback.count(s)) unmapped.push_back(src.piece(s));

  nlohmann::json j;
  j["policy"] = map.policy == FallbackPolicy::kLongestCommonPrefix ? "longest_common_prefix" : "drop";
  j["exact"] = exact;
  j["fallback"] = fallback;
  j["unmapped"] = unmapped;
  return j.dump(2);
}

}  // namespace fusionlab::align
