// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fusionlab::lm {

enum class TokenizerKind { kChar, kGreedyMerge };

// Reserved strings for the four special tokens. They are ordinary vocab
// entries (always ids 0..3) so cross-tokenizer exact matching covers them.
inline constexpr const char* kBosPiece = "<bos>";
inline constexpr const char* kEosPiece = "<eos>";
inline constexpr const char* kPadPiece = "<pad>";
inline constexpr const char* kUnkPiece = "<unk>";

struct TokenizerSpec {
  TokenizerKind kind = TokenizerKind::kChar;
  std::vector<std::string> vocab;  // specials first, then pieces
  int bos_id = 0;
  int eos_id = 1;
  int pad_id = 2;
  int unk_id = 3;

  int size() const { return static_cast<int>(vocab.size()); }
  bool is_special(int id) const {
    return id == bos_id || id == eos_id || id == pad_id || id == unk_id;
  }
  const std::string& piece(int id) const { return vocab.at(static_cast<std::size_t>(id)); }
  // -1 when the string is not a vocab entry.
  int id_of(std::string_view piece) const;

 private:
  friend TokenizerSpec make_tokenizer(TokenizerKind, const std::vector<std::string>&);
  friend TokenizerSpec tokenizer_from_json(const std::string&);
  mutable std::unordered_map<std::string, int> lookup_;  // built lazily
  void build_lookup() const;
};

// Builds a spec from non-special pieces; specials are prepended automatically.
// Validates: unique entries, char kind holds single characters only,
// greedy_merge vocab closed under the single characters of multi-char pieces.
// Throws std::invalid_argument on violation.
TokenizerSpec make_tokenizer(TokenizerKind kind, const std::vector<std::string>& pieces);

std::vector<int> encode(const TokenizerSpec& tok, std::string_view text);
std::string decode(const TokenizerSpec& tok, const std::vector<int>& ids);

// FNV-1a over the vocab; identifies a vocabulary in snapshot headers.
std::uint64_t vocab_hash(const TokenizerSpec& tok);

std::string tokenizer_to_json(const TokenizerSpec& tok);
TokenizerSpec tokenizer_from_json(const std::string& text);
void save_tokenizer(const std::string& path, const TokenizerSpec& tok);
TokenizerSpec load_tokenizer(const std::string& path);

}  // namespace fusionlab::lm
