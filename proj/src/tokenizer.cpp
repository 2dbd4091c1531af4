// SPDX-License-Identifier: Apache-2.0
#include "fusionlab/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fusionlab::lm {

void TokenizerSpec::build_lookup() const {
  if (!lookup_.empty()) return;
  for (int i = 0; i < size(); ++i) lookup_.emplace(vocab[static_cast<std::size_t>(i)], i);
}

int TokenizerSpec::id_of(std::string_view piece) const {
  build_lookup();
  auto it = lookup_.find(std::string(piece));
  return it == lookup_.end() ? -1 : it->second;
}

TokenizerSpec make_tokenizer(TokenizerKind kind, const std::vector<std::string>& pieces) {
  TokenizerSpec tok;
  tok.kind = kind;
  tok.vocab = {kBosPiece, kEosPiece, kPadPiece, kUnkPiece};
  for (const auto& p : pieces) {
    if (p.empty()) throw std::invalid_argument("tokenizer: empty vocab piece");
    tok.vocab.push_back(p);
  }

  std::set<std::string> seen;
  for (const auto& p : tok.vocab) {
    if (!seen.insert(p).second)
      throw std::invalid_argument("tokenizer: duplicate vocab piece '" + p + "'");
  }

  for (const auto& p : pieces) {
    if (kind == TokenizerKind::kChar && p.size() > 1)
      throw std::invalid_argument("tokenizer: char kind requires single-character pieces, got '" +
                                  p + "'");
    if (kind == TokenizerKind::kGreedyMerge && p.size() > 1) {
      for (char c : p) {
        if (!seen.count(std::string(1, c)))
          throw std::invalid_argument(
              "tokenizer: greedy_merge vocab not closed under characters of '" + p + "'");
      }
    }
  }
  return tok;
}

std::vector<int> encode(const TokenizerSpec& tok, std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (tok.kind == TokenizerKind::kChar) {
      const int id = tok.id_of(text.substr(pos, 1));
      ids.push_back(id >= 0 ? id : tok.unk_id);
      ++pos;
      continue;
    }
    // greedy_merge: left-to-right longest match.
    int best_id = -1;
    std::size_t best_len = 0;
    const std::size_t remaining = text.size() - pos;
    for (int i = 0; i < tok.size(); ++i) {
      const std::string& p = tok.vocab[static_cast<std::size_t>(i)];
      if (p.size() > best_len && p.size() <= remaining &&
          text.compare(pos, p.size(), p) == 0) {
        best_id = i;
        best_len = p.size();
      }
    }
    if (best_id < 0) {
      ids.push_back(tok.unk_id);
      ++pos;
    } else {
      ids.push_back(best_id);
      pos += best_len;
    }
  }
  return ids;
}

std::string decode(const TokenizerSpec& tok, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= tok.size())
      throw std::out_of_range("decode: token id " + std::to_string(id) + " out of range");
    if (tok.is_special(id)) continue;
    out += tok.piece(id);
  }
  return out;
}

std::uint64_t vocab_hash(const TokenizerSpec& tok) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    h ^= 0x1f;  // entry separator
    h *= 0x100000001b3ull;
  };
  feed(tok.kind == TokenizerKind::kChar ? "char" : "greedy_merge");
  for (const auto& p : tok.vocab) feed(p);
  return h;
}

std::string tokenizer_to_json(const TokenizerSpec& tok) {
  nlohmann::json j;
  j["kind"] = tok.kind == TokenizerKind::kChar ? "char" : "greedy_merge";
  j["vocab"] = tok.vocab;
  j["special"] = {{"bos", tok.bos_id}, {"eos", tok.eos_id}, {"pad", tok.pad_id}, {"unk", tok.unk_id}};
  return j.dump(2);
}

TokenizerSpec tokenizer_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const std::string kind_str = j.at("kind").get<std::string>();
  TokenizerKind kind;
  if (kind_str == "char")
    kind = TokenizerKind::kChar;
  else if (kind_str == "greedy_merge")
    kind = TokenizerKind::kGreedyMerge;
  else
    throw std::invalid_argument("tokenizer: unknown kind '" + kind_str + "'");

  auto vocab = j.at("vocab").get<std::vector<std::string>>();
  if (vocab.size() < 4 || vocab[0] != kBosPiece || vocab[1] != kEosPiece ||
      vocab[2] != kPadPiece || vocab[3] != kUnkPiece)
    throw std::invalid_argument("tokenizer: vocab must start with the four special pieces");
  std::vector<std::string> pieces(vocab.begin() + 4, vocab.end());
  return make_tokenizer(kind, pieces);
}

void save_tokenizer(const std::string& path, const TokenizerSpec& tok) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << tokenizer_to_json(tok) << '\n';
}

TokenizerSpec load_tokenizer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return tokenizer_from_json(ss.str());
}

}  // namespace fusionlab::lm
