// SPDX-License-Identifier: Apache-2.0
#include "fusionlab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "fusionlab/rng.hpp"

namespace fusionlab::corpus {

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "COPY";
    case TaskKind::kReverse: return "REVERSE";
    case TaskKind::kModSum: return "MODSUM";
    case TaskKind::kSort: return "SORT";
  }
  throw std::logic_error("unreachable task kind");
}

std::optional<TaskKind> task_from_name(std::string_view name) {
  if (name == "COPY") return TaskKind::kCopy;
  if (name == "REVERSE") return TaskKind::kReverse;
  if (name == "MODSUM") return TaskKind::kModSum;
  if (name == "SORT") return TaskKind::kSort;
  return std::nullopt;
}

void validate(const SyntheticTaskSpec& spec) {
  if (spec.alphabet_size < 2) throw std::invalid_argument("synthetic task: alphabet_size must be >= 2");
  if (spec.alphabet_size > 26) throw std::invalid_argument("synthetic task: alphabet_size must be <= 26");
  if (spec.min_len < 1 || spec.max_len < spec.min_len)
    throw std::invalid_argument("synthetic task: need 1 <= min_len <= max_len");
}

std::string task_answer(TaskKind kind, std::string_view input, int alphabet_size) {
  switch (kind) {
    case TaskKind::kCopy:
      return std::string(input);
    case TaskKind::kReverse:
      return std::string(input.rbegin(), input.rend());
    case TaskKind::kModSum: {
      long long sum = 0;
      for (char c : input) sum += c - 'a';
      return std::string(1, static_cast<char>('a' + sum % alphabet_size));
    }
    case TaskKind::kSort: {
      std::string out(input);
      std::sort(out.begin(), out.end());
      return out;
    }
  }
  throw std::logic_error("unreachable task kind");
}

std::optional<ParsedInstruction> parse_instruction(std::string_view instruction) {
  const auto sep = instruction.find(" : ");
  if (sep == std::string_view::npos) return std::nullopt;
  const auto kind = task_from_name(instruction.substr(0, sep));
  if (!kind) return std::nullopt;
  return ParsedInstruction{*kind, std::string(instruction.substr(sep + 3))};
}

DatasetParseError::DatasetParseError(std::size_t line_number, const std::string& what)
    : std::runtime_error("line " + std::to_string(line_number) + ": " + what),
      line(line_number) {}

std::vector<Example> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);

  std::vector<Example> examples;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetParseError(line_number, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw DatasetParseError(line_number, "record is not an object");
    for (const char* field : {"id", "instruction", "response"}) {
      if (!j.contains(field) || !j.at(field).is_string())
        throw DatasetParseError(line_number, std::string("missing or non-string field '") + field + "'");
    }
    Example ex;
    ex.id = j.at("id").get<std::string>();
    ex.instruction = j.at("instruction").get<std::string>();
    ex.response = j.at("response").get<std::string>();
    ex.system = j.value("system", std::string());
    if (ex.instruction.empty()) throw DatasetParseError(line_number, "empty instruction");
    if (ex.response.empty()) throw DatasetParseError(line_number, "empty response");
    if (!ids.insert(ex.id).second)
      throw DatasetParseError(line_number, "duplicate id '" + ex.id + "'");
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw std::runtime_error("dataset is empty: " + path);
  return examples;
}

void save_dataset(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& ex : examples) {
    nlohmann::json j{{"id", ex.id},
                     {"system", ex.system},
                     {"instruction", ex.instruction},
                     {"response", ex.response}};
    out << j.dump() << '\n';
  }
}

std::vector<Example> sample_subset(const std::vector<Example>& dataset, std::size_t n,
                                   std::uint64_t seed) {
  if (n > dataset.size())
    throw std::invalid_argument("sample_subset: n=" + std::to_string(n) + " exceeds dataset size " +
                                std::to_string(dataset.size()));
  // Floyd's algorithm: n distinct indices, then sorted to preserve order.
  Rng rng = Rng::for_stream(seed, 0x5a3c91ull);
  std::set<std::size_t> chosen;
  for (std::size_t i = dataset.size() - n; i < dataset.size(); ++i) {
    const std::size_t j = rng.next_index(i + 1);
    if (!chosen.insert(j).second) chosen.insert(i);
  }
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t idx : chosen) out.push_back(dataset[idx]);
  return out;
}

std::vector<Example> synthesize_dataset(const SyntheticTaskSpec& spec, std::size_t n) {
  validate(spec);
  Rng rng = Rng::for_stream(spec.seed, 0x7ea2ull + static_cast<std::uint64_t>(spec.task_kind));
  std::vector<Example> out;
  out.reserve(n);
  const std::string name = task_name(spec.task_kind);
  for (std::size_t i = 0; i < n; ++i) {
    const int len =
        spec.min_len + static_cast<int>(rng.next_below(
                           static_cast<std::uint64_t>(spec.max_len - spec.min_len + 1)));
    std::string input;
    input.reserve(static_cast<std::size_t>(len));
    for (int k = 0; k < len; ++k)
      input += static_cast<char>('a' + rng.next_below(static_cast<std::uint64_t>(spec.alphabet_size)));
    Example ex;
    ex.id = name + "-" + std::to_string(spec.seed) + "-" + std::to_string(i);
    ex.instruction = name + " : " + input;
    ex.response = task_answer(spec.task_kind, input, spec.alphabet_size);
    out.push_back(std::move(ex));
  }
  return out;
}

DifficultySplit split_by_difficulty(const std::vector<Example>& dataset,
                                    DifficultyCriterion criterion,
                                    const std::function<double(const Example&)>* rm_score_fn) {
  if (criterion == DifficultyCriterion::kRmScore && rm_score_fn == nullptr)
    throw std::invalid_argument("split_by_difficulty: rm_score criterion requires a scorer");

  // Difficulty key, ascending = easier. gt_length: short is easy.
  // rm_score: high score is easy, so negate.
  std::vector<double> key(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    key[i] = criterion == DifficultyCriterion::kGtLength
                 ? static_cast<double>(dataset[i].response.size())
                 : -(*rm_score_fn)(dataset[i]);
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&key](std::size_t a, std::size_t b) { return key[a] < key[b]; });

  const std::size_t easy_count = (dataset.size() + 1) / 2;
  std::vector<char> is_easy(dataset.size(), 0);
  for (std::size_t r = 0; r < easy_count; ++r) is_easy[order[r]] = 1;

  DifficultySplit split;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    (is_easy[i] ? split.easy : split.hard).push_back(dataset[i]);
  return split;
}

}  // namespace fusionlab::corpus
