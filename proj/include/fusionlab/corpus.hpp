// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fusionlab::corpus {

struct Example {
  std::string id;
  std::string system;  // may be empty
  std::string instruction;
  std::string response;  // ground truth
};

enum class TaskKind { kCopy, kReverse, kModSum, kSort };

std::string task_name(TaskKind kind);
std::optional<TaskKind> task_from_name(std::string_view name);

struct SyntheticTaskSpec {
  TaskKind task_kind = TaskKind::kCopy;
  int alphabet_size = 5;  // symbols 'a' .. 'a'+alphabet_size-1
  int min_len = 1;
  int max_len = 8;
  std::uint64_t seed = 0;
};

void validate(const SyntheticTaskSpec& spec);

// The exact answer a task demands for a given input string. Also serves as
// the correctness oracle for reward scoring and evaluation.
std::string task_answer(TaskKind kind, std::string_view input, int alphabet_size);

// Parses the canonical instruction form "<TASK_KIND> : <input>".
struct ParsedInstruction {
  TaskKind kind;
  std::string input;
};
std::optional<ParsedInstruction> parse_instruction(std::string_view instruction);

// Thrown by load_dataset on malformed lines; line numbers are 1-based.
struct DatasetParseError : std::runtime_error {
  DatasetParseError(std::size_t line_number, const std::string& what);
  std::size_t line;
};

std::vector<Example> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<Example>& examples);

// Uniform sample without replacement; preserves original relative order.
std::vector<Example> sample_subset(const std::vector<Example>& dataset, std::size_t n,
                                   std::uint64_t seed);

std::vector<Example> synthesize_dataset(const SyntheticTaskSpec& spec, std::size_t n);

enum class DifficultyCriterion { kGtLength, kRmScore };

struct DifficultySplit {
  std::vector<Example> easy;
  std::vector<Example> hard;
};

// Median split per criterion. gt_length: longer responses are hard.
// rm_score: lower scores are hard; `rm_score_fn` must score the target
// model's generation for the example (composed by the caller, see
// [harness]). Ties resolved by stable original order, easy side filled
// first with ceil(n/2) examples.
DifficultySplit split_by_difficulty(
    const std::vector<Example>& dataset, DifficultyCriterion criterion,
    const std::function<double(const Example&)>* rm_score_fn = nullptr);

}  // namespace fusionlab::corpus
