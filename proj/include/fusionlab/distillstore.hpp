// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fusionlab::store {

// Truncated next-token distribution: kept (id, prob) pairs sorted by
// probability descending plus the mass lost to truncation.
struct SparseDistribution {
  std::vector<int> token_ids;
  std::vector<double> probs;
  double residual = 0.0;

  double kept_mass() const;
  // Checks the type invariants: unique ids, descending probs, total mass 1
  // within the tolerance, nonnegative residual. Freshly built distributions
  // satisfy 1e-9; records reloaded from float32 storage need ~1e-6.
  void validate(double mass_tolerance = 1e-9) const;
};

struct SparsifyParams {
  double top_p = 0.95;
  int top_k = 10;
  double temperature = 2.0;
};

// temperature -> softmax -> top-k -> top-p prefix -> residual.
SparseDistribution sparsify(std::span<const double> logits, double top_p, int top_k,
                            double temperature);
inline SparseDistribution sparsify(std::span<const double> logits, const SparsifyParams& p) {
  return sparsify(logits, p.top_p, p.top_k, p.temperature);
}

enum class ResidualPolicy { kUniformOverRest, kSingleBucket };

// Dense probability vector of V entries (uniform_over_rest) or V+1 entries
// with the residual in the trailing bucket (single_bucket).
std::vector<double> densify(const SparseDistribution& d, int vocab_size, ResidualPolicy policy);

enum class SnapshotMode { kTrain, kInfer };

std::string mode_name(SnapshotMode mode);
std::optional<SnapshotMode> mode_from_name(const std::string& name);

struct SnapshotRecord {
  std::string example_id;
  std::string model_id;
  SnapshotMode mode = SnapshotMode::kTrain;
  // The supervised sequence in the model's own vocabulary: GT tokens (+EOS)
  // for train mode, generated tokens (+EOS when terminated) for infer mode.
  std::vector<int> response_token_ids;
  std::vector<SparseDistribution> rows;  // one per response position

  void validate() const;
};

struct SnapshotKey {
  std::string example_id;
  std::string model_id;
  SnapshotMode mode;
  auto operator<=>(const SnapshotKey&) const = default;
};

// Binary container: magic, JSON header (version + per-model vocab hashes),
// then length-prefixed records. Probabilities are stored as float32.
class SnapshotWriter {
 public:
  SnapshotWriter(const std::string& path,
                 const std::map<std::string, std::uint64_t>& vocab_hashes = {});
  ~SnapshotWriter();
  SnapshotWriter(const SnapshotWriter&) = delete;
  SnapshotWriter& operator=(const SnapshotWriter&) = delete;

  // Throws on duplicate (example_id, model_id, mode).
  void write(const SnapshotRecord& record);
  std::size_t count() const { return count_; }
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::size_t count_ = 0;
};

struct SnapshotFilter {
  std::optional<std::string> example_id;
  std::optional<std::string> model_id;
  std::optional<SnapshotMode> mode;
  bool matches(const SnapshotRecord& r) const;
};

std::size_t write_snapshots(const std::string& path, std::span<const SnapshotRecord> records,
                            const std::map<std::string, std::uint64_t>& vocab_hashes = {});
std::vector<SnapshotRecord> read_snapshots(const std::string& path,
                                           const SnapshotFilter& filter = {});
std::map<std::string, std::uint64_t> read_snapshot_vocab_hashes(const std::string& path);

// In-memory serialization of the same byte format (used for report hashes).
std::string snapshots_to_bytes(std::span<const SnapshotRecord> records,
                               const std::map<std::string, std::uint64_t>& vocab_hashes = {});

// JSONL debug format for inspection; round trip is not bit-exact (decimal
// probabilities) but within the same 1e-7 tolerance as the binary format.
void write_snapshots_jsonl(const std::string& path, std::span<const SnapshotRecord> records);
std::vector<SnapshotRecord> read_snapshots_jsonl(const std::string& path);

// Keyed lookup over loaded records.
class SnapshotSet {
 public:
  SnapshotSet() = default;
  explicit SnapshotSet(std::vector<SnapshotRecord> records);
  void insert(SnapshotRecord record);  // throws on duplicate key
  const SnapshotRecord* find(const std::string& example_id, const std::string& model_id,
                             SnapshotMode mode) const;
  // Like find, but throws naming the missing (example, model, mode) triple.
  const SnapshotRecord& require(const std::string& example_id, const std::string& model_id,
                                SnapshotMode mode) const;
  std::size_t size() const { return records_.size(); }
  const std::map<SnapshotKey, SnapshotRecord>& records() const { return records_; }

 private:
  std::map<SnapshotKey, SnapshotRecord> records_;
};

}  // namespace fusionlab::store
