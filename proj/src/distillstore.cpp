// SPDX-License-Identifier: Apache-2.0
#include "fusionlab/distillstore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fusionlab/numerics.hpp"

namespace fusionlab::store {

namespace {
constexpr char kMagic[8] = {'F', 'L', 'S', 'N', 'A', 'P', '0', '1'};
constexpr double kMassTolerance = 1e-9;
}  // namespace

double SparseDistribution::kept_mass() const {
  return std::accumulate(probs.begin(), probs.end(), 0.0);
}

void SparseDistribution::validate(double mass_tolerance) const {
  if (token_ids.size() != probs.size())
    throw std::invalid_argument("sparse distribution: ids/probs length mismatch");
  std::set<int> seen(token_ids.begin(), token_ids.end());
  if (seen.size() != token_ids.size())
    throw std::invalid_argument("sparse distribution: duplicate token ids");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!(probs[i] > 0.0) || !std::isfinite(probs[i]))
      throw std::invalid_argument("sparse distribution: probs must be positive and finite");
    if (i > 0 && probs[i] > probs[i - 1])
      throw std::invalid_argument("sparse distribution: probs must be sorted descending");
  }
  if (residual < -mass_tolerance || !std::isfinite(residual))
    throw std::invalid_argument("sparse distribution: residual must be nonnegative");
  if (std::abs(kept_mass() + residual - 1.0) > mass_tolerance)
    throw std::invalid_argument("sparse distribution: kept mass + residual must equal 1");
}

SparseDistribution sparsify(std::span<const double> logits, double top_p, int top_k,
                            double temperature) {
  if (!all_finite(logits)) throw std::invalid_argument("sparsify: logits must be finite");
  if (top_k < 1) throw std::invalid_argument("sparsify: top_k must be >= 1");
  if (top_p <= 0.0 || top_p > 1.0) throw std::invalid_argument("sparsify: top_p must be in (0, 1]");
  if (temperature <= 0.0) throw std::invalid_argument("sparsify: temperature must be > 0");

  const std::vector<double> probs = softmax(logits, temperature);
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&probs](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });

  std::size_t keep = std::min<std::size_t>(order.size(), static_cast<std::size_t>(top_k));
  // Smallest descending prefix whose cumulative mass reaches top_p; all kept
  // tokens when the prefix never reaches it.
  double cum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cum += probs[static_cast<std::size_t>(order[i])];
    if (cum >= top_p) {
      keep = i + 1;
      break;
    }
  }

  SparseDistribution out;
  out.token_ids.reserve(keep);
  out.probs.reserve(keep);
  double kept = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    out.token_ids.push_back(order[i]);
    out.probs.push_back(probs[static_cast<std::size_t>(order[i])]);
    kept += out.probs.back();
  }
  out.residual = std::max(0.0, 1.0 - kept);
  return out;
}

std::vector<double> densify(const SparseDistribution& d, int vocab_size, ResidualPolicy policy) {
  for (int id : d.token_ids)
    if (id < 0 || id >= vocab_size)
      throw std::invalid_argument("densify: token id " + std::to_string(id) +
                                  " out of range for vocab size " + std::to_string(vocab_size));

  const bool bucket = policy == ResidualPolicy::kSingleBucket;
  std::vector<double> out(static_cast<std::size_t>(vocab_size) + (bucket ? 1 : 0), 0.0);
  for (std::size_t i = 0; i < d.token_ids.size(); ++i)
    out[static_cast<std::size_t>(d.token_ids[i])] = d.probs[i];
  if (bucket) {
    out.back() = d.residual;
  } else {
    const std::size_t rest = static_cast<std::size_t>(vocab_size) - d.token_ids.size();
    if (rest > 0) {
      const double share = d.residual / static_cast<double>(rest);
      std::vector<bool> kept(static_cast<std::size_t>(vocab_size), false);
      for (int id : d.token_ids) kept[static_cast<std::size_t>(id)] = true;
      for (int v = 0; v < vocab_size; ++v)
        if (!kept[static_cast<std::size_t>(v)]) out[static_cast<std::size_t>(v)] = share;
    }
    // All ids kept: residual should be ~0; fold any rounding dust into the
    // largest entry so the vector still sums to 1.
    else if (d.residual != 0.0 && !out.empty()) {
      auto it = std::max_element(out.begin(), out.end());
      *it += d.residual;
    }
  }
  return out;
}

std::string mode_name(SnapshotMode mode) {
  return mode == SnapshotMode::kTrain ? "train" : "infer";
}

std::optional<SnapshotMode> mode_from_name(const std::string& name) {
  if (name == "train") return SnapshotMode::kTrain;
  if (name == "infer") return SnapshotMode::kInfer;
  return std::nullopt;
}

void SnapshotRecord::validate() const {
  if (example_id.empty() || model_id.empty())
    throw std::invalid_argument("snapshot record: empty example_id or model_id");
  if (rows.size() != response_token_ids.size())
    throw std::invalid_argument("snapshot record: rows length must equal response length");
  // Rows that went through float32 storage carry ~1e-7 rounding noise.
  for (const auto& row : rows) row.validate(1e-6);
}

bool SnapshotFilter::matches(const SnapshotRecord& r) const {
  if (example_id && r.example_id != *example_id) return false;
  if (model_id && r.model_id != *model_id) return false;
  if (mode && r.mode != *mode) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Binary encoding. All integers little-endian; probabilities as float32.
// ---------------------------------------------------------------------------
namespace {

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& buf, std::int32_t v) { put_u32(buf, static_cast<std::uint32_t>(v)); }

void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

void put_string(std::string& buf, const std::string& s) {
  if (s.size() > 0xffff) throw std::invalid_argument("snapshot: string field too long");
  put_u16(buf, static_cast<std::uint16_t>(s.size()));
  buf += s;
}

class Cursor {
 public:
  Cursor(const std::string& data, std::size_t base_offset)
      : data_(data), base_(base_offset) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(byte() | (byte() << 8)); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t offset() const { return base_ + pos_; }

 private:
  std::uint32_t byte() {
    need(1);
    return static_cast<unsigned char>(data_[pos_++]);
  }
  void need(std::size_t n) {
    if (pos_ + n > data_.size())
      throw std::runtime_error("snapshot file truncated at offset " + std::to_string(base_ + pos_));
  }
  const std::string& data_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

std::string encode_record(const SnapshotRecord& r) {
  std::string buf;
  put_string(buf, r.example_id);
  put_string(buf, r.model_id);
  buf.push_back(r.mode == SnapshotMode::kTrain ? 0 : 1);
  put_u32(buf, static_cast<std::uint32_t>(r.response_token_ids.size()));
  for (int id : r.response_token_ids) put_i32(buf, id);
  put_u32(buf, static_cast<std::uint32_t>(r.rows.size()));
  for (const auto& row : r.rows) {
    if (row.token_ids.size() > 0xffff)
      throw std::invalid_argument("snapshot: row too wide");
    put_u16(buf, static_cast<std::uint16_t>(row.token_ids.size()));
    for (int id : row.token_ids) put_i32(buf, id);
    for (double p : row.probs) put_f32(buf, static_cast<float>(p));
    put_f32(buf, static_cast<float>(row.residual));
  }
  return buf;
}

SnapshotRecord decode_record(const std::string& payload, std::size_t base_offset) {
  Cursor cur(payload, base_offset);
  SnapshotRecord r;
  r.example_id = cur.str(cur.u16());
  r.model_id = cur.str(cur.u16());
  const std::string mode_byte = cur.str(1);
  if (mode_byte[0] != 0 && mode_byte[0] != 1)
    throw std::runtime_error("snapshot: bad mode byte at offset " + std::to_string(cur.offset() - 1));
  r.mode = mode_byte[0] == 0 ? SnapshotMode::kTrain : SnapshotMode::kInfer;
  const std::uint32_t resp_len = cur.u32();
  r.response_token_ids.reserve(resp_len);
  for (std::uint32_t i = 0; i < resp_len; ++i) r.response_token_ids.push_back(cur.i32());
  const std::uint32_t n_rows = cur.u32();
  r.rows.reserve(n_rows);
  for (std::uint32_t i = 0; i < n_rows; ++i) {
    SparseDistribution row;
    const std::uint16_t k = cur.u16();
    row.token_ids.reserve(k);
    row.probs.reserve(k);
    for (std::uint16_t j = 0; j < k; ++j) row.token_ids.push_back(cur.i32());
    for (std::uint16_t j = 0; j < k; ++j) row.probs.push_back(cur.f32());
    row.residual = cur.f32();
    r.rows.push_back(std::move(row));
  }
  if (!cur.at_end())
    throw std::runtime_error("snapshot: trailing bytes in record at offset " +
                             std::to_string(cur.offset()));
  return r;
}

nlohmann::json header_json(const std::map<std::string, std::uint64_t>& vocab_hashes) {
  nlohmann::json hashes = nlohmann::json::object();
  for (const auto& [model, hash] : vocab_hashes) {
    std::ostringstream hex;
    hex << std::hex << hash;
    hashes[model] = hex.str();
  }
  return nlohmann::json{{"version", 1}, {"vocab_hashes", hashes}};
}

void write_header(std::ostream& out, const std::map<std::string, std::uint64_t>& vocab_hashes) {
  out.write(kMagic, sizeof(kMagic));
  const std::string header = header_json(vocab_hashes).dump();
  std::string len;
  put_u32(len, static_cast<std::uint32_t>(header.size()));
  out.write(len.data(), static_cast<std::streamsize>(len.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
}

void write_record(std::ostream& out, const SnapshotRecord& record) {
  const std::string payload = encode_record(record);
  std::string len;
  put_u32(len, static_cast<std::uint32_t>(payload.size()));
  out.write(len.data(), static_cast<std::streamsize>(len.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

}  // namespace

struct SnapshotWriter::Impl {
  std::ofstream out;
  std::set<SnapshotKey> keys;
};

SnapshotWriter::SnapshotWriter(const std::string& path,
                               const std::map<std::string, std::uint64_t>& vocab_hashes)
    : impl_(std::make_unique<Impl>()) {
  impl_->out.open(path, std::ios::binary);
  if (!impl_->out) throw std::runtime_error("cannot open for writing: " + path);
  write_header(impl_->out, vocab_hashes);
}

SnapshotWriter::~SnapshotWriter() = default;

void SnapshotWriter::write(const SnapshotRecord& record) {
  record.validate();
  if (!impl_ || !impl_->out.is_open()) throw std::logic_error("snapshot writer is closed");
  SnapshotKey key{record.example_id, record.model_id, record.mode};
  if (!impl_->keys.insert(key).second)
    throw std::invalid_argument("snapshot: duplicate key (" + record.example_id + ", " +
                                record.model_id + ", " + mode_name(record.mode) + ")");
  write_record(impl_->out, record);
  ++count_;
}

void SnapshotWriter::close() {
  if (impl_ && impl_->out.is_open()) {
    impl_->out.flush();
    if (!impl_->out) throw std::runtime_error("snapshot: write failure on close");
    impl_->out.close();
  }
}

std::size_t write_snapshots(const std::string& path, std::span<const SnapshotRecord> records,
                            const std::map<std::string, std::uint64_t>& vocab_hashes) {
  SnapshotWriter writer(path, vocab_hashes);
  for (const auto& r : records) writer.write(r);
  writer.close();
  return records.size();
}

std::string snapshots_to_bytes(std::span<const SnapshotRecord> records,
                               const std::map<std::string, std::uint64_t>& vocab_hashes) {
  std::ostringstream out(std::ios::binary);
  write_header(out, vocab_hashes);
  std::set<SnapshotKey> keys;
  for (const auto& r : records) {
    r.validate();
    if (!keys.insert(SnapshotKey{r.example_id, r.model_id, r.mode}).second)
      throw std::invalid_argument("snapshot: duplicate key (" + r.example_id + ", " + r.model_id +
                                  ", " + mode_name(r.mode) + ")");
    write_record(out, r);
  }
  return out.str();
}

namespace {

struct ParsedFile {
  nlohmann::json header;
  std::vector<SnapshotRecord> records;
};

ParsedFile parse_snapshot_file(const std::string& path, const SnapshotFilter& filter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();

  if (data.size() < sizeof(kMagic) + 4 || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("snapshot: bad magic at offset 0 in " + path);

  std::size_t pos = sizeof(kMagic);
  auto read_u32 = [&data, &pos, &path]() {
    if (pos + 4 > data.size())
      throw std::runtime_error("snapshot file truncated at offset " + std::to_string(pos) + " in " + path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  };

  ParsedFile parsed;
  const std::uint32_t header_len = read_u32();
  if (pos + header_len > data.size())
    throw std::runtime_error("snapshot file truncated at offset " + std::to_string(pos) + " in " + path);
  try {
    parsed.header = nlohmann::json::parse(data.substr(pos, header_len));
  } catch (const nlohmann::json::parse_error&) {
    throw std::runtime_error("snapshot: corrupt header at offset " + std::to_string(pos) + " in " + path);
  }
  if (parsed.header.value("version", 0) != 1)
    throw std::runtime_error("snapshot: unsupported version in " + path);
  pos += header_len;

  std::set<SnapshotKey> keys;
  while (pos < data.size()) {
    const std::size_t record_offset = pos;
    const std::uint32_t payload_len = read_u32();
    if (pos + payload_len > data.size())
      throw std::runtime_error("snapshot file truncated at offset " + std::to_string(record_offset) + " in " + path);
    SnapshotRecord record;
    try {
      record = decode_record(data.substr(pos, payload_len), pos);
    } catch (const std::exception& e) {
      throw std::runtime_error("snapshot: corrupt record at offset " +
                               std::to_string(record_offset) + " in " + path + ": " + e.what());
    }
    pos += payload_len;
    if (!keys.insert(SnapshotKey{record.example_id, record.model_id, record.mode}).second)
      throw std::runtime_error("snapshot: duplicate key (" + record.example_id + ", " +
                               record.model_id + ", " + mode_name(record.mode) + ") in " + path);
    if (filter.matches(record)) parsed.records.push_back(std::move(record));
  }
  return parsed;
}

}  // namespace

std::vector<SnapshotRecord> read_snapshots(const std::string& path, const SnapshotFilter& filter) {
  return parse_snapshot_file(path, filter).records;
}

std::map<std::string, std::uint64_t> read_snapshot_vocab_hashes(const std::string& path) {
  const auto parsed = parse_snapshot_file(path, SnapshotFilter{});
  std::map<std::string, std::uint64_t> out;
  if (parsed.header.contains("vocab_hashes")) {
    for (const auto& [model, hex] : parsed.header.at("vocab_hashes").items())
      out[model] = std::stoull(hex.get<std::string>(), nullptr, 16);
  }
  return out;
}

void write_snapshots_jsonl(const std::string& path, std::span<const SnapshotRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : records) {
    r.validate();
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
      rows.push_back({{"ids", row.token_ids}, {"probs", row.probs}, {"residual", row.residual}});
    nlohmann::json j{{"example_id", r.example_id},
                     {"model_id", r.model_id},
                     {"mode", mode_name(r.mode)},
                     {"response_token_ids", r.response_token_ids},
                     {"rows", rows}};
    out << j.dump() << '\n';
  }
}

std::vector<SnapshotRecord> read_snapshots_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<SnapshotRecord> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("snapshot jsonl line " + std::to_string(line_number) + ": " + e.what());
    }
    SnapshotRecord r;
    r.example_id = j.at("example_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    const auto mode = mode_from_name(j.at("mode").get<std::string>());
    if (!mode) throw std::runtime_error("snapshot jsonl line " + std::to_string(line_number) + ": bad mode");
    r.mode = *mode;
    r.response_token_ids = j.at("response_token_ids").get<std::vector<int>>();
    for (const auto& row_json : j.at("rows")) {
      SparseDistribution row;
      row.token_ids = row_json.at("ids").get<std::vector<int>>();
      row.probs = row_json.at("probs").get<std::vector<double>>();
      row.residual = row_json.at("residual").get<double>();
      r.rows.push_back(std::move(row));
    }
    out.push_back(std::move(r));
  }
  return out;
}

SnapshotSet::SnapshotSet(std::vector<SnapshotRecord> records) {
  for (auto& r : records) insert(std::move(r));
}

void SnapshotSet::insert(SnapshotRecord record) {
  SnapshotKey key{record.example_id, record.model_id, record.mode};
  if (!records_.emplace(std::move(key), std::move(record)).second)
    throw std::invalid_argument("snapshot set: duplicate key");
}

const SnapshotRecord* SnapshotSet::find(const std::string& example_id, const std::string& model_id,
                                        SnapshotMode mode) const {
  auto it = records_.find(SnapshotKey{example_id, model_id, mode});
  return it == records_.end() ? nullptr : &it->second;
}

const SnapshotRecord& SnapshotSet::require(const std::string& example_id,
                                           const std::string& model_id, SnapshotMode mode) const {
  const SnapshotRecord* r = find(example_id, model_id, mode);
  if (!r)
    throw std::runtime_error("missing snapshot for (example=" + example_id + ", model=" + model_id +
                             ", mode=" + mode_name(mode) + ")");
  return *r;
}

}  // namespace fusionlab::store
