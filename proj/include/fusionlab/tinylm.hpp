// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fusionlab/tokenizer.hpp"

namespace fusionlab {
class Rng;
}

namespace fusionlab::lm {

// Dense row-major matrix of doubles. All model math is double precision so
// finite-difference gradient checks are meaningful.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
};

// Per-response-position logits; rows = T response positions, cols = V.
using LogitsMatrix = Matrix;

struct DecodingParams {
  enum class Mode { kGreedy, kSample };
  Mode mode = Mode::kSample;
  double temperature = 1.0;
  std::optional<int> top_k;
  std::optional<double> top_p;  // in (0, 1] when present
  int max_new_tokens = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ModelDims {
  int window = 8;      // context length W
  int embed_dim = 12;  // d_e
  int hidden_dim = 32; // d_h
};

struct Gradients {
  Matrix embed;                  // V x d_e
  Matrix w_hidden;               // (W*d_e) x d_h
  std::vector<double> b_hidden;  // d_h
  Matrix w_out;                  // d_h x V
  std::vector<double> b_out;     // V

  void add_scaled(const Gradients& other, double scale);
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;
};

// Fixed-window language model: the W context embeddings are concatenated,
// passed through one tanh hidden layer and projected to vocabulary logits.
// Contexts shorter than W are left-padded with PAD; the PAD embedding is
// trainable like any other row.
class TinyLM {
 public:
  TinyLM(TokenizerSpec tokenizer, ModelDims dims, std::uint64_t seed);

  const TokenizerSpec& tokenizer() const { return tokenizer_; }
  const ModelDims& dims() const { return dims_; }
  int vocab_size() const { return tokenizer_.size(); }
  std::uint64_t seed() const { return seed_; }

  // Logits over the vocabulary for a context of exactly W token ids.
  std::vector<double> forward_logits(std::span<const int> context) const;

  // Row t = forward_logits over the last W tokens of (BOS + x + y[0..t)).
  // Throws on empty y.
  LogitsMatrix teacher_forcing_logits(std::span<const int> x, std::span<const int> y) const;

  // Sum over positions of -ln p(y_t | ...), natural log.
  double sequence_cross_entropy(std::span<const int> x, std::span<const int> y) const;

  // Autoregressive decoding until EOS or max_new_tokens. The returned ids
  // exclude the terminating EOS.
  std::vector<int> generate(std::span<const int> x, const DecodingParams& params) const;

  struct GenerationTrace {
    std::vector<int> ids;  // emitted tokens, EOS excluded
    bool ended_with_eos = false;
    // step_logits[t] produced ids[t]; when ended_with_eos there is one extra
    // row, the step that chose EOS.
    std::vector<std::vector<double>> step_logits;
  };
  GenerationTrace generate_trace(std::span<const int> x, const DecodingParams& params) const;

  // Exact analytic gradients of sum_t <upstream_row_t, d logits_t / d theta>.
  // upstream must be T x V for the teacher-forcing geometry of (x, y).
  Gradients backward(std::span<const int> x, std::span<const int> y,
                     const Matrix& upstream) const;

  Gradients zero_gradients() const;

  // Parameter tensors (exposed for the optimizer and serialization).
  Matrix embed;                  // V x d_e
  Matrix w_hidden;               // (W*d_e) x d_h
  std::vector<double> b_hidden;  // d_h
  Matrix w_out;                  // d_h x V
  std::vector<double> b_out;     // V

 private:
  TokenizerSpec tokenizer_;
  ModelDims dims_;
  std::uint64_t seed_;

  std::vector<int> context_window(std::span<const int> prefix) const;
  void forward_parts(std::span<const int> context, std::vector<double>& concat,
                     std::vector<double>& hidden, std::vector<double>& logits) const;
  int decode_step(std::span<const double> logits, const DecodingParams& params,
                  fusionlab::Rng* rng) const;
};

// Prompt/supervision conventions shared by advantage evaluation, snapshot
// preprocessing, and fusion training: prompts are system + "\n" + instruction
// (instruction alone when system is empty); supervision sequences are the
// response tokens followed by EOS so termination is learned.
std::vector<int> encode_prompt(const TokenizerSpec& tok, const std::string& system,
                               const std::string& instruction);
std::vector<int> encode_supervision(const TokenizerSpec& tok, const std::string& response);

class MomentumSgd {
 public:
  MomentumSgd(double lr, double momentum);
  // w <- w - lr * v with v <- momentum * v + g. Throws on non-finite
  // gradients (training divergence) or shape mismatch.
  void step(TinyLM& model, const Gradients& grads);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  double momentum_;
  bool initialized_ = false;
  Gradients velocity_;
};

// Single stateless update (velocity starts at zero, so this is the plain
// w <- w - lr * g step for any momentum value).
void sgd_step(TinyLM& model, const Gradients& grads, double lr, double momentum = 0.0);

// Versioned JSON checkpoint holding tokenizer, dims, seed and parameters.
// Doubles survive the round trip bit-for-bit.
std::string checkpoint_to_json(const TinyLM& model);
TinyLM checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const TinyLM& model);
TinyLM load_checkpoint(const std::string& path);

}  // namespace fusionlab::lm
