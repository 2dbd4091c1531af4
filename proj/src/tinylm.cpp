// SPDX-License-Identifier: Apache-2.0
#include "fusionlab/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fusionlab/numerics.hpp"
#include "fusionlab/rng.hpp"

namespace fusionlab::lm {

void DecodingParams::validate() const {
  if (temperature <= 0.0) throw std::invalid_argument("decoding: temperature must be > 0");
  if (top_k && *top_k < 1) throw std::invalid_argument("decoding: top_k must be >= 1");
  if (top_p && (*top_p <= 0.0 || *top_p > 1.0))
    throw std::invalid_argument("decoding: top_p must be in (0, 1]");
  if (max_new_tokens < 1) throw std::invalid_argument("decoding: max_new_tokens must be >= 1");
}

void Gradients::add_scaled(const Gradients& other, double scale) {
  auto axpy = [scale](std::vector<double>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  };
  axpy(embed.data, other.embed.data);
  axpy(w_hidden.data, other.w_hidden.data);
  axpy(b_hidden, other.b_hidden);
  axpy(w_out.data, other.w_out.data);
  axpy(b_out, other.b_out);
}

void Gradients::scale(double factor) {
  for (auto* v : {&embed.data, &w_hidden.data, &b_hidden, &w_out.data, &b_out})
    for (double& x : *v) x *= factor;
}

double Gradients::squared_norm() const {
  double total = 0.0;
  for (const auto* v : {&embed.data, &w_hidden.data, &b_hidden, &w_out.data, &b_out})
    for (double x : *v) total += x * x;
  return total;
}

bool Gradients::all_finite() const {
  for (const auto* v : {&embed.data, &w_hidden.data, &b_hidden, &w_out.data, &b_out})
    if (!fusionlab::all_finite(*v)) return false;
  return true;
}

TinyLM::TinyLM(TokenizerSpec tokenizer, ModelDims dims, std::uint64_t seed)
    : tokenizer_(std::move(tokenizer)), dims_(dims), seed_(seed) {
  if (dims.window < 1 || dims.embed_dim < 1 || dims.hidden_dim < 1)
    throw std::invalid_argument("tinylm: dimensions must be positive");
  const int v = tokenizer_.size();
  embed = Matrix(v, dims.embed_dim);
  w_hidden = Matrix(dims.window * dims.embed_dim, dims.hidden_dim);
  b_hidden.assign(static_cast<std::size_t>(dims.hidden_dim), 0.0);
  w_out = Matrix(dims.hidden_dim, v);
  b_out.assign(static_cast<std::size_t>(v), 0.0);

  Rng rng = Rng::for_stream(seed, 0x11a0ull);
  const double embed_std = 0.1;
  const double hidden_std = 1.0 / std::sqrt(static_cast<double>(dims.window * dims.embed_dim));
  const double out_std = 1.0 / std::sqrt(static_cast<double>(dims.hidden_dim));
  for (double& x : embed.data) x = embed_std * rng.next_gaussian();
  for (double& x : w_hidden.data) x = hidden_std * rng.next_gaussian();
  for (double& x : w_out.data) x = out_std * rng.next_gaussian();
}

std::vector<int> TinyLM::context_window(std::span<const int> prefix) const {
  const int w = dims_.window;
  std::vector<int> ctx(static_cast<std::size_t>(w), tokenizer_.pad_id);
  const std::size_t take = std::min<std::size_t>(prefix.size(), static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < take; ++i)
    ctx[static_cast<std::size_t>(w) - take + i] = prefix[prefix.size() - take + i];
  return ctx;
}

void TinyLM::forward_parts(std::span<const int> context, std::vector<double>& concat,
                           std::vector<double>& hidden, std::vector<double>& logits) const {
  const int w = dims_.window;
  const int de = dims_.embed_dim;
  const int dh = dims_.hidden_dim;
  const int v = vocab_size();
  if (static_cast<int>(context.size()) != w)
    throw std::invalid_argument("forward_logits: context must hold exactly " + std::to_string(w) +
                                " token ids, got " + std::to_string(context.size()));

  concat.assign(static_cast<std::size_t>(w) * de, 0.0);
  for (int k = 0; k < w; ++k) {
    const int id = context[static_cast<std::size_t>(k)];
    if (id < 0 || id >= v)
      throw std::out_of_range("forward_logits: token id " + std::to_string(id) + " out of range");
    const auto e = embed.row(id);
    std::copy(e.begin(), e.end(), concat.begin() + static_cast<std::size_t>(k) * de);
  }

  hidden.assign(static_cast<std::size_t>(dh), 0.0);
  for (int i = 0; i < w * de; ++i) {
    const double a = concat[static_cast<std::size_t>(i)];
    const auto wrow = w_hidden.row(i);
    for (int j = 0; j < dh; ++j) hidden[static_cast<std::size_t>(j)] += a * wrow[static_cast<std::size_t>(j)];
  }
  for (int j = 0; j < dh; ++j)
    hidden[static_cast<std::size_t>(j)] = std::tanh(hidden[static_cast<std::size_t>(j)] + b_hidden[static_cast<std::size_t>(j)]);

  logits.assign(b_out.begin(), b_out.end());
  for (int j = 0; j < dh; ++j) {
    const double h = hidden[static_cast<std::size_t>(j)];
    const auto wrow = w_out.row(j);
    for (int c = 0; c < v; ++c) logits[static_cast<std::size_t>(c)] += h * wrow[static_cast<std::size_t>(c)];
  }
}

std::vector<double> TinyLM::forward_logits(std::span<const int> context) const {
  std::vector<double> concat, hidden, logits;
  forward_parts(context, concat, hidden, logits);
  return logits;
}

LogitsMatrix TinyLM::teacher_forcing_logits(std::span<const int> x, std::span<const int> y) const {
  if (y.empty()) throw std::invalid_argument("teacher_forcing_logits: empty response sequence");
  std::vector<int> prefix;
  prefix.reserve(1 + x.size() + y.size());
  prefix.push_back(tokenizer_.bos_id);
  prefix.insert(prefix.end(), x.begin(), x.end());

  LogitsMatrix out(static_cast<int>(y.size()), vocab_size());
  std::vector<double> concat, hidden, logits;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const auto ctx = context_window(prefix);
    forward_parts(ctx, concat, hidden, logits);
    std::copy(logits.begin(), logits.end(), out.row(static_cast<int>(t)).begin());
    prefix.push_back(y[t]);
  }
  return out;
}

double TinyLM::sequence_cross_entropy(std::span<const int> x, std::span<const int> y) const {
  const LogitsMatrix logits = teacher_forcing_logits(x, y);
  double total = 0.0;
  for (int t = 0; t < logits.rows; ++t) {
    const auto row = logits.row(t);
    total += log_sum_exp(row) - row[static_cast<std::size_t>(y[static_cast<std::size_t>(t)])];
  }
  return total;
}

int TinyLM::decode_step(std::span<const double> logits, const DecodingParams& params,
                        Rng* rng) const {
  const int v = static_cast<int>(logits.size());
  if (params.mode == DecodingParams::Mode::kGreedy) {
    int best = 0;
    for (int i = 1; i < v; ++i)
      if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(best)]) best = i;
    return best;
  }

  std::vector<double> probs = softmax(logits, params.temperature);
  // Sort ids by probability descending, id ascending on ties, then truncate.
  std::vector<int> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&probs](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  std::size_t keep = order.size();
  if (params.top_k) keep = std::min(keep, static_cast<std::size_t>(*params.top_k));
  if (params.top_p) {
    double cum = 0.0;
    std::size_t nucleus = keep;
    for (std::size_t i = 0; i < keep; ++i) {
      cum += probs[static_cast<std::size_t>(order[i])];
      if (cum >= *params.top_p) {
        nucleus = i + 1;
        break;
      }
    }
    keep = nucleus;
  }

  double kept_mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_mass += probs[static_cast<std::size_t>(order[i])];
  const double u = rng->next_double() * kept_mass;
  double cum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cum += probs[static_cast<std::size_t>(order[i])];
    if (u < cum) return order[i];
  }
  return order[keep - 1];
}

TinyLM::GenerationTrace TinyLM::generate_trace(std::span<const int> x,
                                               const DecodingParams& params) const {
  params.validate();
  GenerationTrace trace;
  Rng rng = Rng::for_stream(params.seed, 0x6e0dull);

  std::vector<int> prefix;
  prefix.reserve(1 + x.size() + static_cast<std::size_t>(params.max_new_tokens));
  prefix.push_back(tokenizer_.bos_id);
  prefix.insert(prefix.end(), x.begin(), x.end());

  for (int step = 0; step < params.max_new_tokens; ++step) {
    const auto ctx = context_window(prefix);
    std::vector<double> logits = forward_logits(ctx);
    const int next = decode_step(logits, params, &rng);
    trace.step_logits.push_back(std::move(logits));
    if (next == tokenizer_.eos_id) {
      trace.ended_with_eos = true;
      break;
    }
    trace.ids.push_back(next);
    prefix.push_back(next);
  }
  return trace;
}

std::vector<int> TinyLM::generate(std::span<const int> x, const DecodingParams& params) const {
  return generate_trace(x, params).ids;
}

Gradients TinyLM::zero_gradients() const {
  Gradients g;
  g.embed = Matrix(embed.rows, embed.cols);
  g.w_hidden = Matrix(w_hidden.rows, w_hidden.cols);
  g.b_hidden.assign(b_hidden.size(), 0.0);
  g.w_out = Matrix(w_out.rows, w_out.cols);
  g.b_out.assign(b_out.size(), 0.0);
  return g;
}

Gradients TinyLM::backward(std::span<const int> x, std::span<const int> y,
                           const Matrix& upstream) const {
  if (y.empty()) throw std::invalid_argument("backward: empty response sequence");
  if (upstream.rows != static_cast<int>(y.size()) || upstream.cols != vocab_size())
    throw std::invalid_argument("backward: upstream gradient must be " +
                                std::to_string(y.size()) + "x" + std::to_string(vocab_size()) +
                                ", got " + std::to_string(upstream.rows) + "x" +
                                std::to_string(upstream.cols));

  const int w = dims_.window;
  const int de = dims_.embed_dim;
  const int dh = dims_.hidden_dim;
  const int v = vocab_size();

  Gradients g = zero_gradients();
  std::vector<int> prefix;
  prefix.reserve(1 + x.size() + y.size());
  prefix.push_back(tokenizer_.bos_id);
  prefix.insert(prefix.end(), x.begin(), x.end());

  std::vector<double> concat, hidden, logits;
  std::vector<double> d_hidden(static_cast<std::size_t>(dh));
  std::vector<double> d_concat(static_cast<std::size_t>(w) * de);
  for (std::size_t t = 0; t < y.size(); ++t) {
    const auto ctx = context_window(prefix);
    forward_parts(ctx, concat, hidden, logits);
    const auto up = upstream.row(static_cast<int>(t));

    // logits = w_out^T h + b_out
    for (int c = 0; c < v; ++c) g.b_out[static_cast<std::size_t>(c)] += up[static_cast<std::size_t>(c)];
    std::fill(d_hidden.begin(), d_hidden.end(), 0.0);
    for (int j = 0; j < dh; ++j) {
      const double h = hidden[static_cast<std::size_t>(j)];
      const auto wrow = w_out.row(j);
      auto grow = g.w_out.row(j);
      double acc = 0.0;
      for (int c = 0; c < v; ++c) {
        grow[static_cast<std::size_t>(c)] += h * up[static_cast<std::size_t>(c)];
        acc += wrow[static_cast<std::size_t>(c)] * up[static_cast<std::size_t>(c)];
      }
      d_hidden[static_cast<std::size_t>(j)] = acc;
    }

    // h = tanh(z): dz = dh * (1 - h^2)
    for (int j = 0; j < dh; ++j) {
      const double h = hidden[static_cast<std::size_t>(j)];
      d_hidden[static_cast<std::size_t>(j)] *= 1.0 - h * h;
      g.b_hidden[static_cast<std::size_t>(j)] += d_hidden[static_cast<std::size_t>(j)];
    }

    // z = w_hidden^T a + b_hidden
    std::fill(d_concat.begin(), d_concat.end(), 0.0);
    for (int i = 0; i < w * de; ++i) {
      const double a = concat[static_cast<std::size_t>(i)];
      const auto wrow = w_hidden.row(i);
      auto grow = g.w_hidden.row(i);
      double acc = 0.0;
      for (int j = 0; j < dh; ++j) {
        grow[static_cast<std::size_t>(j)] += a * d_hidden[static_cast<std::size_t>(j)];
        acc += wrow[static_cast<std::size_t>(j)] * d_hidden[static_cast<std::size_t>(j)];
      }
      d_concat[static_cast<std::size_t>(i)] = acc;
    }

    // a = concat of context embeddings; PAD rows accumulate like any other.
    for (int k = 0; k < w; ++k) {
      const int id = ctx[static_cast<std::size_t>(k)];
      auto grow = g.embed.row(id);
      for (int e = 0; e < de; ++e)
        grow[static_cast<std::size_t>(e)] += d_concat[static_cast<std::size_t>(k) * de + e];
    }

    prefix.push_back(y[t]);
  }
  return g;
}

std::vector<int> encode_prompt(const TokenizerSpec& tok, const std::string& system,
                               const std::string& instruction) {
  const std::string text = system.empty() ? instruction : system + "\n" + instruction;
  return encode(tok, text);
}

std::vector<int> encode_supervision(const TokenizerSpec& tok, const std::string& response) {
  std::vector<int> ids = encode(tok, response);
  ids.push_back(tok.eos_id);
  return ids;
}

MomentumSgd::MomentumSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (lr < 0.0) throw std::invalid_argument("sgd: lr must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("sgd: momentum must be in [0, 1)");
}

void MomentumSgd::step(TinyLM& model, const Gradients& grads) {
  if (!grads.all_finite())
    throw std::runtime_error("sgd: non-finite gradient (training diverged)");
  if (grads.embed.rows != model.embed.rows || grads.embed.cols != model.embed.cols ||
      grads.w_hidden.rows != model.w_hidden.rows || grads.w_out.cols != model.w_out.cols ||
      grads.b_hidden.size() != model.b_hidden.size() || grads.b_out.size() != model.b_out.size())
    throw std::invalid_argument("sgd: gradient shapes do not match model");

  if (!initialized_) {
    velocity_ = model.zero_gradients();
    initialized_ = true;
  }
  auto update = [this](std::vector<double>& w, std::vector<double>& vel,
                       const std::vector<double>& g) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i];
      w[i] -= lr_ * vel[i];
    }
  };
  update(model.embed.data, velocity_.embed.data, grads.embed.data);
  update(model.w_hidden.data, velocity_.w_hidden.data, grads.w_hidden.data);
  update(model.b_hidden, velocity_.b_hidden, grads.b_hidden);
  update(model.w_out.data, velocity_.w_out.data, grads.w_out.data);
  update(model.b_out, velocity_.b_out, grads.b_out);
}

void sgd_step(TinyLM& model, const Gradients& grads, double lr, double momentum) {
  MomentumSgd opt(lr, momentum);
  opt.step(model, grads);
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  return nlohmann::json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols))
    throw std::runtime_error("checkpoint: matrix size mismatch");
  return m;
}

}  // namespace

std::string checkpoint_to_json(const TinyLM& model) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["tokenizer"] = nlohmann::json::parse(tokenizer_to_json(model.tokenizer()));
  j["dims"] = {{"window", model.dims().window},
               {"embed_dim", model.dims().embed_dim},
               {"hidden_dim", model.dims().hidden_dim}};
  j["seed"] = model.seed();
  j["params"] = {{"embed", matrix_to_json(model.embed)},
                 {"w_hidden", matrix_to_json(model.w_hidden)},
                 {"b_hidden", model.b_hidden},
                 {"w_out", matrix_to_json(model.w_out)},
                 {"b_out", model.b_out}};
  return j.dump();
}

TinyLM checkpoint_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("format_version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported format_version");
  TokenizerSpec tok = tokenizer_from_json(j.at("tokenizer").dump());
  ModelDims dims{j.at("dims").at("window").get<int>(), j.at("dims").at("embed_dim").get<int>(),
                 j.at("dims").at("hidden_dim").get<int>()};
  TinyLM model(std::move(tok), dims, j.at("seed").get<std::uint64_t>());
  const auto& p = j.at("params");
  model.embed = matrix_from_json(p.at("embed"));
  model.w_hidden = matrix_from_json(p.at("w_hidden"));
  model.b_hidden = p.at("b_hidden").get<std::vector<double>>();
  model.w_out = matrix_from_json(p.at("w_out"));
  model.b_out = p.at("b_out").get<std::vector<double>>();
  if (model.embed.rows != model.vocab_size() || model.w_out.cols != model.vocab_size())
    throw std::runtime_error("checkpoint: parameter shapes do not match vocabulary");
  for (const auto* v : {&model.embed.data, &model.w_hidden.data, &model.b_hidden,
                        &model.w_out.data, &model.b_out})
    if (!all_finite(*v)) throw std::runtime_error("checkpoint: non-finite parameter");
  return model;
}

void save_checkpoint(const std::string& path, const TinyLM& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << checkpoint_to_json(model) << '\n';
}

TinyLM load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace fusionlab::lm
