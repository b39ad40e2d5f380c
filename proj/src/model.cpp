#include "incrprobe/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "incrprobe/error.hpp"

namespace incrprobe {

namespace {

Matrix xavier(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

Matrix lstm_bias(std::size_t hidden) {
  Matrix b(1, 4 * hidden);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  return b;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t argmax(std::span<const double> xs) {
  return static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
}

Batch sort_by_target_length(const Batch& b) {
  std::vector<std::size_t> order(b.size);
  for (std::size_t r = 0; r < b.size; ++r) {
    order[r] = r;
    if (b.tgt_lengths[r] == 0) throw DomainError("empty target sequence");
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return b.tgt_lengths[x] > b.tgt_lengths[y];
  });
  Batch out = b;
  out.src_lengths.clear();
  out.tgt_lengths.clear();
  for (std::size_t k = 0; k < b.size; ++k) {
    const std::size_t r = order[k];
    std::copy_n(b.src.begin() + r * b.src_width, b.src_width, out.src.begin() + k * b.src_width);
    std::copy_n(b.tgt.begin() + r * b.tgt_width, b.tgt_width, out.tgt.begin() + k * b.tgt_width);
    out.src_lengths.push_back(b.src_lengths[r]);
    out.tgt_lengths.push_back(b.tgt_lengths[r]);
  }
  return out;
}

Batch source_batch(const std::vector<std::vector<std::size_t>>& srcs) {
  Batch b;
  b.size = srcs.size();
  for (const auto& s : srcs) {
    if (s.empty()) throw DomainError("empty source sequence");
    b.src_width = std::max(b.src_width, s.size());
  }
  b.src.assign(b.size * b.src_width, Vocabulary::kPad);
  for (std::size_t r = 0; r < b.size; ++r) {
    std::copy(srcs[r].begin(), srcs[r].end(), b.src.begin() + r * b.src_width);
    b.src_lengths.push_back(srcs[r].size());
    b.tgt_lengths.push_back(0);
  }
  return b;
}

}  // namespace

void ModelConfig::validate() const {
  if (embedding_dim == 0 || hidden_dim == 0) throw ConfigError("model dimensions must be positive");
  if (vocab_in <= Vocabulary::kReserved || vocab_out <= Vocabulary::kReserved) {
    throw ConfigError("vocabulary sizes must exceed the reserved entries");
  }
  if (mask == MaskMode::local && window < 1) throw ConfigError("local mask window must be >= 1");
  if (mask != MaskMode::none && !attention) {
    throw ConfigError("attention masks require attention to be enabled");
  }
  if (!std::isfinite(anticipation_weight) || anticipation_weight < 0.0) {
    throw ConfigError("anticipation weight must be finite and >= 0");
  }
}

std::string ModelConfig::mask_string() const {
  switch (mask) {
    case MaskMode::none: return "none";
    case MaskMode::causal: return "causal";
    case MaskMode::local: return "local:" + std::to_string(window);
  }
  throw InternalError("bad MaskMode");
}

void ModelConfig::set_mask(const std::string& text) {
  if (text == "none") {
    mask = MaskMode::none;
  } else if (text == "causal") {
    mask = MaskMode::causal;
  } else if (text.starts_with("local:")) {
    const std::string w = text.substr(6);
    std::size_t used = 0;
    long value = 0;
    try {
      value = std::stol(w, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != w.size() || w.empty() || value < 1) {
      throw ConfigError("bad local mask window in '" + text + "'");
    }
    mask = MaskMode::local;
    window = static_cast<std::size_t>(value);
  } else {
    throw ConfigError("unknown mask '" + text + "' (expected none, causal or local:<w>)");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"embedding_dim", c.embedding_dim},
                     {"hidden_dim", c.hidden_dim},
                     {"attention", c.attention},
                     {"mask", c.mask_string()},
                     {"anticipation_weight", c.anticipation_weight},
                     {"vocab_in", c.vocab_in},
                     {"vocab_out", c.vocab_out}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.attention = j.value("attention", c.attention);
  c.set_mask(j.value("mask", c.mask_string()));
  c.anticipation_weight = j.value("anticipation_weight", c.anticipation_weight);
  c.vocab_in = j.value("vocab_in", c.vocab_in);
  c.vocab_out = j.value("vocab_out", c.vocab_out);
}

std::vector<char> attention_mask(std::size_t step, std::size_t length, MaskMode mode,
                                 std::size_t window) {
  if (step < 1) throw DomainError("decoder steps are 1-based");
  std::vector<char> keep(length, 0);
  const std::size_t center = std::min(step, length);
  for (std::size_t t = 1; t <= length; ++t) {
    bool k = true;
    if (mode == MaskMode::causal) k = t <= center;
    if (mode == MaskMode::local) k = t + window >= center && t <= center + window;
    keep[t - 1] = k ? 1 : 0;
  }
  if (length > 0 && !keep[center - 1]) throw InternalError("attention mask removed every position");
  return keep;
}

Seq2Seq::Seq2Seq(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t e = config_.embedding_dim, h = config_.hidden_dim;
  const std::size_t dec_in = e + (config_.attention ? h : 0);
  enc_embedding_ = Parameter("encoder.embedding", Matrix(config_.vocab_in, e));
  enc_weight_ = Parameter("encoder.lstm.weight", Matrix(e + h, 4 * h));
  enc_bias_ = Parameter("encoder.lstm.bias", Matrix(1, 4 * h));
  dec_embedding_ = Parameter("decoder.embedding", Matrix(config_.vocab_out, e));
  dec_weight_ = Parameter("decoder.lstm.weight", Matrix(dec_in + h, 4 * h));
  dec_bias_ = Parameter("decoder.lstm.bias", Matrix(1, 4 * h));
  out_weight_ = Parameter("decoder.output.weight", Matrix(h, config_.vocab_out));
  out_bias_ = Parameter("decoder.output.bias", Matrix(1, config_.vocab_out));
  antcp_weight_ = Parameter("anticipation.weight", Matrix(h, config_.vocab_in));
  antcp_bias_ = Parameter("anticipation.bias", Matrix(1, config_.vocab_in));
}

void Seq2Seq::initialize(Rng& rng) {
  for (Parameter* p : parameters()) {
    if (p->value.rows() == 1) {
      p->value = p == &enc_bias_ || p == &dec_bias_ ? lstm_bias(config_.hidden_dim)
                                                     : Matrix(1, p->value.cols());
    } else {
      p->value = xavier(p->value.rows(), p->value.cols(), rng);
    }
  }
}

std::vector<Parameter*> Seq2Seq::parameters() {
  return {&enc_embedding_, &enc_weight_, &enc_bias_, &dec_embedding_, &dec_weight_,
          &dec_bias_,      &out_weight_, &out_bias_, &antcp_weight_,  &antcp_bias_};
}

std::vector<const Parameter*> Seq2Seq::parameters() const {
  auto ps = const_cast<Seq2Seq*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Parameter& Seq2Seq::parameter(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return *p;
  throw ConfigError("model has no parameter '" + name + "'");
}

const Parameter& Seq2Seq::parameter(const std::string& name) const {
  return const_cast<Seq2Seq*>(this)->parameter(name);
}

// Forward computation on a tape, shared by training, loss evaluation and
// inference so every path computes identical values.
struct ForwardPass {
  const Seq2Seq& m;
  ad::Tape& tape;
  Seq2Seq* trainable = nullptr;  // set when gradients should reach the parameters

  struct Encoded {
    std::vector<ad::Var> h;
    std::vector<ad::Var> c;
    ad::Var final_h;
    ad::Var final_c;
  };

  ad::Var bind(const Parameter& p) {
    if (trainable != nullptr && tape.recording()) return tape.param(trainable->parameter(p.name));
    return tape.param_value(p);
  }

  std::pair<ad::Var, ad::Var> lstm(ad::Var x, ad::Var h, ad::Var c, const Parameter& weight,
                                   const Parameter& bias) {
    const std::size_t hd = m.config_.hidden_dim;
    const ad::Var in[] = {x, h};
    const ad::Var z = ad::add(ad::matmul(ad::concat_cols(in), bind(weight)), bind(bias));
    const ad::Var i = ad::sigmoid(ad::slice_cols(z, 0, hd));
    const ad::Var f = ad::sigmoid(ad::slice_cols(z, hd, hd));
    const ad::Var g = ad::tanh(ad::slice_cols(z, 2 * hd, hd));
    const ad::Var o = ad::sigmoid(ad::slice_cols(z, 3 * hd, hd));
    const ad::Var terms[] = {ad::mul(f, c), ad::mul(i, g)};
    const ad::Var c_next = ad::add_n(terms);
    const ad::Var h_next = ad::mul(o, ad::tanh(c_next));
    return {h_next, c_next};
  }

  Encoded encode(const Batch& b) {
    const std::size_t hd = m.config_.hidden_dim;
    Encoded enc;
    ad::Var h = tape.constant(Matrix(b.size, hd));
    ad::Var c = tape.constant(Matrix(b.size, hd));
    const ad::Var embedding = bind(m.enc_embedding_);
    std::vector<std::size_t> column(b.size);
    std::vector<char> active(b.size);
    for (std::size_t t = 0; t < b.src_width; ++t) {
      bool all_active = true;
      for (std::size_t r = 0; r < b.size; ++r) {
        column[r] = b.src_at(r, t);
        if (column[r] >= m.config_.vocab_in) {
          throw VocabularyError("input token index " + std::to_string(column[r]) +
                                " out of range for vocabulary of " +
                                std::to_string(m.config_.vocab_in));
        }
        active[r] = t < b.src_lengths[r] ? 1 : 0;
        all_active = all_active && active[r];
      }
      auto [h_next, c_next] = lstm(ad::gather_rows(embedding, column), h, c, m.enc_weight_,
                                   m.enc_bias_);
      if (all_active) {
        h = h_next;
        c = c_next;
      } else {
        h = ad::blend_rows(h_next, h, active);
        c = ad::blend_rows(c_next, c, active);
      }
      enc.h.push_back(h);
      enc.c.push_back(c);
    }
    enc.final_h = h;
    enc.final_c = c;
    return enc;
  }

  Matrix step_mask(const Batch& b, std::size_t step) const {
    bool needed = m.config_.mask != MaskMode::none;
    for (std::size_t r = 0; r < b.size && !needed; ++r) needed = b.src_lengths[r] != b.src_width;
    if (!needed) return {};
    Matrix mask(b.size, b.src_width);
    for (std::size_t r = 0; r < b.size; ++r) {
      const auto keep = attention_mask(step, b.src_lengths[r], m.config_.mask, m.config_.window);
      for (std::size_t t = 0; t < keep.size(); ++t) mask(r, t) = keep[t];
    }
    return mask;
  }

  struct Step {
    ad::Var h;
    ad::Var c;
    ad::Var logits;
    ad::Var weights;
    bool has_weights = false;
  };

  Step decoder_step(std::span<const std::size_t> prev_tokens, ad::Var h, ad::Var c,
                    const Encoded& enc, const Batch& b, std::size_t step) {
    for (std::size_t tok : prev_tokens) {
      if (tok >= m.config_.vocab_out) {
        throw VocabularyError("output token index " + std::to_string(tok) + " out of range");
      }
    }
    Step out;
    ad::Var input = ad::gather_rows(bind(m.dec_embedding_), prev_tokens);
    if (m.config_.attention) {
      const ad::Var energies = ad::dot_energies(h, enc.h);
      out.weights = ad::softmax_rows(energies, step_mask(b, step));
      out.has_weights = true;
      const ad::Var parts[] = {input, ad::weighted_sum(out.weights, enc.h)};
      input = ad::concat_cols(parts);
    }
    std::tie(out.h, out.c) = lstm(input, h, c, m.dec_weight_, m.dec_bias_);
    out.logits = ad::add(ad::matmul(out.h, bind(m.out_weight_)), bind(m.out_bias_));
    return out;
  }

  struct Losses {
    ad::Var seq2seq;
    ad::Var anticipation;
    bool has_anticipation = false;
  };

  // Per-example means, averaged over the batch. Rows are processed in order
  // of decreasing target length so that finished rows can be dropped from
  // the decoder by taking a prefix of the batch.
  Losses losses(const Batch& unsorted, bool with_anticipation) {
    const Batch b = sort_by_target_length(unsorted);
    const Encoded enc = encode(b);
    const double inv_b = 1.0 / static_cast<double>(b.size);
    std::vector<ad::Var> seq_terms;
    ad::Var h = enc.final_h, c = enc.final_c;
    Encoded active_enc = enc;
    Batch active = b;
    std::vector<std::size_t> prev(b.size, Vocabulary::kSos), target;
    std::vector<double> weight;
    for (std::size_t i = 1; i <= b.tgt_width; ++i) {
      std::size_t n = 0;
      while (n < b.size && b.tgt_lengths[n] >= i) ++n;
      if (n < active.size) {
        h = ad::slice_rows(h, 0, n);
        c = ad::slice_rows(c, 0, n);
        for (auto& state : active_enc.h) state = ad::slice_rows(state, 0, n);
        active.size = n;
        active.src_lengths.resize(n);
        prev.resize(n);
      }
      target.resize(n);
      weight.resize(n);
      for (std::size_t r = 0; r < n; ++r) {
        target[r] = b.tgt_at(r, i - 1);
        weight[r] = inv_b / static_cast<double>(b.tgt_lengths[r]);
      }
      const Step s = decoder_step(prev, h, c, active_enc, active, i);
      seq_terms.push_back(ad::cross_entropy(ad::softmax_rows(s.logits), target, weight));
      h = s.h;
      c = s.c;
      prev = target;
    }
    Losses out;
    out.seq2seq = ad::add_n(seq_terms);
    if (!with_anticipation) return out;
    std::vector<ad::Var> antcp_terms;
    const ad::Var w = bind(m.antcp_weight_), bias = bind(m.antcp_bias_);
    target.assign(b.size, Vocabulary::kPad);
    weight.assign(b.size, 0.0);
    for (std::size_t t = 0; t + 1 < b.src_width; ++t) {
      bool any = false;
      for (std::size_t r = 0; r < b.size; ++r) {
        const bool valid = t + 1 < b.src_lengths[r];
        target[r] = valid ? b.src_at(r, t + 1) : Vocabulary::kPad;
        weight[r] = valid ? inv_b / static_cast<double>(b.src_lengths[r] - 1) : 0.0;
        any = any || valid;
      }
      if (!any) continue;
      const ad::Var logits = ad::add(ad::matmul(enc.h[t], w), bias);
      antcp_terms.push_back(ad::cross_entropy(ad::softmax_rows(logits), target, weight));
    }
    if (antcp_terms.empty()) return out;
    out.anticipation = ad::add_n(antcp_terms);
    out.has_anticipation = true;
    return out;
  }
};

Seq2Seq::BatchLoss Seq2Seq::batch_loss(ad::Tape& tape, const Batch& batch) {
  if (batch.size == 0) throw DomainError("empty batch");
  ForwardPass fp{*this, tape, this};
  const double lambda = config_.anticipation_weight;
  const auto l = fp.losses(batch, lambda > 0.0);
  BatchLoss out;
  out.seq2seq = tape.value(l.seq2seq)[0];
  out.total = l.seq2seq;
  if (l.has_anticipation) {
    out.anticipation = tape.value(l.anticipation)[0];
    const ad::Var terms[] = {l.seq2seq, ad::scale(l.anticipation, lambda)};
    out.total = ad::add_n(terms);
  }
  return out;
}

LossParts Seq2Seq::sequence_loss(const std::vector<std::size_t>& src,
                                 const std::vector<std::size_t>& tgt_with_eos) const {
  if (tgt_with_eos.empty()) throw DomainError("empty target sequence");
  Batch b = source_batch({src});
  b.tgt_width = tgt_with_eos.size();
  b.tgt = tgt_with_eos;
  b.tgt_lengths = {tgt_with_eos.size()};
  ad::Tape tape(false);
  ForwardPass fp{*this, tape};
  const auto l = fp.losses(b, true);
  LossParts out;
  out.seq2seq = tape.value(l.seq2seq)[0];
  out.anticipation_defined = l.has_anticipation;
  if (l.has_anticipation) out.anticipation = tape.value(l.anticipation)[0];
  out.total = out.seq2seq + config_.anticipation_weight * out.anticipation;
  if (config_.anticipation_weight == 0.0) out.total = out.seq2seq;
  return out;
}

std::vector<EncoderTrace> Seq2Seq::encode_batch(const Batch& batch) const {
  ad::Tape tape(false);
  ForwardPass fp{*this, tape};
  const auto enc = fp.encode(batch);
  std::vector<EncoderTrace> out(batch.size);
  for (std::size_t r = 0; r < batch.size; ++r) {
    auto& tr = out[r];
    for (std::size_t t = 0; t < batch.src_lengths[r]; ++t) {
      tr.tokens.push_back(batch.src_at(r, t));
      const auto h = tape.value(enc.h[t]).row(r);
      const auto c = tape.value(enc.c[t]).row(r);
      tr.hidden.emplace_back(h.begin(), h.end());
      tr.cell.emplace_back(c.begin(), c.end());
    }
  }
  return out;
}

EncoderTrace Seq2Seq::encode(const std::vector<std::size_t>& tokens) const {
  return encode_batch(source_batch({tokens})).front();
}

DecoderStepOutput Seq2Seq::decode_step(std::size_t prev_token, const LstmState& prev,
                                       const EncoderTrace& trace, std::size_t step) const {
  const std::size_t hd = config_.hidden_dim;
  if (prev.h.size() != hd || prev.c.size() != hd) throw DimensionError("decoder state size");
  ad::Tape tape(false);
  ForwardPass fp{*this, tape};
  ForwardPass::Encoded enc;
  for (std::size_t t = 0; t < trace.length(); ++t) {
    enc.h.push_back(tape.constant(Matrix::row_vector(trace.hidden[t])));
    enc.c.push_back(tape.constant(Matrix::row_vector(trace.cell[t])));
  }
  Batch b = source_batch({trace.tokens});
  const std::size_t prev_tokens[] = {prev_token};
  const auto s = fp.decoder_step(prev_tokens, tape.constant(Matrix::row_vector(prev.h)),
                                 tape.constant(Matrix::row_vector(prev.c)), enc, b, step);
  DecoderStepOutput out;
  const auto logits = tape.value(s.logits).values();
  out.logits.assign(logits.begin(), logits.end());
  if (s.has_weights) {
    const auto w = tape.value(s.weights).values();
    out.attention_weights.assign(w.begin(), w.end());
  }
  const auto h = tape.value(s.h).values();
  const auto c = tape.value(s.c).values();
  out.state.h.assign(h.begin(), h.end());
  out.state.c.assign(c.begin(), c.end());
  return out;
}

std::pair<double, bool> Seq2Seq::anticipation_loss(const EncoderTrace& trace) const {
  const std::size_t T = trace.length();
  if (T < 2) return {0.0, false};
  const Matrix& w = antcp_weight_.value;
  const Matrix& b = antcp_bias_.value;
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const Matrix logits = incrprobe::matmul(Matrix::row_vector(trace.hidden[t]), w);
    std::vector<double> z(logits.values().begin(), logits.values().end());
    for (std::size_t k = 0; k < z.size(); ++k) z[k] += b[k];
    total += incrprobe::cross_entropy(softmax(z), trace.tokens[t + 1]);
  }
  return {total / static_cast<double>(T - 1), true};
}

std::vector<DecodeResult> Seq2Seq::greedy_decode_batch(
    const std::vector<std::vector<std::size_t>>& srcs, std::size_t max_len) const {
  std::vector<DecodeResult> out(srcs.size());
  if (srcs.empty()) return out;
  const Batch b = source_batch(srcs);
  ad::Tape tape(false);
  ForwardPass fp{*this, tape};
  const auto enc = fp.encode(b);
  std::vector<char> done(b.size, 0);
  std::vector<std::size_t> prev(b.size, Vocabulary::kSos);
  ad::Var h = enc.final_h, c = enc.final_c;
  std::size_t remaining = b.size;
  for (std::size_t step = 1; step <= max_len && remaining > 0; ++step) {
    const auto s = fp.decoder_step(prev, h, c, enc, b, step);
    const Matrix& logits = tape.value(s.logits);
    for (std::size_t r = 0; r < b.size; ++r) {
      const std::size_t tok = argmax(logits.row(r));
      prev[r] = tok;
      if (done[r]) continue;
      if (tok == Vocabulary::kEos) {
        done[r] = 1;
        --remaining;
      } else {
        out[r].tokens.push_back(tok);
      }
    }
    h = s.h;
    c = s.c;
  }
  for (std::size_t r = 0; r < b.size; ++r) out[r].truncated = !done[r];
  return out;
}

DecodeResult Seq2Seq::greedy_decode(const std::vector<std::size_t>& src,
                                    std::size_t max_len) const {
  return greedy_decode_batch({src}, max_len).front();
}

LstmState Seq2Seq::encoder_cell(std::span<const double> x_embedding, std::span<const double> h,
                                std::span<const double> c) const {
  const std::size_t hd = config_.hidden_dim, ed = config_.embedding_dim;
  if (x_embedding.size() != ed || h.size() != hd || c.size() != hd) {
    throw DimensionError("encoder_cell: input sizes do not match the model");
  }
  // Same accumulation order as the tape path (gemm then bias) so that
  // f(x_t, h_{t-1}, c_{t-1}) reproduces the encoder state bit for bit.
  const Matrix& w = enc_weight_.value;
  std::vector<double> z(4 * hd, 0.0);
  for (std::size_t k = 0; k < ed + hd; ++k) {
    const double in = k < ed ? x_embedding[k] : h[k - ed];
    const auto wrow = w.row(k);
    for (std::size_t j = 0; j < 4 * hd; ++j) z[j] += in * wrow[j];
  }
  for (std::size_t j = 0; j < 4 * hd; ++j) z[j] += enc_bias_.value[j];
  LstmState out;
  out.h.resize(hd);
  out.c.resize(hd);
  for (std::size_t j = 0; j < hd; ++j) {
    const double i = sigmoid(z[j]);
    const double f = sigmoid(z[hd + j]);
    const double g = std::tanh(z[2 * hd + j]);
    const double o = sigmoid(z[3 * hd + j]);
    out.c[j] = f * c[j] + i * g;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

std::span<const double> Seq2Seq::input_embedding(std::size_t token) const {
  if (token >= config_.vocab_in) throw VocabularyError("input token index out of range");
  return enc_embedding_.value.row(token);
}

// Checkpoint I/O.

namespace {
constexpr char kCheckpointMagic[4] = {'I', 'N', 'C', 'R'};
constexpr std::uint8_t kCheckpointVersion = 1;
}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u8(kCheckpointVersion);
  nlohmann::json meta;
  meta["config"] = ckpt.model.config();
  meta["vocab_in"] = ckpt.vocab_in.tokens();
  meta["vocab_out"] = ckpt.vocab_out.tokens();
  meta["extra"] = ckpt.extra;
  const std::string text = meta.dump();
  w.u64(text.size());
  w.bytes(text.data(), text.size());
  const auto params = ckpt.model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.str(p->name);
    w.u64(p->value.rows());
    w.u64(p->value.cols());
    w.f64s(p->value.values());
  }
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw ParseError("checkpoint: bad magic");
  const auto version = r.u8();
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::string text = r.raw(r.u64());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  Checkpoint ckpt{Seq2Seq(meta.at("config").get<ModelConfig>()),
                  Vocabulary(meta.at("vocab_in").get<std::vector<std::string>>()),
                  Vocabulary(meta.at("vocab_out").get<std::vector<std::string>>()),
                  meta.value("extra", nlohmann::json::object())};
  const auto& cfg = ckpt.model.config();
  if (ckpt.vocab_in.size() != cfg.vocab_in || ckpt.vocab_out.size() != cfg.vocab_out) {
    throw ParseError("checkpoint: vocabulary sizes disagree with the config");
  }
  const std::uint32_t count = r.u32();
  if (count != ckpt.model.parameters().size()) {
    throw ParseError("checkpoint: expected " + std::to_string(ckpt.model.parameters().size()) +
                     " arrays, found " + std::to_string(count));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Parameter& p = ckpt.model.parameter(name);
    const auto rows = r.u64();
    const auto cols = r.u64();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      std::ostringstream msg;
      msg << "checkpoint: array '" << name << "' has shape (" << rows << "x" << cols
          << "), config implies " << p.value.shape_string();
      throw ParseError(msg.str());
    }
    for (double& v : p.value.values()) v = r.f64();
  }
  if (!r.at_end()) throw ParseError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file(path.string(), serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path.string()));
}

}  // namespace incrprobe
