#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "incrprobe/model.hpp"
#include "incrprobe/rng.hpp"
#include "incrprobe/autodiff.hpp"
#include "incrprobe/vocab.hpp"
#include "oracles.hpp"

namespace helpers {

inline incrprobe::ModelConfig tiny_config(std::size_t e, std::size_t h, std::size_t vin, std::size_t vout,
                                          bool attention, double lambda = 0.0,
                                          const std::string& mask = "none") {
  incrprobe::ModelConfig c;
  c.embedding_dim = e;
  c.hidden_dim = h;
  c.vocab_in = vin;
  c.vocab_out = vout;
  c.attention = attention;
  c.anticipation_weight = lambda;
  c.set_mask(mask);
  return c;
}

inline incrprobe::Seq2Seq random_model(const incrprobe::ModelConfig& c, std::uint64_t seed,
                                       double jitter = 0.0) {
  incrprobe::Seq2Seq m(c);
  incrprobe::Rng rng(seed);
  m.initialize(rng);
  // biases start at zero; jitter makes every parameter matter in checks
  if (jitter > 0.0)
    for (auto* p : m.parameters())
      for (auto& v : p->value.values()) v += rng.uniform(-jitter, jitter);
  return m;
}

/// Random token sequence over non-reserved indices.
inline std::vector<std::size_t> random_tokens(incrprobe::Rng& rng, std::size_t len, std::size_t vocab) {
  std::vector<std::size_t> out(len);
  for (auto& t : out) t = incrprobe::Vocabulary::kReserved + rng.below(vocab - incrprobe::Vocabulary::kReserved);
  return out;
}

/// Padded batch from raw index sequences; targets get EOS appended.
inline incrprobe::Batch raw_batch(const std::vector<std::vector<std::size_t>>& src,
                                  const std::vector<std::vector<std::size_t>>& tgt) {
  incrprobe::Batch b;
  b.size = src.size();
  for (const auto& s : src) b.src_width = std::max(b.src_width, s.size());
  for (const auto& t : tgt) b.tgt_width = std::max(b.tgt_width, t.size() + 1);
  b.src.assign(b.size * b.src_width, incrprobe::Vocabulary::kPad);
  b.tgt.assign(b.size * b.tgt_width, incrprobe::Vocabulary::kPad);
  for (std::size_t r = 0; r < b.size; ++r) {
    for (std::size_t t = 0; t < src[r].size(); ++t) b.src[r * b.src_width + t] = src[r][t];
    for (std::size_t t = 0; t < tgt[r].size(); ++t) b.tgt[r * b.tgt_width + t] = tgt[r][t];
    b.tgt[r * b.tgt_width + tgt[r].size()] = incrprobe::Vocabulary::kEos;
    b.src_lengths.push_back(src[r].size());
    b.tgt_lengths.push_back(tgt[r].size() + 1);
  }
  return b;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "incrprobe_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Worst relative error between the analytic gradient of the batch loss and
/// central finite differences, over every parameter coordinate.
inline double composite_gradient_error(incrprobe::Seq2Seq& model, const incrprobe::Batch& batch) {
  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  {
    incrprobe::ad::Tape tape;
    tape.backward(model.batch_loss(tape, batch).total);
  }
  std::vector<incrprobe::Matrix> grads;
  for (auto* p : params) grads.push_back(p->grad);
  for (auto* p : params) p->zero_grad();
  return oracle::max_gradient_error(params, grads, [&] {
    incrprobe::ad::Tape tape(false);
    return tape.value(model.batch_loss(tape, batch).total)(0, 0);
  });
}

}  // namespace helpers
