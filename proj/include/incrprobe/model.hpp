#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "incrprobe/autodiff.hpp"
#include "incrprobe/parameter.hpp"
#include "incrprobe/rng.hpp"
#include "incrprobe/vocab.hpp"

namespace incrprobe {

enum class MaskMode { none, causal, local };

struct ModelConfig {
  std::size_t embedding_dim = 128;
  std::size_t hidden_dim = 128;
  bool attention = false;
  MaskMode mask = MaskMode::none;
  std::size_t window = 1;  // local mask half-width w
  double anticipation_weight = 0.0;
  std::size_t vocab_in = 0;
  std::size_t vocab_out = 0;

  void validate() const;
  /// "none", "causal" or "local:<w>".
  std::string mask_string() const;
  void set_mask(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Encoder states for one sequence. Index t holds h_{t+1}, c_{t+1}.
struct EncoderTrace {
  std::vector<std::size_t> tokens;
  std::vector<std::vector<double>> hidden;
  std::vector<std::vector<double>> cell;

  std::size_t length() const noexcept { return tokens.size(); }
};

struct LstmState {
  std::vector<double> h;
  std::vector<double> c;
};

struct DecoderStepOutput {
  std::vector<double> logits;
  std::vector<double> attention_weights;  // empty without attention
  LstmState state;                        // s_i
};

struct DecodeResult {
  std::vector<std::size_t> tokens;  // without EOS
  bool truncated = false;           // hit max_len before EOS
};

struct LossParts {
  double total = 0.0;
  double seq2seq = 0.0;
  double anticipation = 0.0;  // unweighted; total = seq2seq + λ·anticipation
  bool anticipation_defined = false;
};

/// Attendable encoder positions (1 = keep) for 1-based decoder step `step`
/// over an encoder sequence of `length` positions.
std::vector<char> attention_mask(std::size_t step, std::size_t length, MaskMode mode,
                                 std::size_t window);

/// Single-layer LSTM encoder-decoder with optional dot attention and an
/// anticipation (next-input-token) head on the encoder states.
///
/// Weights use the row-vector convention: a layer computes x·W + b, so the
/// fused LSTM weight is (input + hidden) × 4·hidden with gate blocks ordered
/// input, forget, candidate, output.
class Seq2Seq {
 public:
  explicit Seq2Seq(ModelConfig config);

  /// Xavier-uniform weights, zero biases, forget-gate bias 1.
  void initialize(Rng& rng);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;

  /// Builds the training loss of a batch on `tape` (recording). The total is
  /// the mean over examples of seq2seq + λ·anticipation.
  struct BatchLoss {
    ad::Var total;
    double seq2seq = 0.0;
    double anticipation = 0.0;
  };
  BatchLoss batch_loss(ad::Tape& tape, const Batch& batch);

  /// Loss of a single example (no gradients).
  LossParts sequence_loss(const std::vector<std::size_t>& src,
                          const std::vector<std::size_t>& tgt_with_eos) const;

  EncoderTrace encode(const std::vector<std::size_t>& tokens) const;
  std::vector<EncoderTrace> encode_batch(const Batch& batch) const;

  DecoderStepOutput decode_step(std::size_t prev_token, const LstmState& prev,
                                const EncoderTrace& trace, std::size_t step) const;

  /// Mean next-token cross-entropy of the anticipation head over t = 1..T−1.
  /// Returns {0, false} for T = 1.
  std::pair<double, bool> anticipation_loss(const EncoderTrace& trace) const;

  DecodeResult greedy_decode(const std::vector<std::size_t>& src, std::size_t max_len = 64) const;
  std::vector<DecodeResult> greedy_decode_batch(const std::vector<std::vector<std::size_t>>& srcs,
                                                std::size_t max_len = 64) const;

  /// One encoder LSTM step outside the tape: f(x_embedding, h, c).
  LstmState encoder_cell(std::span<const double> x_embedding, std::span<const double> h,
                         std::span<const double> c) const;
  std::span<const double> input_embedding(std::size_t token) const;

 private:
  ModelConfig config_;
  Parameter enc_embedding_;
  Parameter enc_weight_;
  Parameter enc_bias_;
  Parameter dec_embedding_;
  Parameter dec_weight_;
  Parameter dec_bias_;
  Parameter out_weight_;
  Parameter out_bias_;
  Parameter antcp_weight_;
  Parameter antcp_bias_;

  friend struct ForwardPass;
};

struct Checkpoint {
  Seq2Seq model;
  Vocabulary vocab_in;
  Vocabulary vocab_out;
  nlohmann::json extra = nlohmann::json::object();
};

/// "INCR" + version byte + u64 metadata length + metadata JSON + u32 array
/// count + per array (u32 name length, name, u64 rows, u64 cols, f64 data),
/// all little-endian.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace incrprobe
