#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "incrprobe/scan.hpp"

namespace incrprobe {

/// Token↔index map with fixed reserved entries PAD=0, SOS=1, EOS=2.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kSos = 1;
  static constexpr std::size_t kEos = 2;
  static constexpr std::size_t kReserved = 3;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
  /// Non-reserved tokens are assigned indices 3, 4, ... in the given order.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  static Vocabulary scan_commands();
  static Vocabulary scan_actions();

  std::size_t size() const noexcept { return index_to_token_.size(); }
  /// Throws VocabularyError for unknown tokens.
  std::size_t index(const std::string& token) const;
  const std::string& token(std::size_t index) const;
  bool contains(const std::string& token) const { return token_to_index_.contains(token); }
  std::vector<std::string> tokens() const;  // non-reserved, in index order

  std::vector<std::size_t> encode(const scan::Tokens& tokens) const;
  scan::Tokens decode(const std::vector<std::size_t>& indices) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.index_to_token_ == b.index_to_token_;
  }

 private:
  std::unordered_map<std::string, std::size_t> token_to_index_;
  std::vector<std::string> index_to_token_;
};

/// Padded index batch. Sources are padded with PAD; targets carry EOS and are
/// then padded. Lengths are true lengths (target length includes EOS).
struct Batch {
  std::size_t size = 0;
  std::size_t src_width = 0;
  std::size_t tgt_width = 0;
  std::vector<std::size_t> src;  // size × src_width
  std::vector<std::size_t> tgt;  // size × tgt_width
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;

  std::size_t src_at(std::size_t row, std::size_t t) const { return src[row * src_width + t]; }
  std::size_t tgt_at(std::size_t row, std::size_t t) const { return tgt[row * tgt_width + t]; }
};

Batch make_batch(const std::vector<const scan::Example*>& examples, const Vocabulary& vocab_in,
                 const Vocabulary& vocab_out);

/// Consecutive batches of at most batch_size examples; the last may be partial.
std::vector<Batch> batch(const std::vector<scan::Example>& examples, std::size_t batch_size,
                         const Vocabulary& vocab_in, const Vocabulary& vocab_out);

/// Inverse of batching: recovers the token sequences (without EOS/PAD).
std::vector<scan::Example> unbatch(const Batch& b, const Vocabulary& vocab_in,
                                   const Vocabulary& vocab_out);

}  // namespace incrprobe
