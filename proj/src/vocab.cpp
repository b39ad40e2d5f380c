#include "incrprobe/vocab.hpp"

#include <algorithm>

#include "incrprobe/error.hpp"

namespace incrprobe {

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  index_to_token_ = {"<pad>", "<sos>", "<eos>"};
  for (std::size_t i = 0; i < kReserved; ++i) token_to_index_.emplace(index_to_token_[i], i);
  for (const auto& t : tokens) {
    if (token_to_index_.contains(t)) throw VocabularyError("duplicate vocabulary token '" + t + "'");
    token_to_index_.emplace(t, index_to_token_.size());
    index_to_token_.push_back(t);
  }
}

Vocabulary Vocabulary::scan_commands() { return Vocabulary(scan::command_words()); }
Vocabulary Vocabulary::scan_actions() { return Vocabulary(scan::action_symbols()); }

std::size_t Vocabulary::index(const std::string& token) const {
  auto it = token_to_index_.find(token);
  if (it == token_to_index_.end()) throw VocabularyError("unknown token '" + token + "'");
  return it->second;
}

const std::string& Vocabulary::token(std::size_t index) const {
  if (index >= index_to_token_.size()) {
    throw VocabularyError("token index " + std::to_string(index) + " out of range");
  }
  return index_to_token_[index];
}

std::vector<std::string> Vocabulary::tokens() const {
  return {index_to_token_.begin() + kReserved, index_to_token_.end()};
}

std::vector<std::size_t> Vocabulary::encode(const scan::Tokens& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(index(t));
  return out;
}

scan::Tokens Vocabulary::decode(const std::vector<std::size_t>& indices) const {
  scan::Tokens out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(token(i));
  return out;
}

Batch make_batch(const std::vector<const scan::Example*>& examples, const Vocabulary& vocab_in,
                 const Vocabulary& vocab_out) {
  Batch b;
  b.size = examples.size();
  for (const auto* e : examples) {
    b.src_width = std::max(b.src_width, e->command.size());
    b.tgt_width = std::max(b.tgt_width, e->actions.size() + 1);
  }
  b.src.assign(b.size * b.src_width, Vocabulary::kPad);
  b.tgt.assign(b.size * b.tgt_width, Vocabulary::kPad);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto src = vocab_in.encode(examples[r]->command);
    const auto tgt = vocab_out.encode(examples[r]->actions);
    std::copy(src.begin(), src.end(), b.src.begin() + r * b.src_width);
    std::copy(tgt.begin(), tgt.end(), b.tgt.begin() + r * b.tgt_width);
    b.tgt[r * b.tgt_width + tgt.size()] = Vocabulary::kEos;
    b.src_lengths.push_back(src.size());
    b.tgt_lengths.push_back(tgt.size() + 1);
  }
  return b;
}

std::vector<Batch> batch(const std::vector<scan::Example>& examples, std::size_t batch_size,
                         const Vocabulary& vocab_in, const Vocabulary& vocab_out) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    std::vector<const scan::Example*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&examples[i]);
    out.push_back(make_batch(chunk, vocab_in, vocab_out));
  }
  return out;
}

std::vector<scan::Example> unbatch(const Batch& b, const Vocabulary& vocab_in,
                                   const Vocabulary& vocab_out) {
  std::vector<scan::Example> out;
  for (std::size_t r = 0; r < b.size; ++r) {
    std::vector<std::size_t> src(b.src.begin() + r * b.src_width,
                                 b.src.begin() + r * b.src_width + b.src_lengths[r]);
    std::vector<std::size_t> tgt(b.tgt.begin() + r * b.tgt_width,
                                 b.tgt.begin() + r * b.tgt_width + b.tgt_lengths[r] - 1);
    out.push_back({vocab_in.decode(src), vocab_out.decode(tgt)});
  }
  return out;
}

}  // namespace incrprobe
