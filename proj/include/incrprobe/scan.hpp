#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "incrprobe/rng.hpp"

namespace incrprobe::scan {

using Tokens = std::vector<std::string>;

/// One SCAN pair. `actions` is the interpretation of `command`.
struct Example {
  Tokens command;
  Tokens actions;

  friend bool operator==(const Example&, const Example&) = default;
};

inline constexpr std::size_t kMaxCommandLength = 9;
inline constexpr std::size_t kMaxActionLength = 48;

/// Command words, in canonical (sorted) order.
const std::vector<std::string>& command_words();
/// Action symbols, in canonical (sorted) order.
const std::vector<std::string>& action_symbols();

/// Executes a SCAN command. Throws ParseError naming the offending token
/// position when the sequence is not generated by the grammar.
Tokens interpret(const Tokens& command);

/// Every command of the grammar with its interpretation, sorted
/// lexicographically by command tokens.
std::vector<Example> enumerate_all();

enum class SplitKind { add_prim_jump, add_prim_turn_left, random };

SplitKind parse_split_kind(std::string_view name);
std::string_view to_string(SplitKind kind);

struct Split {
  std::vector<Example> train;
  std::vector<Example> test;
};

/// add_prim_*: train holds every command without the held-out primitive plus
/// the bare primitive itself; test holds every composite command using it.
/// random: seeded 80/20 shuffle. Input order is preserved within each side
/// for the add_prim splits.
Split make_split(const std::vector<Example>& all, SplitKind kind, Rng& rng);

/// Held-out token sequence for an add_prim split ("jump" or "turn left").
Tokens held_out_primitive(SplitKind kind);
bool contains_subsequence(const Tokens& haystack, const Tokens& needle);

/// "IN: <command> OUT: <actions>" lines.
std::string format_line(const Example& e);
Example parse_line(std::string_view line, std::size_t line_number);
std::vector<Example> load_official(const std::filesystem::path& path);
void save(const std::vector<Example>& examples, const std::filesystem::path& path);

Tokens split_words(std::string_view text);
std::string join_words(const Tokens& tokens);

}  // namespace incrprobe::scan
