#include "incrprobe/scan.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "incrprobe/error.hpp"

namespace incrprobe::scan {

namespace {

[[noreturn]] void parse_fail(const Tokens& command, std::size_t pos, const std::string& what) {
  std::ostringstream msg;
  msg << "cannot parse command '" << join_words(command) << "' at token " << pos << ": " << what;
  throw ParseError(msg.str());
}

bool is_primitive(const std::string& w) {
  return w == "walk" || w == "look" || w == "run" || w == "jump";
}

std::string action_of(const std::string& primitive) {
  std::string upper = primitive;
  std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
  return "I_" + upper;
}

std::string turn_of(const std::string& direction) {
  return direction == "left" ? "I_TURN_LEFT" : "I_TURN_RIGHT";
}

// V over command[begin, end).
Tokens interpret_verb_phrase(const Tokens& cmd, std::size_t begin, std::size_t end) {
  const std::size_t n = end - begin;
  if (n == 0) parse_fail(cmd, begin, "empty phrase");
  const std::string& head = cmd[begin];
  const bool is_turn = head == "turn";
  if (!is_turn && !is_primitive(head)) parse_fail(cmd, begin, "expected an action word");
  if (n == 1) {
    if (is_turn) parse_fail(cmd, begin, "'turn' requires a direction");
    return {action_of(head)};
  }
  const std::string& dir = cmd[end - 1];
  if (dir != "left" && dir != "right") parse_fail(cmd, end - 1, "expected 'left' or 'right'");
  const std::string turn = turn_of(dir);
  Tokens out;
  auto emit = [&](std::size_t times_turn) {
    for (std::size_t i = 0; i < times_turn; ++i) out.push_back(turn);
    if (!is_turn) out.push_back(action_of(head));
  };
  if (n == 2) {
    emit(1);
    return out;
  }
  if (n == 3) {
    const std::string& mod = cmd[begin + 1];
    if (mod == "opposite") {
      emit(2);
      return out;
    }
    if (mod == "around") {
      for (int k = 0; k < 4; ++k) emit(1);
      return out;
    }
    parse_fail(cmd, begin + 1, "expected 'opposite' or 'around'");
  }
  parse_fail(cmd, begin + 3, "phrase too long");
}

// S over command[begin, end).
Tokens interpret_sentence(const Tokens& cmd, std::size_t begin, std::size_t end) {
  if (end == begin) parse_fail(cmd, begin, "empty phrase");
  std::size_t repeat = 1;
  const std::string& last = cmd[end - 1];
  if (last == "twice") repeat = 2;
  if (last == "thrice") repeat = 3;
  const Tokens once = interpret_verb_phrase(cmd, begin, repeat > 1 ? end - 1 : end);
  Tokens out;
  for (std::size_t i = 0; i < repeat; ++i) out.insert(out.end(), once.begin(), once.end());
  return out;
}

}  // namespace

const std::vector<std::string>& command_words() {
  static const std::vector<std::string> words = {
      "after", "and", "around", "jump", "left", "look", "opposite",
      "right", "run", "thrice", "turn", "twice", "walk"};
  return words;
}

const std::vector<std::string>& action_symbols() {
  static const std::vector<std::string> symbols = {"I_JUMP",      "I_LOOK",       "I_RUN",
                                                   "I_TURN_LEFT", "I_TURN_RIGHT", "I_WALK"};
  return symbols;
}

Tokens interpret(const Tokens& command) {
  if (command.empty()) throw ParseError("cannot parse empty command");
  std::size_t conj = command.size();
  for (std::size_t i = 0; i < command.size(); ++i) {
    if (command[i] != "and" && command[i] != "after") continue;
    if (conj != command.size()) parse_fail(command, i, "more than one conjunction");
    conj = i;
  }
  if (conj == command.size()) return interpret_sentence(command, 0, command.size());
  Tokens first = interpret_sentence(command, 0, conj);
  Tokens second = interpret_sentence(command, conj + 1, command.size());
  if (command[conj] == "after") std::swap(first, second);
  first.insert(first.end(), second.begin(), second.end());
  return first;
}

std::vector<Example> enumerate_all() {
  const Tokens primitives = {"walk", "look", "run", "jump"};
  const Tokens dirs = {"left", "right"};
  std::vector<Tokens> verbs;
  for (const auto& u : primitives) {
    verbs.push_back({u});
    for (const auto& d : dirs) {
      verbs.push_back({u, d});
      verbs.push_back({u, "opposite", d});
      verbs.push_back({u, "around", d});
    }
  }
  for (const auto& d : dirs) {
    verbs.push_back({"turn", d});
    verbs.push_back({"turn", "opposite", d});
    verbs.push_back({"turn", "around", d});
  }
  std::vector<Tokens> sentences;
  for (const auto& v : verbs) {
    sentences.push_back(v);
    for (const char* rep : {"twice", "thrice"}) {
      Tokens s = v;
      s.emplace_back(rep);
      sentences.push_back(std::move(s));
    }
  }
  std::vector<Tokens> commands = sentences;
  for (const auto& a : sentences)
    for (const auto& b : sentences)
      for (const char* conj : {"and", "after"}) {
        Tokens c = a;
        c.emplace_back(conj);
        c.insert(c.end(), b.begin(), b.end());
        commands.push_back(std::move(c));
      }
  std::sort(commands.begin(), commands.end());
  commands.erase(std::unique(commands.begin(), commands.end()), commands.end());
  std::vector<Example> out;
  out.reserve(commands.size());
  for (auto& c : commands) {
    Tokens actions = interpret(c);
    out.push_back({std::move(c), std::move(actions)});
  }
  return out;
}

SplitKind parse_split_kind(std::string_view name) {
  if (name == "add_prim_jump") return SplitKind::add_prim_jump;
  if (name == "add_prim_turn_left" || name == "add_prim_left") return SplitKind::add_prim_turn_left;
  if (name == "random") return SplitKind::random;
  throw ConfigError("unknown split kind '" + std::string(name) +
                    "' (expected add_prim_jump, add_prim_turn_left or random)");
}

std::string_view to_string(SplitKind kind) {
  switch (kind) {
    case SplitKind::add_prim_jump: return "add_prim_jump";
    case SplitKind::add_prim_turn_left: return "add_prim_turn_left";
    case SplitKind::random: return "random";
  }
  throw InternalError("bad SplitKind");
}

Tokens held_out_primitive(SplitKind kind) {
  switch (kind) {
    case SplitKind::add_prim_jump: return {"jump"};
    case SplitKind::add_prim_turn_left: return {"turn", "left"};
    case SplitKind::random: break;
  }
  throw ConfigError("split kind has no held-out primitive");
}

bool contains_subsequence(const Tokens& haystack, const Tokens& needle) {
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

Split make_split(const std::vector<Example>& all, SplitKind kind, Rng& rng) {
  Split split;
  if (kind == SplitKind::random) {
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t n_train = (all.size() * 4 + 4) / 5;
    for (std::size_t i = 0; i < order.size(); ++i)
      (i < n_train ? split.train : split.test).push_back(all[order[i]]);
    return split;
  }
  const Tokens primitive = held_out_primitive(kind);
  for (const auto& e : all) {
    if (e.command == primitive) {
      split.train.push_back(e);
    } else if (contains_subsequence(e.command, primitive)) {
      split.test.push_back(e);
    } else {
      split.train.push_back(e);
    }
  }
  return split;
}

Tokens split_words(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_words(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string format_line(const Example& e) {
  return "IN: " + join_words(e.command) + " OUT: " + join_words(e.actions);
}

Example parse_line(std::string_view line, std::size_t line_number) {
  auto fail = [&](const std::string& what) -> ParseError {
    std::ostringstream msg;
    msg << "line " << line_number << ": " << what;
    return ParseError(msg.str());
  };
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  constexpr std::string_view in_tag = "IN: ";
  constexpr std::string_view out_tag = " OUT: ";
  if (line.substr(0, in_tag.size()) != in_tag) throw fail("missing 'IN: ' prefix");
  const std::size_t out_pos = line.find(out_tag);
  if (out_pos == std::string_view::npos) throw fail("missing ' OUT: ' separator");
  Example e;
  e.command = split_words(line.substr(in_tag.size(), out_pos - in_tag.size()));
  e.actions = split_words(line.substr(out_pos + out_tag.size()));
  if (e.command.empty()) throw fail("empty command");
  if (e.actions.empty()) throw fail("empty action sequence");
  if (format_line(e) != line) throw fail("words must be separated by single spaces");
  const auto& words = command_words();
  for (const auto& w : e.command)
    if (std::find(words.begin(), words.end(), w) == words.end())
      throw fail("unknown command word '" + w + "'");
  const auto& symbols = action_symbols();
  for (const auto& a : e.actions)
    if (std::find(symbols.begin(), symbols.end(), a) == symbols.end())
      throw fail("unknown action symbol '" + a + "'");
  try {
    if (interpret(e.command) != e.actions) throw fail("actions do not match the command");
  } catch (const ParseError& err) {
    if (std::string_view(err.what()).starts_with("line ")) throw;
    throw fail(err.what());
  }
  return e;
}

std::vector<Example> load_official(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Example> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    out.push_back(parse_line(line, n));
  }
  return out;
}

void save(const std::vector<Example>& examples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : examples) out << format_line(e) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace incrprobe::scan
