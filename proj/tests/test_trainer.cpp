#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "incrprobe/activations.hpp"
#include "incrprobe/error.hpp"
#include "incrprobe/trainer.hpp"
#include "oracles.hpp"

using namespace incrprobe;

namespace {

std::vector<scan::Example> five_examples() {
  std::vector<scan::Example> out;
  for (const char* cmd : {"jump twice", "walk left", "run after look", "turn around right", "look thrice and walk"}) {
    const auto tokens = scan::split_words(cmd);
    out.push_back({tokens, scan::interpret(tokens)});
  }
  return out;
}

TrainConfig small_config(std::size_t hidden, std::size_t epochs, bool attention = false) {
  TrainConfig c = TrainConfig::desk();
  c.model.embedding_dim = hidden;
  c.model.hidden_dim = hidden;
  c.model.attention = attention;
  c.epochs = epochs;
  c.n_seeds = 2;
  return c;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("presets") {
  const auto full = TrainConfig::full();
  CHECK(full.model.embedding_dim == 128);
  CHECK(full.model.hidden_dim == 128);
  CHECK(full.epochs == 50);
  CHECK(full.n_seeds == 15);
  CHECK(full.lr == 0.001);
  CHECK(full.batch_size == 128);
  CHECK(full.split == scan::SplitKind::add_prim_jump);
  const auto desk = TrainConfig::desk();
  CHECK(desk.model.hidden_dim == 64);
  CHECK(desk.n_seeds == 5);
  CHECK(desk.epochs == 25);
}

TEST_CASE("config validation and JSON") {
  auto c = TrainConfig::desk();
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.epochs = 3;
  c.n_seeds = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.n_seeds = 4;
  c.model.set_mask("local:3");
  c.model.attention = true;
  c.model.anticipation_weight = 0.5;
  const nlohmann::json j = c;
  const auto back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(config_hash(j) == config_hash(nlohmann::json(back)));
  CHECK(config_hash(j).size() == 16);
  CHECK_THROWS_AS(architecture(c.model, "transformer"), ConfigError);
}

TEST_CASE("memorizes five examples") {
  const auto data = five_examples();
  auto cfg = small_config(32, 200, true);
  cfg.batch_size = 1;
  TrainStats stats;
  const auto ck = train_model(data, cfg, 3, &stats);
  REQUIRE(stats.epoch_losses.size() == 200);
  CHECK(stats.epoch_losses.back() < 0.01);
  CHECK(stats.epoch_losses.back() < stats.epoch_losses.front());
  CHECK(sequence_accuracy(ck, data) == 1.0);
  const auto decoded = decode_all(ck, data);
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(ck.vocab_out.decode(decoded[i].tokens) == data[i].actions);
  CHECK(sequence_accuracy(ck, {data[2]}) == 1.0);
  CHECK_THROWS_AS(sequence_accuracy(ck, {}), DomainError);
}

TEST_CASE("identical seeds give identical checkpoint bytes") {
  const auto data = five_examples();
  const auto cfg = small_config(8, 3, true);
  const auto a = serialize_checkpoint(train_model(data, cfg, 11));
  const auto b = serialize_checkpoint(train_model(data, cfg, 11));
  const auto c = serialize_checkpoint(train_model(data, cfg, 12));
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto cfg = small_config(8, 3);
  cfg.lr = 1e300;
  cfg.batch_size = 2;
  try {
    train_model(five_examples(), cfg, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
  CHECK_THROWS_AS(train_model({}, small_config(8, 1), 1), DomainError);
}

TEST_CASE("untrained model is at chance on the jump test set") {
  Rng rng(0);
  const auto split = scan::make_split(scan::enumerate_all(), scan::SplitKind::add_prim_jump, rng);
  Checkpoint ck{helpers::random_model(small_config(16, 1, true).model, 5), Vocabulary::scan_commands(),
                Vocabulary::scan_actions()};
  CHECK(sequence_accuracy(ck, split.test) < 0.05);
}

TEST_CASE("suite: one entry per seed, deterministic reruns, losses fall") {
  std::vector<scan::Example> data;
  for (const auto& e : scan::enumerate_all())
    if (e.command.size() <= 2) data.push_back(e);
  auto cfg = small_config(8, 4);
  cfg.batch_size = 8;
  cfg.base_seed = 40;
  const auto dir = helpers::temp_dir("suite");
  const auto m1 = train_suite(cfg, "vanilla", data, data, dir / "a");
  const auto m2 = train_suite(cfg, "vanilla", data, data, dir / "b");
  REQUIRE(m1.runs.size() == 2);
  CHECK(m1.runs[0].seed == 40);
  CHECK(m1.runs[1].seed == 41);
  CHECK(m1.runs[0].checkpoint != m1.runs[1].checkpoint);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(m1.runs[i].ok);
    CHECK(m1.runs[i].final_train_loss == m2.runs[i].final_train_loss);
    CHECK(m1.runs[i].test_sequence_accuracy == m2.runs[i].test_sequence_accuracy);
    CHECK(m1.runs[i].final_train_loss < m1.runs[i].first_epoch_loss);
    CHECK(std::filesystem::exists(dir / "a" / m1.runs[i].checkpoint));
  }
  const auto loaded = load_manifest(dir / "a" / "manifest.json");
  CHECK(loaded.config_hash == m1.config_hash);
  CHECK(loaded.runs.size() == 2);
  CHECK(load_checkpoint(dir / "a" / m1.runs[0].checkpoint).extra.at("seed") == 40);

  // a tampered config no longer matches its hash
  auto j = nlohmann::json::parse(std::ifstream(dir / "a" / "manifest.json"));
  j["config"]["epochs"] = 99;
  std::ofstream(dir / "a" / "manifest.json") << j.dump();
  CHECK_THROWS_AS(load_manifest(dir / "a" / "manifest.json"), ParseError);
}

TEST_CASE("suite records a failing seed and keeps going") {
  auto cfg = small_config(8, 2);
  cfg.lr = 1e300;
  cfg.batch_size = 1;
  const auto m = train_suite(cfg, "vanilla", five_examples(), five_examples(), helpers::temp_dir("suite_fail"));
  REQUIRE(m.runs.size() == 2);
  for (const auto& r : m.runs) {
    CHECK_FALSE(r.ok);
    CHECK(r.error.find("non-finite") != std::string::npos);
  }
}

TEST_CASE("activation dumps") {
  const auto data = five_examples();
  Checkpoint ck{helpers::random_model(small_config(6, 1).model, 2, 0.2), Vocabulary::scan_commands(),
                Vocabulary::scan_actions()};
  const auto dump = dump_activations(ck, data);
  REQUIRE(dump.size() == data.size());
  CHECK(dump.hidden_dim == 6);
  for (std::size_t e = 0; e < data.size(); ++e) {
    const auto tokens = ck.vocab_in.encode(data[e].command);
    CHECK(dump.examples[e].tokens == tokens);
    const auto want = oracle::encode(ck.model, tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t)
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(dump.examples[e].hidden[t][j] - want[t].h[j]) < 1e-12);
        CHECK(std::abs(dump.examples[e].cell[t][j] - want[t].c[j]) < 1e-12);
      }
  }
  const auto bytes = serialize_dump(dump);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "INCA");
  const auto back = deserialize_dump(bytes);
  CHECK(back.hidden_dim == dump.hidden_dim);
  for (std::size_t e = 0; e < dump.size(); ++e) {
    CHECK(back.examples[e].tokens == dump.examples[e].tokens);
    CHECK(back.examples[e].hidden == dump.examples[e].hidden);
    CHECK(back.examples[e].cell == dump.examples[e].cell);
  }
  CHECK(serialize_dump(back) == bytes);
  const auto path = helpers::temp_dir("dump") / "d.inca";
  save_dump(dump, path);
  CHECK(serialize_dump(load_dump(path)) == bytes);
  auto broken = bytes;
  broken.resize(bytes.size() / 2);
  CHECK_THROWS(deserialize_dump(broken));
}

}  // TEST_SUITE
