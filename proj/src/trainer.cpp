#include "incrprobe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "incrprobe/error.hpp"
#include "incrprobe/kernels.hpp"

namespace incrprobe {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a positive finite number");
  model.validate();
}

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.model.embedding_dim = 128;
  c.model.hidden_dim = 128;
  c.model.vocab_in = Vocabulary::scan_commands().size();
  c.model.vocab_out = Vocabulary::scan_actions().size();
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c = full();
  c.model.embedding_dim = 64;
  c.model.hidden_dim = 64;
  c.n_seeds = 5;
  c.epochs = 25;
  return c;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},         {"lr", c.lr},
                     {"batch_size", c.batch_size}, {"n_seeds", c.n_seeds},
                     {"base_seed", c.base_seed},   {"model", c.model},
                     {"split", std::string(scan::to_string(c.split))}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.n_seeds = j.value("n_seeds", c.n_seeds);
  c.base_seed = j.value("base_seed", c.base_seed);
  if (j.contains("model")) {
    ModelConfig m = c.model;
    from_json(j.at("model"), m);
    c.model = m;
  }
  if (j.contains("split")) c.split = scan::parse_split_kind(j.at("split").get<std::string>());
  c.jobs = j.value("jobs", c.jobs);
}

std::string config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

ModelConfig architecture(const ModelConfig& base, const std::string& arch) {
  ModelConfig m = base;
  if (arch == "vanilla") {
    if (m.mask != MaskMode::none) throw ConfigError("attention masks need --arch attention");
    m.attention = false;
  } else if (arch == "attention") {
    m.attention = true;
  } else {
    throw ConfigError("unknown architecture '" + arch + "' (expected vanilla or attention)");
  }
  return m;
}

Checkpoint train_model(const std::vector<scan::Example>& train_set, const TrainConfig& config,
                       std::uint64_t seed, TrainStats* stats, const ProgressFn& progress) {
  config.validate();
  if (train_set.empty()) throw DomainError("empty training set");
  const auto start = std::chrono::steady_clock::now();
  Checkpoint ckpt{Seq2Seq(config.model), Vocabulary::scan_commands(), Vocabulary::scan_actions()};
  if (ckpt.vocab_in.size() != config.model.vocab_in ||
      ckpt.vocab_out.size() != config.model.vocab_out) {
    throw ConfigError("model vocabulary sizes do not match the SCAN vocabularies");
  }
  const Rng root(seed);
  Rng init_rng = root.derive(1);
  Rng shuffle_rng = root.derive(2);
  ckpt.model.initialize(init_rng);
  const auto params = ckpt.model.parameters();
  const AdamConfig adam{config.lr};

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  TrainStats local;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const scan::Example*> chunk;
      for (std::size_t i = begin; i < end; ++i) chunk.push_back(&train_set[order[i]]);
      const Batch b = make_batch(chunk, ckpt.vocab_in, ckpt.vocab_out);
      const std::string where =
          "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);
      ad::Tape tape;
      double value = 0.0;
      try {
        const auto loss = ckpt.model.batch_loss(tape, b);
        value = tape.value(loss.total)[0];
        if (!std::isfinite(value)) throw NumericError("non-finite loss at " + where);
        tape.backward(loss.total);
        adam_amsgrad_step(params, adam);
      } catch (const NumericError& e) {
        if (std::string_view(e.what()).ends_with(where)) throw;
        throw NumericError(std::string(e.what()) + " (non-finite values at " + where + ")");
      }
      loss_sum += value * static_cast<double>(b.size);
    }
    local.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
    if (progress) progress(epoch, local.epoch_losses.back());
  }
  local.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ckpt.extra = {{"seed", seed}, {"epochs", config.epochs}};
  if (stats != nullptr) *stats = std::move(local);
  return ckpt;
}

std::vector<DecodeResult> decode_all(const Checkpoint& ckpt,
                                     const std::vector<scan::Example>& examples,
                                     std::size_t max_len) {
  constexpr std::size_t kChunk = 256;
  std::vector<DecodeResult> out(examples.size());
  const long chunks = static_cast<long>((examples.size() + kChunk - 1) / kChunk);
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < chunks; ++k) {
    const std::size_t begin = static_cast<std::size_t>(k) * kChunk;
    const std::size_t end = std::min(examples.size(), begin + kChunk);
    std::vector<std::vector<std::size_t>> srcs;
    for (std::size_t i = begin; i < end; ++i) srcs.push_back(ckpt.vocab_in.encode(examples[i].command));
    auto results = ckpt.model.greedy_decode_batch(srcs, max_len);
    std::move(results.begin(), results.end(), out.begin() + static_cast<long>(begin));
  }
  return out;
}

double sequence_accuracy(const Checkpoint& ckpt, const std::vector<scan::Example>& examples,
                         std::size_t max_len) {
  if (examples.empty()) throw DomainError("sequence accuracy of an empty test set");
  const auto decoded = decode_all(ckpt, examples, max_len);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!decoded[i].truncated && decoded[i].tokens == ckpt.vocab_out.encode(examples[i].actions)) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

void to_json(nlohmann::json& j, const RunManifest& m) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : m.runs) {
    runs.push_back({{"seed", r.seed},
                    {"checkpoint", r.checkpoint},
                    {"final_train_loss", r.final_train_loss},
                    {"first_epoch_loss", r.first_epoch_loss},
                    {"test_sequence_accuracy", r.test_sequence_accuracy},
                    {"wall_seconds", r.wall_seconds},
                    {"ok", r.ok},
                    {"error", r.error}});
  }
  j = nlohmann::json{
      {"arch", m.arch}, {"config_hash", m.config_hash}, {"config", m.config}, {"runs", runs}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  m.arch = j.at("arch").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.config = j.at("config");
  if (config_hash(m.config) != m.config_hash) {
    throw ParseError("manifest config hash does not match its stored config");
  }
  m.runs.clear();
  for (const auto& r : j.at("runs")) {
    SeedRun s;
    s.seed = r.at("seed").get<std::uint64_t>();
    s.checkpoint = r.at("checkpoint").get<std::string>();
    s.final_train_loss = r.at("final_train_loss").get<double>();
    s.first_epoch_loss = r.value("first_epoch_loss", 0.0);
    s.test_sequence_accuracy = r.at("test_sequence_accuracy").get<double>();
    s.wall_seconds = r.at("wall_seconds").get<double>();
    s.ok = r.at("ok").get<bool>();
    s.error = r.value("error", "");
    m.runs.push_back(s);
  }
}

RunManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in).get<RunManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_manifest(const RunManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
}

RunManifest train_suite(const TrainConfig& config, const std::string& arch,
                        const std::vector<scan::Example>& train_set,
                        const std::vector<scan::Example>& test_set,
                        const std::filesystem::path& out_dir) {
  TrainConfig cfg = config;
  cfg.model = architecture(config.model, arch);
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  RunManifest manifest;
  manifest.arch = arch;
  manifest.config = cfg;
  manifest.config_hash = config_hash(manifest.config);
  manifest.runs.resize(cfg.n_seeds);
  const int workers = static_cast<int>(cfg.jobs == 0 ? static_cast<std::size_t>(kernels::max_threads())
                                                     : cfg.jobs);
  const long n = static_cast<long>(cfg.n_seeds);
#pragma omp parallel for schedule(dynamic) num_threads(workers)
  for (long k = 0; k < n; ++k) {
    SeedRun& run = manifest.runs[static_cast<std::size_t>(k)];
    run.seed = cfg.base_seed + static_cast<std::uint64_t>(k);
    run.checkpoint = "seed_" + std::to_string(run.seed) + ".ckpt";
    try {
      TrainStats stats;
      const Checkpoint ckpt = train_model(train_set, cfg, run.seed, &stats);
      save_checkpoint(ckpt, out_dir / run.checkpoint);
      run.first_epoch_loss = stats.epoch_losses.front();
      run.final_train_loss = stats.epoch_losses.back();
      run.test_sequence_accuracy = test_set.empty() ? 0.0 : sequence_accuracy(ckpt, test_set);
      run.wall_seconds = stats.wall_seconds;
      run.ok = true;
    } catch (const std::exception& e) {
      run.ok = false;
      run.error = e.what();
    }
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace incrprobe
