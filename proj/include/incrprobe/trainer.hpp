#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "incrprobe/model.hpp"
#include "incrprobe/scan.hpp"

namespace incrprobe {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 0.001;
  std::size_t batch_size = 128;
  std::size_t n_seeds = 15;
  std::uint64_t base_seed = 1;
  ModelConfig model;
  scan::SplitKind split = scan::SplitKind::add_prim_jump;
  std::size_t jobs = 0;  // 0 = all available workers

  void validate() const;

  /// Exact training setup of the reference experiments: 128/128, 50 epochs,
  /// 15 seeds, lr 0.001, batch 128.
  static TrainConfig full();
  /// Reduced setup for routine runs: hidden 64, 5 seeds, 25 epochs.
  static TrainConfig desk();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// FNV-1a 64 of the canonical JSON text, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

struct TrainStats {
  std::vector<double> epoch_losses;  // mean total loss per epoch
  double wall_seconds = 0.0;
};

using ProgressFn = std::function<void(std::size_t epoch, double mean_loss)>;

/// epochs × ⌈N/batch⌉ AMSGrad steps with a seeded per-epoch shuffle. Throws
/// NumericError naming epoch and batch on a non-finite loss.
Checkpoint train_model(const std::vector<scan::Example>& train_set, const TrainConfig& config,
                       std::uint64_t seed, TrainStats* stats = nullptr,
                       const ProgressFn& progress = {});

/// Fraction of examples whose greedy decoding equals the target exactly.
double sequence_accuracy(const Checkpoint& ckpt, const std::vector<scan::Example>& examples,
                         std::size_t max_len = 64);

std::vector<DecodeResult> decode_all(const Checkpoint& ckpt,
                                     const std::vector<scan::Example>& examples,
                                     std::size_t max_len = 64);

struct SeedRun {
  std::uint64_t seed = 0;
  std::string checkpoint;  // relative to the manifest directory
  double final_train_loss = 0.0;
  double first_epoch_loss = 0.0;
  double test_sequence_accuracy = 0.0;
  double wall_seconds = 0.0;
  bool ok = false;
  std::string error;
};

struct RunManifest {
  std::string arch;
  std::string config_hash;
  nlohmann::json config;
  std::vector<SeedRun> runs;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const RunManifest& m, const std::filesystem::path& path);

/// Trains seeds base_seed .. base_seed+n−1 (in parallel, at most config.jobs
/// at once), writes seed_<k>.ckpt files and manifest.json into out_dir.
/// A failing seed is recorded and the others proceed.
RunManifest train_suite(const TrainConfig& config, const std::string& arch,
                        const std::vector<scan::Example>& train_set,
                        const std::vector<scan::Example>& test_set,
                        const std::filesystem::path& out_dir);

/// Shorthand for configs of the two reference architectures.
ModelConfig architecture(const ModelConfig& base, const std::string& arch);

}  // namespace incrprobe
