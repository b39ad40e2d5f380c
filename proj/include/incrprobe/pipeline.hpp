#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "incrprobe/analysis.hpp"
#include "incrprobe/metrics.hpp"
#include "incrprobe/trainer.hpp"

namespace incrprobe {

namespace metrics {
void to_json(nlohmann::json& j, const DcConfig& c);
void from_json(const nlohmann::json& j, DcConfig& c);
void to_json(nlohmann::json& j, const RepSimConfig& c);
void from_json(const nlohmann::json& j, RepSimConfig& c);
}  // namespace metrics

enum class Preset { desk, full };
Preset parse_preset(const std::string& name);
std::string to_string(Preset p);

struct PipelineConfig {
  Preset preset = Preset::desk;
  std::filesystem::path data_dir = "data";
  std::filesystem::path run_dir = "runs";
  std::filesystem::path report_dir = "report";
  TrainConfig train = TrainConfig::desk();
  metrics::DcConfig dc;
  metrics::RepSimConfig repsim;
  std::vector<std::string> architectures{"vanilla", "attention"};
  std::size_t metric_examples = 2000;  // test examples dumped per model; 0 = all
  std::size_t trace_commands = 6;      // "X after Y" commands traced in the report

  static PipelineConfig for_preset(Preset p);
  void validate() const;
  /// Relative paths are resolved against `root`.
  void rebase(const std::filesystem::path& root);
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
/// Missing keys keep the values already in `c` (preset defaults).
void from_json(const nlohmann::json& j, PipelineConfig& c);

/// Reads a JSON config file. Throws UsageError when it does not exist.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Applies INCRPROBE_SEED, when set, to the base seed.
void apply_seed_override(TrainConfig& c);

struct DataSplit {
  std::vector<scan::Example> train;
  std::vector<scan::Example> test;
};

DataSplit generate_split(scan::SplitKind kind, std::uint64_t seed);
DataSplit load_split(const std::filesystem::path& dir);
void save_split(const DataSplit& split, const std::filesystem::path& dir);

/// Deterministic subset of at most n examples (all when n is 0 or ≥ size),
/// keeping the original order.
std::vector<scan::Example> subsample(const std::vector<scan::Example>& data, std::size_t n,
                                     std::uint64_t seed);

/// All metric values of one trained model plus diagnostic details.
struct SeedMetrics {
  metrics::MetricReport report;
  nlohmann::json details;
};

SeedMetrics evaluate_checkpoint(const Checkpoint& ckpt, const ActivationDump& dump,
                                const std::string& arch, std::uint64_t seed, double seq_acc,
                                const metrics::DcConfig& dc, const metrics::RepSimConfig& repsim);

/// Test commands of the form "X after Y" with "after" strictly inside the
/// trace range, evenly spread over the candidates.
std::vector<scan::Example> trace_commands(const std::vector<scan::Example>& test, std::size_t n);

/// Traces of each command under every seed of one architecture, with the
/// majority-vote decoding.
std::vector<analysis::TraceRecord> build_traces(const std::string& arch,
                                                const std::vector<Checkpoint>& checkpoints,
                                                const std::vector<scan::Example>& commands);

/// Gathers per-seed metric files under run_dir/<arch>/ (computing missing
/// ones when `test` is non-empty), then writes the report files.
std::vector<metrics::MetricReport> build_report(const PipelineConfig& cfg,
                                                const std::vector<scan::Example>& test,
                                                const std::filesystem::path& out_dir,
                                                std::ostream& log);

enum class PipelineStatus { completed, outputs_exist };

/// generate-data → train → dump → metrics → report. Existing stage outputs
/// with a matching config hash are reused; `force` recomputes everything.
/// The stage in progress is recorded in run_dir/STAGE.
PipelineStatus run_pipeline(const PipelineConfig& cfg, bool force, std::ostream& log);

}  // namespace incrprobe
