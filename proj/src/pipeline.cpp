#include "incrprobe/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include "incrprobe/error.hpp"
#include "incrprobe/rng.hpp"

namespace incrprobe {

namespace fs = std::filesystem;

Preset parse_preset(const std::string& name) {
  if (name == "desk") return Preset::desk;
  if (name == "full") return Preset::full;
  throw ConfigError("unknown preset '" + name + "' (expected desk or full)");
}

std::string to_string(Preset p) { return p == Preset::desk ? "desk" : "full"; }

PipelineConfig PipelineConfig::for_preset(Preset p) {
  PipelineConfig c;
  c.preset = p;
  c.train = p == Preset::desk ? TrainConfig::desk() : TrainConfig::full();
  return c;
}

void PipelineConfig::validate() const {
  train.validate();
  dc.validate();
  repsim.validate();
  if (architectures.empty()) throw ConfigError("no architectures selected");
  for (const auto& a : architectures) architecture(train.model, a);
}

void PipelineConfig::rebase(const fs::path& root) {
  for (fs::path* p : {&data_dir, &run_dir, &report_dir})
    if (p->is_relative()) *p = root / *p;
}

namespace metrics {

void to_json(nlohmann::json& j, const DcConfig& c) {
  j = nlohmann::json{{"k_top", c.k_top},
                     {"weighted", c.weighted},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"class_weighting", c.class_weighting},
                     {"train_fraction", c.train_fraction},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DcConfig& c) {
  c.k_top = j.value("k_top", c.k_top);
  c.weighted = j.value("weighted", c.weighted);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.class_weighting = j.value("class_weighting", c.class_weighting);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const RepSimConfig& c) {
  j = nlohmann::json{
      {"order", c.order}, {"n_hist", c.n_hist}, {"distance", to_string(c.distance)}};
}

void from_json(const nlohmann::json& j, RepSimConfig& c) {
  c.order = j.value("order", c.order);
  c.n_hist = j.value("n_hist", c.n_hist);
  if (j.contains("distance")) c.distance = parse_distance(j.at("distance").get<std::string>());
}

}  // namespace metrics

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json{{"preset", to_string(c.preset)},
                     {"data_dir", c.data_dir.string()},
                     {"run_dir", c.run_dir.string()},
                     {"report_dir", c.report_dir.string()},
                     {"train", c.train},
                     {"dc", c.dc},
                     {"repsim", c.repsim},
                     {"architectures", c.architectures},
                     {"metric_examples", c.metric_examples},
                     {"trace_commands", c.trace_commands}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
  if (j.contains("preset")) c = PipelineConfig::for_preset(parse_preset(j.at("preset").get<std::string>()));
  if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
  if (j.contains("run_dir")) c.run_dir = j.at("run_dir").get<std::string>();
  if (j.contains("report_dir")) c.report_dir = j.at("report_dir").get<std::string>();
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("dc")) from_json(j.at("dc"), c.dc);
  if (j.contains("repsim")) from_json(j.at("repsim"), c.repsim);
  if (j.contains("architectures")) c.architectures = j.at("architectures").get<std::vector<std::string>>();
  c.metric_examples = j.value("metric_examples", c.metric_examples);
  c.trace_commands = j.value("trace_commands", c.trace_commands);
}

nlohmann::json read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_seed_override(TrainConfig& c) {
  const char* env = std::getenv("INCRPROBE_SEED");
  if (env == nullptr || *env == '\0') return;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    c.base_seed = v;
  } catch (const std::logic_error&) {
    throw ConfigError(std::string("INCRPROBE_SEED is not an unsigned integer: ") + env);
  }
}

DataSplit generate_split(scan::SplitKind kind, std::uint64_t seed) {
  Rng rng(seed);
  auto split = scan::make_split(scan::enumerate_all(), kind, rng);
  return {std::move(split.train), std::move(split.test)};
}

DataSplit load_split(const fs::path& dir) {
  return {scan::load_official(dir / "train.txt"), scan::load_official(dir / "test.txt")};
}

void save_split(const DataSplit& split, const fs::path& dir) {
  fs::create_directories(dir);
  scan::save(split.train, dir / "train.txt");
  scan::save(split.test, dir / "test.txt");
}

std::vector<scan::Example> subsample(const std::vector<scan::Example>& data, std::size_t n,
                                     std::uint64_t seed) {
  if (n == 0 || n >= data.size()) return data;
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng = Rng(seed).derive(7);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<scan::Example> out;
  out.reserve(n);
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

SeedMetrics evaluate_checkpoint(const Checkpoint& ckpt, const ActivationDump& dump,
                                const std::string& arch, std::uint64_t seed, double seq_acc,
                                const metrics::DcConfig& dc, const metrics::RepSimConfig& repsim) {
  SeedMetrics out;
  out.report.arch = arch;
  out.report.seed = seed;
  out.report.seq_acc = seq_acc;

  const auto dcr = metrics::dc_accuracy(dump, dc);
  out.report.dc_acc = dcr.dc_acc;
  out.report.wdc_acc = dcr.wdc_acc;
  const auto ir = metrics::integration_ratio(ckpt.model, dump, false);
  const auto wir = metrics::integration_ratio(ckpt.model, dump, true);
  out.report.int_ratio = ir.value;
  out.report.weighted_int_ratio = wir.value;
  const auto rs = metrics::repr_similarity(dump, repsim);
  out.report.repr_sim = rs.value;

  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& p : dcr.probes)
    if (p.skipped)
      skipped.push_back({{"t", p.t}, {"t_prime", p.t_prime}, {"token", p.token}, {"reason", p.skip_reason}});
  nlohmann::json histories = nlohmann::json::array();
  for (const auto& g : rs.groups)
    histories.push_back({{"history", ckpt.vocab_in.decode(g.history)},
                         {"states", g.states.rows()},
                         {"mean_distance", g.mean_distance}});
  out.details = {{"examples", dump.size()},
                 {"dc", {{"probes", dcr.probes.size()}, {"skipped", skipped}}},
                 {"int_ratio",
                  {{"examples_used", ir.examples_used},
                   {"terms", ir.terms},
                   {"excluded_terms", ir.excluded_terms},
                   {"weighted_examples_used", wir.examples_used}}},
                 {"repr_sim", {{"histories", histories}}}};
  return out;
}

std::vector<scan::Example> trace_commands(const std::vector<scan::Example>& test, std::size_t n) {
  std::vector<const scan::Example*> inner, any;
  for (const auto& e : test) {
    const auto it = std::find(e.command.begin(), e.command.end(), "after");
    if (it == e.command.end()) continue;
    any.push_back(&e);
    const auto p = static_cast<std::size_t>(it - e.command.begin()) + 1;
    if (p >= 3 && p + 1 <= e.command.size()) inner.push_back(&e);
  }
  const auto& pool = inner.empty() ? any : inner;
  std::vector<scan::Example> out;
  if (n == 0 || pool.empty()) return out;
  const std::size_t take = std::min(n, pool.size());
  for (std::size_t i = 0; i < take; ++i) out.push_back(*pool[i * pool.size() / take]);
  return out;
}

std::vector<analysis::TraceRecord> build_traces(const std::string& arch,
                                                const std::vector<Checkpoint>& checkpoints,
                                                const std::vector<scan::Example>& commands) {
  std::vector<analysis::TraceRecord> out;
  if (checkpoints.empty()) return out;
  for (const auto& cmd : commands) {
    std::vector<std::vector<std::pair<std::size_t, double>>> traces;
    std::vector<scan::Tokens> decodings;
    for (const auto& ckpt : checkpoints) {
      const auto src = ckpt.vocab_in.encode(cmd.command);
      traces.push_back(metrics::integration_trace(ckpt.model, ckpt.model.encode(src)));
      decodings.push_back(ckpt.vocab_out.decode(ckpt.model.greedy_decode(src).tokens));
    }
    auto rec = analysis::summarize_traces(arch, cmd.command, traces);
    rec.majority_decoding = analysis::majority_vote(decodings);
    rec.target = cmd.actions;
    out.push_back(std::move(rec));
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

nlohmann::json without_jobs(nlohmann::json j) {
  j.erase("jobs");
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return {};
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path metrics_path(const fs::path& arch_dir, std::uint64_t seed) {
  return arch_dir / ("seed_" + std::to_string(seed) + ".metrics.json");
}

std::string metrics_hash(const PipelineConfig& cfg, const RunManifest& m, std::uint64_t seed) {
  return config_hash({{"train", m.config_hash},
                      {"seed", seed},
                      {"dc", cfg.dc},
                      {"repsim", cfg.repsim},
                      {"metric_examples", cfg.metric_examples}});
}

bool manifest_matches(const fs::path& dir, const TrainConfig& train, const std::string& arch) {
  if (!fs::exists(dir / "manifest.json")) return false;
  try {
    const auto m = load_manifest(dir / "manifest.json");
    TrainConfig expected = train;
    expected.model = architecture(train.model, arch);
    if (without_jobs(m.config) != without_jobs(nlohmann::json(expected))) return false;
    for (const auto& r : m.runs)
      if (!r.ok || !fs::exists(dir / r.checkpoint)) return false;
    return true;
  } catch (const Error&) {
    return false;
  }
}

// Loads cached per-seed metrics or computes them (when test data is given).
std::vector<metrics::MetricReport> seed_metrics(const PipelineConfig& cfg, const std::string& arch,
                                                const std::vector<scan::Example>& test, bool force,
                                                std::ostream& log) {
  const fs::path dir = cfg.run_dir / arch;
  const auto manifest = load_manifest(dir / "manifest.json");
  const auto subset = subsample(test, cfg.metric_examples, cfg.train.base_seed);
  std::vector<metrics::MetricReport> out;
  for (const auto& run : manifest.runs) {
    if (!run.ok) {
      log << "  " << arch << " seed " << run.seed << ": skipped (training failed: " << run.error << ")\n";
      continue;
    }
    const fs::path mpath = metrics_path(dir, run.seed);
    const std::string hash = metrics_hash(cfg, manifest, run.seed);
    if (!force && fs::exists(mpath)) {
      const auto j = nlohmann::json::parse(read_text(mpath));
      if (j.value("hash", std::string()) == hash || test.empty()) {
        out.push_back(j.at("report").get<metrics::MetricReport>());
        continue;
      }
    }
    if (test.empty()) {
      throw IoError("no metrics for " + arch + " seed " + std::to_string(run.seed) +
                    " and no test data to compute them");
    }
    const auto start = Clock::now();
    const Checkpoint ckpt = load_checkpoint(dir / run.checkpoint);
    const ActivationDump dump = dump_activations(ckpt, subset);
    save_dump(dump, dir / ("seed_" + std::to_string(run.seed) + ".inca"));
    auto sm = evaluate_checkpoint(ckpt, dump, arch, run.seed, run.test_sequence_accuracy, cfg.dc,
                                  cfg.repsim);
    sm.report.validate();
    write_text(mpath, nlohmann::json{{"hash", hash}, {"report", sm.report}, {"details", sm.details}}
                          .dump(2) + "\n");
    log << "  " << arch << " seed " << run.seed << ": " << nlohmann::json(sm.report).dump() << " ("
        << seconds_since(start) << " s)\n";
    out.push_back(sm.report);
  }
  return out;
}

std::vector<metrics::MetricReport> report_impl(const PipelineConfig& cfg,
                                               const std::vector<scan::Example>& test,
                                               const fs::path& out_dir, bool force,
                                               std::ostream& log) {
  std::vector<metrics::MetricReport> reports;
  std::vector<analysis::TraceRecord> traces;
  const auto commands = trace_commands(test, cfg.trace_commands);
  for (const auto& arch : cfg.architectures) {
    const fs::path dir = cfg.run_dir / arch;
    if (!fs::exists(dir / "manifest.json")) throw IoError("missing " + (dir / "manifest.json").string());
    auto r = seed_metrics(cfg, arch, test, force, log);
    reports.insert(reports.end(), r.begin(), r.end());
    if (commands.empty()) continue;
    std::vector<Checkpoint> ckpts;
    for (const auto& run : load_manifest(dir / "manifest.json").runs)
      if (run.ok) ckpts.push_back(load_checkpoint(dir / run.checkpoint));
    auto t = build_traces(arch, ckpts, commands);
    traces.insert(traces.end(), t.begin(), t.end());
  }
  const auto matrix = analysis::correlation_matrix(reports);
  analysis::emit_report(reports, matrix, traces, out_dir);
  log << "wrote " << (out_dir / "metrics.csv").string() << ", correlations.csv, traces.json\n";
  return reports;
}

}  // namespace

std::vector<metrics::MetricReport> build_report(const PipelineConfig& cfg,
                                                const std::vector<scan::Example>& test,
                                                const fs::path& out_dir, std::ostream& log) {
  return report_impl(cfg, test, out_dir, false, log);
}

PipelineStatus run_pipeline(const PipelineConfig& cfg, bool force, std::ostream& log) {
  cfg.validate();
  nlohmann::json cfg_json = cfg;
  cfg_json["train"] = without_jobs(cfg_json["train"]);
  const std::string hash = config_hash(cfg_json);
  const fs::path stage_file = cfg.run_dir / "STAGE";
  const fs::path done_file = cfg.run_dir / "pipeline.json";
  fs::create_directories(cfg.run_dir);

  const bool reports_present = fs::exists(cfg.report_dir / "metrics.csv") &&
                               fs::exists(cfg.report_dir / "correlations.csv") &&
                               fs::exists(cfg.report_dir / "traces.json");
  if (!force && reports_present && read_text(stage_file) == "complete\n" && fs::exists(done_file)) {
    const auto done = nlohmann::json::parse(read_text(done_file));
    if (done.value("config_hash", std::string()) == hash) {
      log << "outputs exist in " << cfg.report_dir.string() << " (config " << hash
          << "); use --force to recompute\n";
      return PipelineStatus::outputs_exist;
    }
  }

  std::string stage;
  auto enter = [&](const std::string& name) {
    stage = name;
    write_text(stage_file, name + "\n");
    log << "[" << name << "]\n";
  };
  try {
    enter("generate-data");
    DataSplit data;
    const nlohmann::json split_meta{{"split", scan::to_string(cfg.train.split)},
                                    {"seed", cfg.train.base_seed}};
    const fs::path meta_path = cfg.data_dir / "split.json";
    if (!force && fs::exists(cfg.data_dir / "train.txt") && fs::exists(cfg.data_dir / "test.txt") &&
        fs::exists(meta_path) && nlohmann::json::parse(read_text(meta_path)) == split_meta) {
      data = load_split(cfg.data_dir);
      log << "  reusing " << cfg.data_dir.string() << "\n";
    } else {
      data = generate_split(cfg.train.split, cfg.train.base_seed);
      save_split(data, cfg.data_dir);
      write_text(meta_path, split_meta.dump(2) + "\n");
    }
    log << "  train " << data.train.size() << ", test " << data.test.size() << " examples\n";

    enter("train");
    for (const auto& arch : cfg.architectures) {
      const fs::path dir = cfg.run_dir / arch;
      if (!force && manifest_matches(dir, cfg.train, arch)) {
        log << "  " << arch << ": reusing " << (dir / "manifest.json").string() << "\n";
        continue;
      }
      const auto start = Clock::now();
      log << "  " << arch << ": " << cfg.train.n_seeds << " seeds x " << cfg.train.epochs
          << " epochs" << std::endl;
      const auto manifest = train_suite(cfg.train, arch, data.train, data.test, dir);
      std::size_t failed = 0;
      for (const auto& r : manifest.runs) {
        if (r.ok) {
          log << "    seed " << r.seed << ": loss " << r.first_epoch_loss << " -> "
              << r.final_train_loss << ", test seq acc " << r.test_sequence_accuracy << "\n";
        } else {
          ++failed;
          log << "    seed " << r.seed << ": FAILED " << r.error << "\n";
        }
      }
      log << "  " << arch << " done in " << seconds_since(start) << " s" << std::endl;
      if (failed > 0) throw NumericError(std::to_string(failed) + " " + arch + " seed(s) failed");
    }

    enter("metrics");
    for (const auto& arch : cfg.architectures) seed_metrics(cfg, arch, data.test, force, log);

    enter("report");
    report_impl(cfg, data.test, cfg.report_dir, false, log);

    write_text(done_file, nlohmann::json{{"config_hash", hash}, {"config", cfg}}.dump(2) + "\n");
    write_text(stage_file, "complete\n");
    return PipelineStatus::completed;
  } catch (const std::exception& e) {
    write_text(stage_file, stage + " failed: " + e.what() + "\n");
    throw;
  }
}

}  // namespace incrprobe
