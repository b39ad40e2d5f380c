// incrprobe: data generation, training, probing and reporting.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "incrprobe/error.hpp"
#include "incrprobe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace incrprobe;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Preset defaults, then the config file (either a full pipeline config or a
// bare training config), then INCRPROBE_SEED.
PipelineConfig resolve_config(const std::string& config_path, const std::string& preset_flag,
                              Preset fallback) {
  std::optional<json> file;
  if (!config_path.empty()) file = read_config_file(config_path);
  Preset preset = fallback;
  if (!preset_flag.empty()) {
    preset = parse_preset(preset_flag);
  } else if (file && file->contains("preset")) {
    preset = parse_preset(file->at("preset").get<std::string>());
  }
  PipelineConfig cfg = PipelineConfig::for_preset(preset);
  if (file) {
    json j = *file;
    if (!j.is_object()) throw ConfigError(config_path + ": expected a JSON object");
    j.erase("preset");
    if (j.contains("train") || j.contains("dc") || j.contains("repsim") || j.contains("run_dir")) {
      from_json(j, cfg);
    } else {
      from_json(j, cfg.train);
    }
  }
  apply_seed_override(cfg.train);
  return cfg;
}

void print_config(const std::string& command, const json& resolved) {
  std::cout << command << " config (hash " << config_hash(resolved) << "):\n"
            << resolved.dump(2) << std::endl;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct Common {
  std::string config;
  std::string preset;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incrementality probes for sequence-to-sequence models on SCAN"};
  app.require_subcommand(1);

  // generate-data
  Common gd_common;
  std::string gd_split, gd_out = "data";
  bool gd_force = false;
  auto* gd = app.add_subcommand("generate-data", "Write train.txt and test.txt of a SCAN split");
  gd->add_option("--config", gd_common.config, "JSON config file");
  gd->add_option("--split", gd_split, "add_prim_jump | add_prim_turn_left | random");
  gd->add_option("--out", gd_out, "Output directory");
  gd->add_flag("--force", gd_force, "Overwrite existing files");

  // train
  Common tr_common;
  std::string tr_arch, tr_mask, tr_out, tr_data;
  std::optional<double> tr_anticipation;
  std::optional<std::size_t> tr_seeds, tr_epochs, tr_jobs;
  bool tr_force = false;
  auto* tr = app.add_subcommand("train", "Train one architecture over several seeds");
  tr->add_option("--config", tr_common.config, "JSON config file");
  tr->add_option("--preset", tr_common.preset, "desk | full (default full)");
  tr->add_option("--arch", tr_arch, "vanilla | attention")->required();
  tr->add_option("--mask", tr_mask, "none | causal | local:<w>");
  tr->add_option("--anticipation", tr_anticipation, "Anticipation loss weight (head enabled when > 0)");
  tr->add_option("--seeds", tr_seeds, "Number of seeds");
  tr->add_option("--epochs", tr_epochs, "Training epochs");
  tr->add_option("--jobs", tr_jobs, "Parallel seeds (0 = all cores)");
  tr->add_option("--data", tr_data, "Directory with train.txt/test.txt (default: generate the split)");
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_flag("--force", tr_force, "Retrain even if a matching manifest exists");

  // eval
  Common ev_common;
  std::string ev_ckpt, ev_data, ev_dump, ev_out;
  std::size_t ev_max = 0;
  auto* ev = app.add_subcommand("eval", "Sequence accuracy of a checkpoint; optionally dump activations");
  ev->add_option("--config", ev_common.config, "JSON config file");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "SCAN text file")->required();
  ev->add_option("--dump", ev_dump, "Write the encoder activation dump here");
  ev->add_option("--max-examples", ev_max, "Evaluate a deterministic subset (0 = all)");
  ev->add_option("--out", ev_out, "Write a JSON result here");

  // probe
  Common pr_common;
  std::string pr_dump, pr_ckpt, pr_metric = "all", pr_out, pr_distance;
  bool pr_weighted = false;
  std::optional<std::size_t> pr_order, pr_top_k;
  auto* pr = app.add_subcommand("probe", "Incrementality metrics over an activation dump");
  pr->add_option("--config", pr_common.config, "JSON config file");
  pr->add_option("--dump", pr_dump, "Activation dump")->required();
  pr->add_option("--checkpoint", pr_ckpt, "Checkpoint (needed for intratio)");
  pr->add_option("--metric", pr_metric, "dc | intratio | repsim | all")
      ->check(CLI::IsMember({"dc", "intratio", "repsim", "all"}));
  pr->add_flag("--weighted", pr_weighted, "Also report the distance/position weighted variants");
  pr->add_option("--order", pr_order, "History length for repsim");
  pr->add_option("--top-k", pr_top_k, "Probed tokens per position pair");
  pr->add_option("--distance", pr_distance, "euclidean | cosine");
  pr->add_option("--out", pr_out, "Report JSON")->required();

  // report
  Common rp_common;
  std::string rp_runs, rp_out, rp_data;
  auto* rp = app.add_subcommand("report", "Correlations, metric table and traces over trained runs");
  rp->add_option("--config", rp_common.config, "JSON config file");
  rp->add_option("--runs", rp_runs, "Run directory holding <arch>/manifest.json")->required();
  rp->add_option("--out", rp_out, "Report directory")->required();
  rp->add_option("--data", rp_data, "Directory with test.txt (needed for missing metrics and traces)");

  // pipeline
  Common pl_common;
  std::string pl_workdir = "incrprobe-out";
  std::optional<std::size_t> pl_jobs;
  bool pl_force = false;
  auto* pl = app.add_subcommand("pipeline", "Generate data, train both architectures, probe, report");
  pl->add_option("--config", pl_common.config, "JSON config file");
  pl->add_option("--preset", pl_common.preset, "desk | full (default desk)");
  pl->add_option("--workdir", pl_workdir, "Root for relative data/run/report paths");
  pl->add_option("--jobs", pl_jobs, "Parallel seeds (0 = all cores)");
  pl->add_flag("--force", pl_force, "Recompute existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gd) {
      PipelineConfig cfg = resolve_config(gd_common.config, "", Preset::full);
      if (!gd_split.empty()) cfg.train.split = scan::parse_split_kind(gd_split);
      print_config("generate-data", {{"split", scan::to_string(cfg.train.split)},
                                     {"seed", cfg.train.base_seed},
                                     {"out", gd_out}});
      const fs::path out = gd_out;
      if (!gd_force && fs::exists(out / "train.txt") && fs::exists(out / "test.txt")) {
        std::cout << "outputs exist in " << out.string() << "; use --force to overwrite\n";
        return 0;
      }
      const auto split = generate_split(cfg.train.split, cfg.train.base_seed);
      save_split(split, out);
      std::cout << "wrote " << split.train.size() << " train and " << split.test.size()
                << " test examples to " << out.string() << "\n";
      return 0;
    }

    if (*tr) {
      PipelineConfig pcfg = resolve_config(tr_common.config, tr_common.preset, Preset::full);
      TrainConfig& cfg = pcfg.train;
      if (!tr_mask.empty()) cfg.model.set_mask(tr_mask);
      if (tr_anticipation) cfg.model.anticipation_weight = *tr_anticipation;
      if (tr_seeds) cfg.n_seeds = *tr_seeds;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (tr_jobs) cfg.jobs = *tr_jobs;
      cfg.model = architecture(cfg.model, tr_arch);
      cfg.validate();
      print_config("train", cfg);
      const fs::path out = tr_out;
      if (!tr_force && fs::exists(out / "manifest.json")) {
        const auto m = load_manifest(out / "manifest.json");
        if (m.config_hash == config_hash(cfg)) {
          std::cout << "outputs exist in " << out.string() << "; use --force to retrain\n";
          return 0;
        }
      }
      const DataSplit data =
          tr_data.empty() ? generate_split(cfg.split, cfg.base_seed) : load_split(tr_data);
      std::cout << "training on " << data.train.size() << " examples" << std::endl;
      const auto manifest = train_suite(cfg, tr_arch, data.train, data.test, out);
      int failed = 0;
      for (const auto& r : manifest.runs) {
        if (r.ok) {
          std::cout << "seed " << r.seed << ": loss " << r.first_epoch_loss << " -> "
                    << r.final_train_loss << ", test seq acc " << r.test_sequence_accuracy << ", "
                    << r.wall_seconds << " s\n";
        } else {
          ++failed;
          std::cerr << "seed " << r.seed << " failed: " << r.error << "\n";
        }
      }
      return failed == 0 ? 0 : kExitRuntime;
    }

    if (*ev) {
      const PipelineConfig pcfg = resolve_config(ev_common.config, "", Preset::full);
      print_config("eval", {{"checkpoint", ev_ckpt},
                            {"data", ev_data},
                            {"max_examples", ev_max},
                            {"seed", pcfg.train.base_seed}});
      const Checkpoint ckpt = load_checkpoint(ev_ckpt);
      const auto data = subsample(scan::load_official(ev_data), ev_max, pcfg.train.base_seed);
      const double acc = sequence_accuracy(ckpt, data);
      std::cout << "sequence accuracy: " << acc << " over " << data.size() << " examples\n";
      if (!ev_dump.empty()) {
        save_dump(dump_activations(ckpt, data), ev_dump);
        std::cout << "wrote " << ev_dump << "\n";
      }
      if (!ev_out.empty()) write_json(ev_out, {{"seq_acc", acc}, {"examples", data.size()}});
      return 0;
    }

    if (*pr) {
      PipelineConfig pcfg = resolve_config(pr_common.config, "", Preset::full);
      if (pr_order) pcfg.repsim.order = *pr_order;
      if (pr_top_k) pcfg.dc.k_top = *pr_top_k;
      if (!pr_distance.empty()) pcfg.repsim.distance = metrics::parse_distance(pr_distance);
      pcfg.dc.validate();
      pcfg.repsim.validate();
      const bool want_ir = pr_metric == "intratio" || pr_metric == "all";
      if (want_ir && pr_ckpt.empty()) throw UsageError("--metric " + pr_metric + " needs --checkpoint");
      print_config("probe", {{"dump", pr_dump},
                             {"checkpoint", pr_ckpt},
                             {"metric", pr_metric},
                             {"weighted", pr_weighted},
                             {"dc", pcfg.dc},
                             {"repsim", pcfg.repsim}});
      const ActivationDump dump = load_dump(pr_dump);
      json values = json::object(), details = json::object();
      if (pr_metric == "dc" || pr_metric == "all") {
        const auto r = metrics::dc_accuracy(dump, pcfg.dc);
        values["dc_acc"] = r.dc_acc;
        if (pr_weighted) values["wdc_acc"] = r.wdc_acc;
        details["dc"] = {{"probes", r.probes.size()}, {"skipped", r.n_skipped}};
      }
      if (want_ir) {
        const Checkpoint ckpt = load_checkpoint(pr_ckpt);
        if (ckpt.model.config().hidden_dim != dump.hidden_dim)
          throw DimensionError("dump hidden size does not match the checkpoint");
        const auto r = metrics::integration_ratio(ckpt.model, dump, false);
        values["int_ratio"] = r.value;
        details["int_ratio"] = {{"terms", r.terms}, {"excluded_terms", r.excluded_terms}};
        if (pr_weighted) values["weighted_int_ratio"] = metrics::integration_ratio(ckpt.model, dump, true).value;
      }
      if (pr_metric == "repsim" || pr_metric == "all") {
        const auto r = metrics::repr_similarity(dump, pcfg.repsim);
        values["repr_sim"] = r.value;
        details["repr_sim"] = {{"histories", r.groups.size()}};
      }
      write_json(pr_out, {{"metrics", values}, {"details", details}});
      std::cout << values.dump() << "\n";
      return 0;
    }

    if (*rp) {
      PipelineConfig cfg = resolve_config(rp_common.config, "", Preset::desk);
      cfg.run_dir = rp_runs;
      cfg.report_dir = rp_out;
      print_config("report", cfg);
      std::vector<scan::Example> test;
      if (!rp_data.empty()) test = scan::load_official(fs::path(rp_data) / "test.txt");
      build_report(cfg, test, rp_out, std::cout);
      return 0;
    }

    if (*pl) {
      PipelineConfig cfg = resolve_config(pl_common.config, pl_common.preset, Preset::desk);
      if (pl_jobs) cfg.train.jobs = *pl_jobs;
      cfg.rebase(pl_workdir);
      cfg.validate();
      print_config("pipeline", cfg);
      run_pipeline(cfg, pl_force, std::cout);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
