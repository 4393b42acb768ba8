// detkit command-line front end: synthesize datasets, train in every
// ablation mode, run inference, and analyze dumps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "detkit/detkit.hpp"

namespace fs = std::filesystem;
using namespace detkit;

namespace {

constexpr const char* kVersion = "detkit 1.0.0";

bool log_enabled() {
  const char* v = std::getenv("DETKIT_LOG");
  return v && *v && std::string(v) != "0" && std::string(v) != "off";
}

void log_line(const std::string& msg) {
  if (log_enabled()) std::cerr << "[detkit] " << msg << "\n";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// Flag values shared across subcommands; each is applied only when its flag
// was actually given.
struct Overrides {
  std::uint64_t seed = 0;
  int workers = 0;
  std::string mode;
  int iterations = 0;
  std::string calibrate;
  int ibbr = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* iterations_opt = nullptr;
  CLI::Option* calibrate_opt = nullptr;
  CLI::Option* ibbr_opt = nullptr;

  void add_common(CLI::App* sub) {
    seed_opt = sub->add_option("--seed", seed, "Override config seed");
    workers_opt = sub->add_option("--workers", workers, "Override worker count (0 = all cores)");
  }
  void add_train(CLI::App* sub) {
    mode_opt = sub->add_option(
        "--mode", mode,
        "Override training mode (baseline|apdi|box-iou-only|apdi+box-iou|cascade-baseline|cascade-apdi)");
    iterations_opt = sub->add_option("--iterations", iterations, "Override training iterations");
  }
  void add_infer(CLI::App* sub) {
    calibrate_opt = sub->add_option("--calibrate", calibrate, "Score calibration: auto|on|off");
    ibbr_opt = sub->add_option(
        "--ibbr", ibbr, "Total regression applications at inference (1 = plain single pass)");
  }

  void apply(Config& c) const {
    if (seed_opt && seed_opt->count()) c.seed = seed;
    if (workers_opt && workers_opt->count()) c.workers = workers;
    if (mode_opt && mode_opt->count()) c.train.mode = mode;
    if (iterations_opt && iterations_opt->count()) c.train.iterations = iterations;
    if (calibrate_opt && calibrate_opt->count()) c.inference.calibrate = calibrate;
    if (ibbr_opt && ibbr_opt->count()) c.inference.regression_passes = ibbr;
    c.validate();
  }
};

std::vector<ImageProposals> split_proposals(const Config& c, bool test_split) {
  const std::int64_t begin = test_split ? test_id_offset(c) : 0;
  const std::int64_t count = test_split ? c.dataset.test_images : c.dataset.train_images;
  std::vector<ImageProposals> out(static_cast<std::size_t>(count));
  const int workers = c.workers == 0 ? default_workers() : c.workers;
  parallel_for(out.size(), workers, [&](std::size_t k) {
    const std::int64_t id = begin + static_cast<std::int64_t>(k);
    const auto [img, gt] = scene_for(c, id);
    out[k].image_id = id;
    out[k].proposals = proposals_for(c, gt, id);
  });
  return out;
}

int cmd_synth(const Config& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  nlohmann::json manifest;
  manifest["schema"] = "synth/v1";
  manifest["config"] = config_to_json(cfg);
  manifest["train_ids"] = {{"begin", 0}, {"end", cfg.dataset.train_images}};
  manifest["test_ids"] = {{"begin", test_id_offset(cfg)},
                          {"end", test_id_offset(cfg) + cfg.dataset.test_images}};
  write_text(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  save_dataset(synthetic_annotations(cfg, false), out_dir + "/annotations_train.json");
  save_dataset(synthetic_annotations(cfg, true), out_dir + "/annotations_test.json");
  save_proposals(split_proposals(cfg, false), out_dir + "/proposals_train.jsonl");
  save_proposals(split_proposals(cfg, true), out_dir + "/proposals_test.jsonl");
  log_line("synth: wrote manifest, annotations, and proposal dumps to " + out_dir);
  std::cout << "wrote " << out_dir << "/manifest.json\n";
  return 0;
}

int cmd_train(const Config& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  write_text(out_dir + "/config.json", config_to_json(cfg).dump(2) + "\n");
  const TrainResult tr = train_run(cfg, [&](int iter, const std::vector<HeadModel>& stages) {
    save_checkpoint(stages, out_dir + "/checkpoint_" + std::to_string(iter) + ".json");
    log_line("train: checkpoint at iteration " + std::to_string(iter));
  });
  save_checkpoint(tr.stages, out_dir + "/checkpoint.json");
  std::string log_text;
  for (const std::string& line : tr.log_lines) log_text += line + "\n";
  write_text(out_dir + "/train_log.jsonl", log_text);
  if (cfg.train.emit_augmented_dump)
    save_proposals(augmented_dump(cfg, tr.stages, true), out_dir + "/augmented.jsonl");
  log_line("train: " + std::to_string(cfg.train.iterations) + " iterations, mode " + cfg.train.mode);
  std::cout << "wrote " << out_dir << "/checkpoint.json\n";
  return 0;
}

int cmd_infer(const Config& cfg, const std::string& checkpoint_path, const std::string& out_file,
              const std::string& proposals_path) {
  const std::vector<HeadModel> stages = load_checkpoint(checkpoint_path);
  for (const HeadModel& m : stages) {
    if (m.num_classes != cfg.dataset.num_classes || m.grid_size != cfg.model.grid_size ||
        m.channels != cfg.dataset.channels)
      throw ConfigError("checkpoint dimensions do not match the config");
  }
  std::optional<std::map<std::int64_t, ProposalSet>> override_map;
  if (!proposals_path.empty()) {
    override_map.emplace();
    for (ImageProposals& ip : load_proposals(proposals_path)) {
      if (!override_map->emplace(ip.image_id, std::move(ip.proposals)).second)
        throw SchemaError("proposals: duplicate image id " + std::to_string(ip.image_id) + " in " +
                          proposals_path);
    }
  }
  const InferResult res = infer_run(cfg, stages, override_map);
  save_detections(res.detections, out_file);
  log_line("infer: " + std::to_string(res.num_images) + " images, " +
           std::to_string(res.detections.size()) + " detections, " +
           std::to_string(res.stats.head_forwards) + " head forwards");
  std::cout << "wrote " << out_file << "\n";
  return 0;
}

int cmd_eval(const std::string& detections_path, const std::string& annotations_path,
             const std::string& out_dir) {
  const std::vector<Detection> dets = load_detections(detections_path);
  const Dataset ds = load_dataset(annotations_path);
  const std::map<std::int64_t, GroundTruth> gts = gt_by_image(ds);
  for (const Detection& d : dets)
    if (!gts.count(d.image_id))
      throw SchemaError("detections reference image id " + std::to_string(d.image_id) +
                        " absent from the annotations");
  const EvalReport rep = eval_run(dets, gts, ds.num_classes());
  const std::string csv = eval_report_to_csv(rep);
  std::cout << csv;
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(out_dir + "/eval.csv", csv);
    write_text(out_dir + "/eval.json", eval_report_to_json(rep).dump(2) + "\n");
  }
  return 0;
}

int cmd_analyze(const std::string& proposals_path, const std::string& annotations_path, int budget,
                int bins, const std::string& out_dir) {
  const std::vector<ImageProposals> dump = load_proposals(proposals_path);
  const Dataset ds = load_dataset(annotations_path);
  const std::map<std::int64_t, GroundTruth> gts = gt_by_image(ds);

  std::vector<ProposalSet> proposals;
  std::vector<GroundTruth> gt_list;
  bool all_tagged = !dump.empty();
  for (const ImageProposals& ip : dump) {
    auto it = gts.find(ip.image_id);
    if (it == gts.end())
      throw SchemaError("proposals reference image id " + std::to_string(ip.image_id) +
                        " absent from the annotations");
    if (!ip.proposals.provenance) all_tagged = false;
    proposals.push_back(ip.proposals);
    gt_list.push_back(it->second);
  }

  const ARTable ar = average_recall(proposals, gt_list, budget);
  const IoUHistogram hist_orig =
      iou_histogram(proposals, gt_list, HistogramPopulation::kOriginalPositive, bins);

  nlohmann::json j;
  j["ar"] = ar_table_to_json(ar);
  j["histogram_original"] = histogram_to_json(hist_orig);
  std::cout << ar_table_to_csv(ar);
  std::optional<IoUHistogram> hist_aug;
  if (all_tagged) {
    hist_aug = iou_histogram(proposals, gt_list, HistogramPopulation::kAugmentedPositive, bins);
    j["histogram_augmented"] = histogram_to_json(*hist_aug);
  }
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    write_text(out_dir + "/ar_table.csv", ar_table_to_csv(ar));
    write_text(out_dir + "/ar_row.csv", ar_table_row_csv(ar));
    write_text(out_dir + "/histogram_original.csv", histogram_to_csv(hist_orig));
    if (hist_aug) write_text(out_dir + "/histogram_augmented.csv", histogram_to_csv(*hist_aug));
    write_text(out_dir + "/analysis.json", j.dump(2) + "\n");
  }
  return 0;
}

int cmd_ablate(const Config& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  const std::vector<AblateRow> rows =
      ablate_run(cfg, [](const std::string& mode) { log_line("ablate: running mode " + mode); });
  const std::string csv = ablate_to_csv(rows);
  std::cout << csv;
  write_text(out_dir + "/ablate.csv", csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage detection pipeline with proposal refinement and IoU-calibrated scoring"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir, out_file, checkpoint_path, detections_path, annotations_path,
      proposals_path;
  int budget = 0, bins = 10;

  Overrides synth_ov, train_ov, infer_ov, ablate_ov;

  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic dataset manifest and dumps");
  synth->add_option("--config", config_path, "JSON config file")->required();
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth_ov.add_common(synth);

  CLI::App* train = app.add_subcommand("train", "Train a model in the configured mode");
  train->add_option("--config", config_path, "JSON config file")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train_ov.add_common(train);
  train_ov.add_train(train);

  CLI::App* infer = app.add_subcommand("infer", "Run inference and emit a detections dump");
  infer->add_option("--config", config_path, "JSON config file")->required();
  infer->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  infer->add_option("--out", out_file, "Output detections JSONL file")->required();
  infer->add_option("--proposals", proposals_path, "Proposal dump to use instead of generated proposals");
  infer_ov.add_common(infer);
  infer_ov.add_train(infer);  // --mode selects the checkpoint's pipeline shape
  infer_ov.add_infer(infer);

  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a detections dump against annotations");
  eval_cmd->add_option("--detections", detections_path, "Detections JSONL dump")->required();
  eval_cmd->add_option("--annotations", annotations_path, "Annotations JSON file")->required();
  eval_cmd->add_option("--out", out_dir, "Optional output directory for eval.json/eval.csv");

  CLI::App* analyze = app.add_subcommand("analyze", "Recall table and IoU histograms for a proposal dump");
  analyze->add_option("--proposals", proposals_path, "Proposal JSONL dump")->required();
  analyze->add_option("--annotations", annotations_path, "Annotations JSON file")->required();
  analyze->add_option("--budget", budget, "Proposals per image to keep, by score")->required();
  analyze->add_option("--bins", bins, "Histogram bins over [0.5, 1.0]");
  analyze->add_option("--out", out_dir, "Optional output directory for CSV/JSON tables");

  CLI::App* ablate = app.add_subcommand("ablate", "Run the 4-mode ablation grid end to end");
  ablate->add_option("--config", config_path, "JSON config file")->required();
  ablate->add_option("--out", out_dir, "Output directory")->required();
  ablate_ov.add_common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(synth)) {
      Config cfg = load_config(config_path);
      synth_ov.apply(cfg);
      return cmd_synth(cfg, out_dir);
    }
    if (app.got_subcommand(train)) {
      Config cfg = load_config(config_path);
      train_ov.apply(cfg);
      return cmd_train(cfg, out_dir);
    }
    if (app.got_subcommand(infer)) {
      Config cfg = load_config(config_path);
      infer_ov.apply(cfg);
      return cmd_infer(cfg, checkpoint_path, out_file, proposals_path);
    }
    if (app.got_subcommand(eval_cmd)) return cmd_eval(detections_path, annotations_path, out_dir);
    if (app.got_subcommand(analyze))
      return cmd_analyze(proposals_path, annotations_path, budget, bins, out_dir);
    if (app.got_subcommand(ablate)) {
      Config cfg = load_config(config_path);
      ablate_ov.apply(cfg);
      return cmd_ablate(cfg, out_dir);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
