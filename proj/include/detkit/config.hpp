#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "detkit/apdi.hpp"
#include "detkit/data.hpp"
#include "detkit/errors.hpp"

namespace detkit {

// Whole-run configuration. Every knob lives in one JSON document; CLI flags
// override individual fields after loading.
struct Config {
  std::uint64_t seed = 1;
  int workers = 0;  // 0 = all available cores

  struct Dataset {
    int train_images = 128;
    int test_images = 64;
    int height = 64, width = 64;
    int channels = 3;
    int num_classes = 3;
    int min_objects = 1, max_objects = 3;
    double min_size = 12.0, max_size = 28.0;
    double noise_sigma = 0.05;
    std::vector<std::vector<double>> class_signatures;  // empty -> built-in pattern
  } dataset;

  struct Proposals {
    double jitter_sigma = 1.6;
    int jitters_per_gt = 8;
    int negatives_per_image = 16;
  } proposals;

  struct Model {
    int grid_size = 3;
    DeltaWeights delta_weights;
  } model;

  struct Train {
    std::string mode = "baseline";
    int iterations = 400;
    int images_per_step = 8;
    double learning_rate = 0.02;
    int batch_size_per_image = 512;
    double positive_fraction = 0.25;
    double fg_threshold = 0.5;
    double iou_threshold = 0.3;
    int warmup_iterations = 0;
    int reg_cap = 512;
    int iou_cap = 512;
    std::string iou_source = "augmented";
    bool cascade_box_iou = false;
    std::optional<std::array<double, 3>> cascade_thresholds;  // unset -> per-mode defaults
    double w_cls = 1.0, w_reg = 1.0, w_iou = 1.0;
    int checkpoint_every = 0;  // 0 = final checkpoint only
    bool emit_augmented_dump = false;
  } train;

  struct Inference {
    double score_threshold = 0.05;
    double nms_iou = 0.5;
    int top_k = 100;
    std::string calibrate = "auto";  // auto | on | off
    int regression_passes = 0;       // 0 = per-mode default
  } inference;

  struct Eval {
    int proposal_budget = 100;
    int histogram_bins = 10;
  } eval;

  TrainMode mode() const { return parse_train_mode(train.mode); }

  SceneSpec scene_spec() const {
    SceneSpec s;
    s.height = dataset.height;
    s.width = dataset.width;
    s.channels = dataset.channels;
    s.num_classes = dataset.num_classes;
    s.min_objects = dataset.min_objects;
    s.max_objects = dataset.max_objects;
    s.min_size = dataset.min_size;
    s.max_size = dataset.max_size;
    s.noise_sigma = dataset.noise_sigma;
    s.class_signatures = dataset.class_signatures;
    s.seed = seed;
    return s;
  }

  ProposalGenConfig proposal_gen() const {
    ProposalGenConfig p;
    p.jitter_sigma = proposals.jitter_sigma;
    p.jitters_per_gt = proposals.jitters_per_gt;
    p.negatives_per_image = proposals.negatives_per_image;
    p.weights = model.delta_weights;
    return p;
  }

  bool resolved_calibrate() const {
    if (inference.calibrate == "on") return true;
    if (inference.calibrate == "off") return false;
    if (inference.calibrate != "auto")
      throw ConfigError("inference.calibrate must be auto|on|off");
    const TrainMode m = mode();
    if (mode_is_cascade(m)) return train.cascade_box_iou;
    return mode_trains_iou(m);
  }

  // Total delta applications at inference; the scoring pass is the last one.
  int resolved_regression_passes() const {
    const TrainMode m = mode();
    if (inference.regression_passes != 0) {
      if (mode_is_cascade(m))
        throw ConfigError("inference.regression_passes does not apply to cascade modes");
      if (inference.regression_passes < 1)
        throw ConfigError("inference.regression_passes must be >= 1");
      return inference.regression_passes;
    }
    return mode_augments(m) ? 2 : 1;
  }

  std::array<double, 3> resolved_cascade_thresholds() const {
    if (train.cascade_thresholds) return *train.cascade_thresholds;
    return cascade_thresholds(mode() == TrainMode::kCascadeApdi ? CascadeMode::kApdi
                                                                : CascadeMode::kBaseline);
  }

  void validate() const {
    scene_spec().validate();  // dataset geometry/class checks
    parse_train_mode(train.mode);
    parse_iou_source(train.iou_source);
    if (dataset.train_images < 1 || dataset.test_images < 1)
      throw ConfigError("dataset: image counts must be >= 1");
    if (proposals.jitter_sigma < 0) throw ConfigError("proposals: jitter_sigma must be >= 0");
    if (proposals.jitters_per_gt < 0 || proposals.negatives_per_image < 0)
      throw ConfigError("proposals: counts must be >= 0");
    if (proposals.jitters_per_gt + proposals.negatives_per_image < 1)
      throw ConfigError("proposals: at least one proposal per image required");
    if (model.grid_size < 1) throw ConfigError("model: grid_size must be >= 1");
    const DeltaWeights& w = model.delta_weights;
    if (w.wx <= 0 || w.wy <= 0 || w.ww <= 0 || w.wh <= 0)
      throw ConfigError("model: delta_weights must be positive");
    if (train.iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (train.images_per_step < 1) throw ConfigError("train: images_per_step must be >= 1");
    if (train.learning_rate < 0) throw ConfigError("train: learning_rate must be >= 0");
    if (train.batch_size_per_image < 1) throw ConfigError("train: batch_size_per_image must be >= 1");
    if (!(train.positive_fraction > 0 && train.positive_fraction <= 1))
      throw ConfigError("train: positive_fraction must be in (0, 1]");
    if (!(train.fg_threshold > 0 && train.fg_threshold <= 1))
      throw ConfigError("train: fg_threshold must be in (0, 1]");
    if (!(train.iou_threshold >= 0 && train.iou_threshold < 1))
      throw ConfigError("train: iou_threshold must be in [0, 1)");
    if (train.warmup_iterations < 0) throw ConfigError("train: warmup_iterations must be >= 0");
    if (train.reg_cap < 1 || train.iou_cap < 1) throw ConfigError("train: caps must be >= 1");
    if (train.cascade_thresholds)
      for (double t : *train.cascade_thresholds)
        if (!(t > 0 && t <= 1)) throw ConfigError("train: cascade_thresholds must be in (0, 1]");
    if (train.w_cls < 0 || train.w_reg < 0 || train.w_iou < 0)
      throw ConfigError("train: loss weights must be >= 0");
    if (train.checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
    if (!(inference.score_threshold >= 0 && inference.score_threshold < 1))
      throw ConfigError("inference: score_threshold must be in [0, 1)");
    if (!(inference.nms_iou > 0 && inference.nms_iou < 1))
      throw ConfigError("inference: nms_iou must be in (0, 1)");
    if (inference.top_k < 1) throw ConfigError("inference: top_k must be >= 1");
    if (inference.regression_passes < 0)
      throw ConfigError("inference: regression_passes must be >= 1 (or 0 for the mode default)");
    if (eval.proposal_budget < 1) throw ConfigError("eval: proposal_budget must be >= 1");
    if (eval.histogram_bins < 1) throw ConfigError("eval: histogram_bins must be >= 1");
    if (workers < 0) throw ConfigError("workers must be >= 0");
    resolved_calibrate();
    resolved_regression_passes();
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& section) {
  if (!j.is_object()) throw ConfigError("config: '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + section);
  }
}

template <typename T>
inline void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  const auto& v = j[key];
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("");
      out = v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("");
      out = v.get<T>();
    } else {
      if (!v.is_number()) throw ConfigError("");
      out = v.get<T>();
    }
  } catch (...) {
    throw ConfigError("config: bad value for '" + section + "." + key + "'");
  }
}

}  // namespace detail

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  detail::check_keys(j, {"seed", "workers", "dataset", "proposals", "model", "train", "inference", "eval"},
                     "top level");
  detail::read_field(j, "seed", c.seed, "top level");
  detail::read_field(j, "workers", c.workers, "top level");

  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    detail::check_keys(d,
                       {"train_images", "test_images", "height", "width", "channels", "num_classes",
                        "min_objects", "max_objects", "min_size", "max_size", "noise_sigma",
                        "class_signatures"},
                       "dataset");
    detail::read_field(d, "train_images", c.dataset.train_images, "dataset");
    detail::read_field(d, "test_images", c.dataset.test_images, "dataset");
    detail::read_field(d, "height", c.dataset.height, "dataset");
    detail::read_field(d, "width", c.dataset.width, "dataset");
    detail::read_field(d, "channels", c.dataset.channels, "dataset");
    detail::read_field(d, "num_classes", c.dataset.num_classes, "dataset");
    detail::read_field(d, "min_objects", c.dataset.min_objects, "dataset");
    detail::read_field(d, "max_objects", c.dataset.max_objects, "dataset");
    detail::read_field(d, "min_size", c.dataset.min_size, "dataset");
    detail::read_field(d, "max_size", c.dataset.max_size, "dataset");
    detail::read_field(d, "noise_sigma", c.dataset.noise_sigma, "dataset");
    if (d.contains("class_signatures")) {
      const auto& sj = d["class_signatures"];
      if (!sj.is_array()) throw ConfigError("config: dataset.class_signatures must be an array");
      for (const auto& row : sj) {
        if (!row.is_array()) throw ConfigError("config: dataset.class_signatures rows must be arrays");
        std::vector<double> sig;
        for (const auto& v : row) {
          if (!v.is_number()) throw ConfigError("config: dataset.class_signatures must be numeric");
          sig.push_back(v.get<double>());
        }
        c.dataset.class_signatures.push_back(std::move(sig));
      }
    }
  }

  if (j.contains("proposals")) {
    const auto& p = j["proposals"];
    detail::check_keys(p, {"jitter_sigma", "jitters_per_gt", "negatives_per_image"}, "proposals");
    detail::read_field(p, "jitter_sigma", c.proposals.jitter_sigma, "proposals");
    detail::read_field(p, "jitters_per_gt", c.proposals.jitters_per_gt, "proposals");
    detail::read_field(p, "negatives_per_image", c.proposals.negatives_per_image, "proposals");
  }

  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::check_keys(m, {"grid_size", "delta_weights"}, "model");
    detail::read_field(m, "grid_size", c.model.grid_size, "model");
    if (m.contains("delta_weights")) {
      const auto& w = m["delta_weights"];
      if (!w.is_array() || w.size() != 4)
        throw ConfigError("config: model.delta_weights must have 4 entries");
      for (const auto& v : w)
        if (!v.is_number()) throw ConfigError("config: model.delta_weights must be numeric");
      c.model.delta_weights = DeltaWeights{w[0].get<double>(), w[1].get<double>(),
                                           w[2].get<double>(), w[3].get<double>()};
    }
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    detail::check_keys(t,
                       {"mode", "iterations", "images_per_step", "learning_rate",
                        "batch_size_per_image", "positive_fraction", "fg_threshold", "iou_threshold",
                        "warmup_iterations", "reg_cap", "iou_cap", "iou_source", "cascade_box_iou",
                        "cascade_thresholds", "loss_weights", "checkpoint_every",
                        "emit_augmented_dump"},
                       "train");
    detail::read_field(t, "mode", c.train.mode, "train");
    detail::read_field(t, "iterations", c.train.iterations, "train");
    detail::read_field(t, "images_per_step", c.train.images_per_step, "train");
    detail::read_field(t, "learning_rate", c.train.learning_rate, "train");
    detail::read_field(t, "batch_size_per_image", c.train.batch_size_per_image, "train");
    detail::read_field(t, "positive_fraction", c.train.positive_fraction, "train");
    detail::read_field(t, "fg_threshold", c.train.fg_threshold, "train");
    detail::read_field(t, "iou_threshold", c.train.iou_threshold, "train");
    detail::read_field(t, "warmup_iterations", c.train.warmup_iterations, "train");
    detail::read_field(t, "reg_cap", c.train.reg_cap, "train");
    detail::read_field(t, "iou_cap", c.train.iou_cap, "train");
    detail::read_field(t, "iou_source", c.train.iou_source, "train");
    detail::read_field(t, "cascade_box_iou", c.train.cascade_box_iou, "train");
    detail::read_field(t, "checkpoint_every", c.train.checkpoint_every, "train");
    detail::read_field(t, "emit_augmented_dump", c.train.emit_augmented_dump, "train");
    if (t.contains("cascade_thresholds")) {
      const auto& ct = t["cascade_thresholds"];
      if (ct.is_string() && ct.get<std::string>() == "auto") {
        c.train.cascade_thresholds.reset();
      } else if (ct.is_array() && ct.size() == 3 && ct[0].is_number() && ct[1].is_number() &&
                 ct[2].is_number()) {
        c.train.cascade_thresholds = {ct[0].get<double>(), ct[1].get<double>(), ct[2].get<double>()};
      } else {
        throw ConfigError("config: train.cascade_thresholds must be \"auto\" or 3 numbers");
      }
    }
    if (t.contains("loss_weights")) {
      const auto& lw = t["loss_weights"];
      detail::check_keys(lw, {"cls", "reg", "iou"}, "train.loss_weights");
      detail::read_field(lw, "cls", c.train.w_cls, "train.loss_weights");
      detail::read_field(lw, "reg", c.train.w_reg, "train.loss_weights");
      detail::read_field(lw, "iou", c.train.w_iou, "train.loss_weights");
    }
  }

  if (j.contains("inference")) {
    const auto& i = j["inference"];
    detail::check_keys(i, {"score_threshold", "nms_iou", "top_k", "calibrate", "regression_passes"},
                       "inference");
    detail::read_field(i, "score_threshold", c.inference.score_threshold, "inference");
    detail::read_field(i, "nms_iou", c.inference.nms_iou, "inference");
    detail::read_field(i, "top_k", c.inference.top_k, "inference");
    detail::read_field(i, "calibrate", c.inference.calibrate, "inference");
    detail::read_field(i, "regression_passes", c.inference.regression_passes, "inference");
  }

  if (j.contains("eval")) {
    const auto& e = j["eval"];
    detail::check_keys(e, {"proposal_budget", "histogram_bins"}, "eval");
    detail::read_field(e, "proposal_budget", c.eval.proposal_budget, "eval");
    detail::read_field(e, "histogram_bins", c.eval.histogram_bins, "eval");
  }

  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  auto& d = j["dataset"];
  d["train_images"] = c.dataset.train_images;
  d["test_images"] = c.dataset.test_images;
  d["height"] = c.dataset.height;
  d["width"] = c.dataset.width;
  d["channels"] = c.dataset.channels;
  d["num_classes"] = c.dataset.num_classes;
  d["min_objects"] = c.dataset.min_objects;
  d["max_objects"] = c.dataset.max_objects;
  d["min_size"] = c.dataset.min_size;
  d["max_size"] = c.dataset.max_size;
  d["noise_sigma"] = c.dataset.noise_sigma;
  if (!c.dataset.class_signatures.empty()) d["class_signatures"] = c.dataset.class_signatures;
  auto& p = j["proposals"];
  p["jitter_sigma"] = c.proposals.jitter_sigma;
  p["jitters_per_gt"] = c.proposals.jitters_per_gt;
  p["negatives_per_image"] = c.proposals.negatives_per_image;
  auto& m = j["model"];
  m["grid_size"] = c.model.grid_size;
  m["delta_weights"] = {c.model.delta_weights.wx, c.model.delta_weights.wy, c.model.delta_weights.ww,
                        c.model.delta_weights.wh};
  auto& t = j["train"];
  t["mode"] = c.train.mode;
  t["iterations"] = c.train.iterations;
  t["images_per_step"] = c.train.images_per_step;
  t["learning_rate"] = c.train.learning_rate;
  t["batch_size_per_image"] = c.train.batch_size_per_image;
  t["positive_fraction"] = c.train.positive_fraction;
  t["fg_threshold"] = c.train.fg_threshold;
  t["iou_threshold"] = c.train.iou_threshold;
  t["warmup_iterations"] = c.train.warmup_iterations;
  t["reg_cap"] = c.train.reg_cap;
  t["iou_cap"] = c.train.iou_cap;
  t["iou_source"] = c.train.iou_source;
  t["cascade_box_iou"] = c.train.cascade_box_iou;
  if (c.train.cascade_thresholds)
    t["cascade_thresholds"] = {(*c.train.cascade_thresholds)[0], (*c.train.cascade_thresholds)[1],
                               (*c.train.cascade_thresholds)[2]};
  else
    t["cascade_thresholds"] = "auto";
  t["loss_weights"] = {{"cls", c.train.w_cls}, {"reg", c.train.w_reg}, {"iou", c.train.w_iou}};
  t["checkpoint_every"] = c.train.checkpoint_every;
  t["emit_augmented_dump"] = c.train.emit_augmented_dump;
  auto& i = j["inference"];
  i["score_threshold"] = c.inference.score_threshold;
  i["nms_iou"] = c.inference.nms_iou;
  i["top_k"] = c.inference.top_k;
  i["calibrate"] = c.inference.calibrate;
  i["regression_passes"] = c.inference.regression_passes;
  auto& e = j["eval"];
  e["proposal_budget"] = c.eval.proposal_budget;
  e["histogram_bins"] = c.eval.histogram_bins;
  return j;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace detkit
