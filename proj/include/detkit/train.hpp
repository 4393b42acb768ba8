#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "detkit/apdi.hpp"
#include "detkit/config.hpp"
#include "detkit/data.hpp"
#include "detkit/eval.hpp"
#include "detkit/io.hpp"
#include "detkit/pipeline.hpp"

namespace detkit {

// Image ids are global: the train split owns [0, train_images), the test
// split follows it. Scenes and proposals are pure functions of (seed, id).
inline std::int64_t test_id_offset(const Config& c) { return c.dataset.train_images; }

inline std::pair<ImageTensor, GroundTruth> scene_for(const Config& c, std::int64_t image_id) {
  return generate_scene(c.scene_spec(), image_id);
}

inline ProposalSet proposals_for(const Config& c, const GroundTruth& gt, std::int64_t image_id) {
  Rng rng(derive_seed(c.seed, rng_stream::kProposals, static_cast<std::uint64_t>(image_id)));
  const Box bounds(0, 0, c.dataset.width, c.dataset.height);
  return generate_proposals(gt, bounds, c.proposal_gen(), rng);
}

// COCO-style annotations for one split; original category ids are 1..K.
inline Dataset synthetic_annotations(const Config& c, bool test_split) {
  Dataset ds;
  for (int k = 0; k < c.dataset.num_classes; ++k) ds.category_ids.push_back(k + 1);
  const std::int64_t begin = test_split ? test_id_offset(c) : 0;
  const std::int64_t count = test_split ? c.dataset.test_images : c.dataset.train_images;
  for (std::int64_t id = begin; id < begin + count; ++id) {
    Dataset::Image img;
    img.id = id;
    img.height = c.dataset.height;
    img.width = c.dataset.width;
    img.gt = scene_for(c, id).second;
    ds.images.push_back(std::move(img));
  }
  return ds;
}

inline std::map<std::int64_t, GroundTruth> gt_by_image(const Dataset& ds) {
  std::map<std::int64_t, GroundTruth> out;
  for (const auto& img : ds.images) out[img.id] = img.gt;
  return out;
}

// ---- training driver -------------------------------------------------------

struct TrainResult {
  std::vector<HeadModel> stages;        // 1 head, or 3 for cascades
  std::vector<std::string> log_lines;   // one JSON object per iteration
};

namespace detail {

inline nlohmann::json loss_report_json(const LossReport& r) {
  return {{"cls", r.cls},   {"reg", r.reg},     {"iou", r.iou},     {"total", r.total},
          {"n_cls", r.n_cls}, {"n_reg", r.n_reg}, {"n_iou", r.n_iou}};
}

}  // namespace detail

// Deterministic training loop: round-robin image batches, per-(iteration,
// image) sampling seeds, one update per iteration. The optional callback sees
// the stage snapshots after selected iterations for periodic checkpoints.
inline TrainResult train_run(
    const Config& c,
    const std::function<void(int iter, const std::vector<HeadModel>&)>& on_checkpoint = {}) {
  c.validate();
  const TrainMode mode = c.mode();
  const int n_stages = mode_is_cascade(mode) ? 3 : 1;

  TrainResult res;
  for (int s = 0; s < n_stages; ++s)
    res.stages.emplace_back(c.dataset.num_classes, c.model.grid_size, c.dataset.channels,
                            c.model.delta_weights);

  const int workers = c.workers == 0 ? default_workers() : c.workers;
  for (int iter = 0; iter < c.train.iterations; ++iter) {
    // Materialize this step's images.
    std::vector<std::pair<ImageTensor, GroundTruth>> scenes(
        static_cast<std::size_t>(c.train.images_per_step));
    std::vector<ProposalSet> proposals(scenes.size());
    std::vector<std::int64_t> ids(scenes.size());
    for (std::size_t k = 0; k < scenes.size(); ++k)
      ids[k] = (static_cast<std::int64_t>(iter) * c.train.images_per_step +
                static_cast<std::int64_t>(k)) %
               c.dataset.train_images;
    parallel_for(scenes.size(), workers, [&](std::size_t k) {
      scenes[k] = scene_for(c, ids[k]);
      proposals[k] = proposals_for(c, scenes[k].second, ids[k]);
    });

    std::vector<TrainImage> batch(scenes.size());
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      batch[k].img = &scenes[k].first;
      batch[k].gt = &scenes[k].second;
      batch[k].proposals = &proposals[k];
      batch[k].sample_seed = derive_seed(c.seed, rng_stream::kSample,
                                         static_cast<std::uint64_t>(iter),
                                         static_cast<std::uint64_t>(ids[k]));
    }

    const bool past_warmup = iter >= c.train.warmup_iterations;
    nlohmann::json line;
    line["iter"] = iter;
    if (mode_is_cascade(mode)) {
      CascadeStepOptions opts;
      opts.mode = mode;
      opts.augment = mode_augments(mode) && past_warmup;
      opts.train_iou = c.train.cascade_box_iou;
      opts.thresholds = c.resolved_cascade_thresholds();
      opts.iou_threshold = c.train.iou_threshold;
      opts.iou_source = parse_iou_source(c.train.iou_source);
      opts.batch_size = c.train.batch_size_per_image;
      opts.positive_fraction = c.train.positive_fraction;
      opts.reg_cap = c.train.reg_cap;
      opts.iou_cap = c.train.iou_cap;
      opts.learning_rate = c.train.learning_rate;
      opts.w_cls = c.train.w_cls;
      opts.w_reg = c.train.w_reg;
      opts.w_iou = c.train.w_iou;
      opts.workers = workers;
      const auto reports = cascade_train_step(res.stages, batch, opts);
      nlohmann::json st = nlohmann::json::array();
      for (const LossReport& r : reports) st.push_back(detail::loss_report_json(r));
      line["stages"] = std::move(st);
    } else {
      TrainStepOptions opts;
      opts.mode = mode;
      opts.augment = mode_augments(mode) && past_warmup;
      opts.train_iou = mode_trains_iou(mode);
      opts.fg_threshold = c.train.fg_threshold;
      opts.iou_threshold = c.train.iou_threshold;
      opts.iou_source = parse_iou_source(c.train.iou_source);
      opts.batch_size = c.train.batch_size_per_image;
      opts.positive_fraction = c.train.positive_fraction;
      opts.reg_cap = c.train.reg_cap;
      opts.iou_cap = c.train.iou_cap;
      opts.learning_rate = c.train.learning_rate;
      opts.w_cls = c.train.w_cls;
      opts.w_reg = c.train.w_reg;
      opts.w_iou = c.train.w_iou;
      opts.workers = workers;
      const LossReport r = train_step(res.stages[0], batch, opts);
      line["stages"] = nlohmann::json::array({detail::loss_report_json(r)});
    }
    res.log_lines.push_back(line.dump());

    if (on_checkpoint && c.train.checkpoint_every > 0 &&
        (iter + 1) % c.train.checkpoint_every == 0 && iter + 1 < c.train.iterations)
      on_checkpoint(iter + 1, res.stages);
  }
  return res;
}

// Augmented-proposal dump over one split, using the (first) trained head.
inline std::vector<ImageProposals> augmented_dump(const Config& c,
                                                  const std::vector<HeadModel>& stages,
                                                  bool test_split) {
  if (stages.empty()) throw std::invalid_argument("augmented_dump: no stages");
  const std::int64_t begin = test_split ? test_id_offset(c) : 0;
  const std::int64_t count = test_split ? c.dataset.test_images : c.dataset.train_images;
  const int workers = c.workers == 0 ? default_workers() : c.workers;

  std::vector<ImageProposals> out(static_cast<std::size_t>(count));
  parallel_for(out.size(), workers, [&](std::size_t k) {
    const std::int64_t id = begin + static_cast<std::int64_t>(k);
    const auto [img, gt] = scene_for(c, id);
    const ProposalSet originals = proposals_for(c, gt, id);
    const AugmentedProposals aug =
        augment_proposals(stages[0], img, originals, gt, c.train.fg_threshold);
    ImageProposals ip;
    ip.image_id = id;
    ip.proposals.provenance.emplace();
    for (const AugmentedBox& a : aug) {
      ip.proposals.boxes.push_back(a.box);
      ip.proposals.provenance->push_back(a.prov);
    }
    out[k] = std::move(ip);
  });
  return out;
}

// ---- inference driver ------------------------------------------------------

struct InferResult {
  std::vector<Detection> detections;  // ordered by image id
  InferStats stats;
  std::size_t num_images = 0;
};

// Runs the test split (or overriding proposal dumps) through the trained
// model; images processed in parallel, outputs concatenated in id order.
inline InferResult infer_run(
    const Config& c, const std::vector<HeadModel>& stages,
    const std::optional<std::map<std::int64_t, ProposalSet>>& proposal_override = std::nullopt) {
  if (stages.empty()) throw std::invalid_argument("infer_run: no stages");
  const TrainMode mode = c.mode();
  if (mode_is_cascade(mode) && stages.size() != 3)
    throw ConfigError("cascade mode needs a 3-stage checkpoint");
  if (!mode_is_cascade(mode) && stages.size() != 1)
    throw ConfigError("non-cascade mode needs a 1-stage checkpoint");

  InferenceOptions opts;
  opts.score_threshold = c.inference.score_threshold;
  opts.nms_iou = c.inference.nms_iou;
  opts.top_k = c.inference.top_k;
  opts.calibrate = c.resolved_calibrate();
  opts.regression_passes = mode_is_cascade(mode) ? 1 : c.resolved_regression_passes();

  const std::int64_t begin = test_id_offset(c);
  const std::int64_t count = c.dataset.test_images;
  const int workers = c.workers == 0 ? default_workers() : c.workers;

  std::vector<std::vector<Detection>> per_image(static_cast<std::size_t>(count));
  std::vector<InferStats> per_stats(per_image.size());
  parallel_for(per_image.size(), workers, [&](std::size_t k) {
    const std::int64_t id = begin + static_cast<std::int64_t>(k);
    const auto [img, gt] = scene_for(c, id);
    ProposalSet proposals;
    if (proposal_override) {
      auto it = proposal_override->find(id);
      if (it == proposal_override->end()) return;  // no proposals dumped for this image
      proposals = it->second;
    } else {
      proposals = proposals_for(c, gt, id);
    }
    per_image[k] = mode_is_cascade(mode)
                       ? infer_cascade(stages, img, proposals, id, opts, &per_stats[k])
                       : infer_image(stages[0], img, proposals, id, opts, &per_stats[k]);
  });

  InferResult res;
  res.num_images = per_image.size();
  for (std::size_t k = 0; k < per_image.size(); ++k) {
    res.stats.head_forwards += per_stats[k].head_forwards;
    res.detections.insert(res.detections.end(), per_image[k].begin(), per_image[k].end());
  }
  return res;
}

// ---- evaluation driver -----------------------------------------------------

inline EvalReport eval_run(const std::vector<Detection>& detections,
                           const std::map<std::int64_t, GroundTruth>& gts, int num_classes) {
  EvalReport rep;
  rep.ap = average_precision(detections, gts, num_classes);
  rep.num_detections = detections.size();
  rep.num_images = gts.size();

  // Size-range views only when the ground truth actually straddles the
  // 32^2 / 96^2 area cuts.
  constexpr double kSmall = 32.0 * 32.0, kLarge = 96.0 * 96.0;
  std::size_t n_small = 0, n_medium = 0, n_large = 0;
  for (const auto& [id, gt] : gts)
    for (const GtInstance& g : gt) {
      const double a = g.box.area();
      if (a < kSmall)
        ++n_small;
      else if (a < kLarge)
        ++n_medium;
      else
        ++n_large;
    }
  const std::size_t total = n_small + n_medium + n_large;
  const auto straddles = [&](std::size_t n) { return n > 0 && n < total; };
  if (straddles(n_small))
    rep.ap_small = average_precision(detections, gts, num_classes, {{0.0, kSmall}}).ap;
  if (straddles(n_medium))
    rep.ap_medium = average_precision(detections, gts, num_classes, {{kSmall, kLarge}}).ap;
  if (straddles(n_large))
    rep.ap_large =
        average_precision(detections, gts, num_classes,
                          {{kLarge, std::numeric_limits<double>::infinity()}})
            .ap;

  try {
    rep.spearman = score_iou_correlation(detections, gts);
  } catch (const std::invalid_argument&) {
    rep.spearman.reset();  // undefined on degenerate detection sets
  }
  return rep;
}

// ---- ablation driver -------------------------------------------------------

struct AblateRow {
  std::string mode;
  double ap = 0.0, ap50 = 0.0, ap75 = 0.0;
};

// The four-mode grid over a shared seed: train, infer, and score each mode
// end to end on the same synthetic dataset.
inline std::vector<AblateRow> ablate_run(
    const Config& base, const std::function<void(const std::string& mode)>& on_mode = {}) {
  static const char* kModes[] = {"baseline", "apdi", "box-iou-only", "apdi+box-iou"};
  const std::map<std::int64_t, GroundTruth> gts = gt_by_image(synthetic_annotations(base, true));
  std::vector<AblateRow> rows;
  for (const char* mode : kModes) {
    if (on_mode) on_mode(mode);
    Config c = base;
    c.train.mode = mode;
    c.inference.calibrate = "auto";
    c.validate();
    const TrainResult tr = train_run(c);
    const InferResult ir = infer_run(c, tr.stages);
    const ApResult ap = average_precision(ir.detections, gts, c.dataset.num_classes);
    rows.push_back(AblateRow{mode, ap.ap, ap.ap50, ap.ap75});
  }
  return rows;
}

inline std::string ablate_to_csv(const std::vector<AblateRow>& rows) {
  std::ostringstream out;
  out << "mode,ap,ap50,ap75\n";
  for (const AblateRow& r : rows)
    out << r.mode << "," << format_fixed(r.ap) << "," << format_fixed(r.ap50) << ","
        << format_fixed(r.ap75) << "\n";
  return out.str();
}

}  // namespace detkit
