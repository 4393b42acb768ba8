#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "detkit/data.hpp"
#include "detkit/features.hpp"
#include "detkit/heads.hpp"
#include "detkit/matching.hpp"
#include "detkit/parallel.hpp"
#include "detkit/random.hpp"

namespace detkit {

namespace detail {

// Pooled features of a box, or nullopt when its image-clipped extent is empty.
inline std::optional<FeatureVector> try_pool(const ImageTensor& img, const Box& b, int grid_size) {
  const Box c = clip_box(b, img.bounds());
  if (c.width() <= 0.0 || c.height() <= 0.0) return std::nullopt;
  return roi_pool(img, b, grid_size);
}

}  // namespace detail

// One read-only refinement: pool, forward, decode the predicted deltas, clip
// to the image. Boxes whose clipped extent is empty cannot be pooled and pass
// through unchanged.
inline Box refine_box(const HeadModel& model, const ImageTensor& img, const Box& b) {
  auto f = detail::try_pool(img, b, model.grid_size);
  if (!f) return b;
  const HeadOutput out = forward(model, *f);
  return decode_deltas(b, out.deltas, model.delta_weights, img.bounds());
}

struct AugmentedBox {
  Box box;
  Provenance prov = Provenance::kRefined;
  double max_iou = 0.0;
  int matched_gt = kNoMatch;
  int source_index = 0;  // index of the original proposal this box came from
};

using AugmentedProposals = std::vector<AugmentedBox>;

// Proposal augmentation: keep the positives (max IoU >= fg_threshold) of the
// original set verbatim, refine every original through the head, concatenate
// positives then refined, and recompute IoUs for the whole set. The model is
// only ever read.
inline AugmentedProposals augment_proposals(const HeadModel& model, const ImageTensor& img,
                                            const ProposalSet& originals, const GroundTruth& gt,
                                            double fg_threshold = 0.5) {
  AugmentedProposals aug;
  if (originals.boxes.empty()) return aug;
  const MatchResult m = match(originals.boxes, gt, fg_threshold);

  for (std::size_t i = 0; i < originals.boxes.size(); ++i) {
    if (!m.positive[i]) continue;
    aug.push_back(AugmentedBox{originals.boxes[i], Provenance::kPositiveOriginal, m.max_iou[i],
                               m.matched_gt[i], static_cast<int>(i)});
  }
  std::vector<Box> refined;
  refined.reserve(originals.boxes.size());
  for (const Box& b : originals.boxes) refined.push_back(refine_box(model, img, b));
  const MatchResult rm = match(refined, gt, fg_threshold);
  for (std::size_t i = 0; i < refined.size(); ++i)
    aug.push_back(AugmentedBox{refined[i], Provenance::kRefined, rm.max_iou[i], rm.matched_gt[i],
                               static_cast<int>(i)});
  return aug;
}

// Which boxes feed the IoU branch: every augmented box past the threshold, or
// only the refined ones.
enum class IouSource { kAugmented, kRefined };

inline IouSource parse_iou_source(const std::string& s) {
  if (s == "augmented") return IouSource::kAugmented;
  if (s == "refined") return IouSource::kRefined;
  throw ConfigError("unknown iou_source '" + s + "' (expected augmented|refined)");
}

struct RoutedSamples {
  std::vector<std::size_t> cls;                         // refined-provenance candidates
  std::vector<std::pair<std::size_t, BoxDeltas>> reg;   // max_iou >= reg threshold
  std::vector<std::pair<std::size_t, double>> iou;      // max_iou >= iou threshold
};

// Branch routing over an augmented set. Classification candidates are the
// refined boxes only (positives and negatives alike, matching what inference
// sees); regression takes every augmented box at IoU >= fg_threshold with
// encoded deltas to its matched gt; the IoU branch takes every qualifying box
// at IoU >= iou_threshold with the measured IoU as target. Boxes whose
// clipped extent is empty cannot be featurized and are left out.
inline RoutedSamples route_training_samples(const AugmentedProposals& aug, const GroundTruth& gt,
                                            const ImageTensor& img, const DeltaWeights& weights,
                                            double fg_threshold = 0.5, double iou_threshold = 0.3,
                                            IouSource iou_source = IouSource::kAugmented) {
  RoutedSamples r;
  const Box bounds = img.bounds();
  for (std::size_t i = 0; i < aug.size(); ++i) {
    const AugmentedBox& a = aug[i];
    const Box c = clip_box(a.box, bounds);
    if (c.width() <= 0.0 || c.height() <= 0.0) continue;
    if (a.prov == Provenance::kRefined) r.cls.push_back(i);
    if (a.max_iou >= fg_threshold && a.matched_gt != kNoMatch)
      r.reg.emplace_back(i, encode_deltas(a.box, gt[a.matched_gt].box, weights));
    if (a.max_iou >= iou_threshold &&
        (iou_source == IouSource::kAugmented || a.prov == Provenance::kRefined))
      r.iou.emplace_back(i, a.max_iou);
  }
  return r;
}

// ---- training modes -------------------------------------------------------

enum class TrainMode {
  kBaseline,
  kBoxIouOnly,
  kApdi,
  kApdiBoxIou,
  kCascadeBaseline,
  kCascadeApdi,
};

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "baseline") return TrainMode::kBaseline;
  if (s == "box-iou-only") return TrainMode::kBoxIouOnly;
  if (s == "apdi") return TrainMode::kApdi;
  if (s == "apdi+box-iou") return TrainMode::kApdiBoxIou;
  if (s == "cascade-baseline") return TrainMode::kCascadeBaseline;
  if (s == "cascade-apdi") return TrainMode::kCascadeApdi;
  throw ConfigError("unknown mode '" + s +
                    "' (expected baseline|apdi|box-iou-only|apdi+box-iou|cascade-baseline|cascade-apdi)");
}

inline std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kBaseline: return "baseline";
    case TrainMode::kBoxIouOnly: return "box-iou-only";
    case TrainMode::kApdi: return "apdi";
    case TrainMode::kApdiBoxIou: return "apdi+box-iou";
    case TrainMode::kCascadeBaseline: return "cascade-baseline";
    case TrainMode::kCascadeApdi: return "cascade-apdi";
  }
  throw ConfigError("unknown train mode value");
}

inline bool mode_is_cascade(TrainMode m) {
  return m == TrainMode::kCascadeBaseline || m == TrainMode::kCascadeApdi;
}

inline bool mode_augments(TrainMode m) {
  return m == TrainMode::kApdi || m == TrainMode::kApdiBoxIou || m == TrainMode::kCascadeApdi;
}

inline bool mode_trains_iou(TrainMode m) {
  return m == TrainMode::kBoxIouOnly || m == TrainMode::kApdiBoxIou;
}

struct TrainStepOptions {
  TrainMode mode = TrainMode::kBaseline;
  bool augment = false;       // caller resolves warmup: mode_augments(mode) && past warmup
  bool train_iou = false;     // caller resolves: mode_trains_iou(mode) or cascade box-iou flag
  double fg_threshold = 0.5;
  double iou_threshold = 0.3;
  IouSource iou_source = IouSource::kAugmented;
  int batch_size = 512;
  double positive_fraction = 0.25;
  int reg_cap = 512;   // per-image cap on regression samples in augmented routing
  int iou_cap = 512;   // per-image cap on IoU-branch samples
  double learning_rate = 0.02;
  double w_cls = 1.0;
  double w_reg = 1.0;
  double w_iou = 1.0;
  int workers = 1;
};

struct TrainImage {
  const ImageTensor* img = nullptr;
  const GroundTruth* gt = nullptr;
  const ProposalSet* proposals = nullptr;
  std::uint64_t sample_seed = 0;
};

struct LossReport {
  double cls = 0.0, reg = 0.0, iou = 0.0, total = 0.0;
  std::size_t n_cls = 0, n_reg = 0, n_iou = 0;
};

namespace detail {

// Per-image gradient and loss contributions, merged serially in image order.
struct GradChunk {
  Eigen::MatrixXd g_cls, g_reg;
  Eigen::RowVectorXd g_iou;
  double loss_cls_sum = 0.0, loss_reg_sum = 0.0, loss_iou_sum = 0.0;
  std::size_t n_cls = 0, n_reg = 0, n_iou = 0;

  explicit GradChunk(const HeadModel& m)
      : g_cls(Eigen::MatrixXd::Zero(m.w_cls.rows(), m.w_cls.cols())),
        g_reg(Eigen::MatrixXd::Zero(4, m.w_reg.cols())),
        g_iou(Eigen::RowVectorXd::Zero(m.w_iou.cols())) {}
};

// Cached forward pass over the boxes one image's training touches.
class ForwardCache {
 public:
  ForwardCache(const HeadModel& model, const ImageTensor& img) : model_(model), img_(img) {}

  // Returns nullptr when the box cannot be pooled.
  const std::pair<FeatureVector, HeadOutput>* get(std::size_t key, const Box& b) {
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      auto f = try_pool(img_, b, model_.grid_size);
      std::optional<std::pair<FeatureVector, HeadOutput>> entry;
      if (f) {
        HeadOutput out = forward(model_, *f);
        entry.emplace(std::move(*f), std::move(out));
      }
      it = cache_.emplace(key, std::move(entry)).first;
    }
    return it->second ? &*it->second : nullptr;
  }

 private:
  const HeadModel& model_;
  const ImageTensor& img_;
  std::map<std::size_t, std::optional<std::pair<FeatureVector, HeadOutput>>> cache_;
};

inline void add_cls_sample(GradChunk& ch, const HeadModel& model, const HeadOutput& out,
                           const FeatureVector& f, int class_target) {
  const int target = class_target == kBackground ? model.background_class() : class_target;
  ch.loss_cls_sum += loss_cls(out, target);
  Eigen::VectorXd d = out.probs;
  d[target] -= 1.0;
  ch.g_cls.noalias() += d * f.transpose();
  ++ch.n_cls;
}

inline void add_reg_sample(GradChunk& ch, const HeadOutput& out, const FeatureVector& f,
                           const BoxDeltas& target) {
  ch.loss_reg_sum += loss_reg(out.deltas, target);
  const double diff[4] = {out.deltas.tx - target.tx, out.deltas.ty - target.ty,
                          out.deltas.tw - target.tw, out.deltas.th - target.th};
  for (int r = 0; r < 4; ++r) {
    const double s = diff[r] > 0 ? 1.0 : (diff[r] < 0 ? -1.0 : 0.0);
    ch.g_reg.row(r).noalias() += (s / 4.0) * f.transpose();
  }
  ++ch.n_reg;
}

inline void add_iou_sample(GradChunk& ch, const HeadOutput& out, const FeatureVector& f,
                           double target_iou) {
  ch.loss_iou_sum += loss_iou(out, target_iou);
  ch.g_iou.noalias() += (sigmoid(out.iou_logit) - target_iou) * f.transpose();
  ++ch.n_iou;
}

// Candidate boxes for standard (non-augmented) training: proposals with a
// non-empty clipped extent, remembering their original indices.
struct PoolableSet {
  std::vector<Box> boxes;
  std::vector<std::size_t> source;
};

inline PoolableSet poolable_subset(const std::vector<Box>& boxes, const Box& bounds) {
  PoolableSet out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Box c = clip_box(boxes[i], bounds);
    if (c.width() <= 0.0 || c.height() <= 0.0) continue;
    out.boxes.push_back(boxes[i]);
    out.source.push_back(i);
  }
  return out;
}

// Standard per-image step: match, sample, cls on the batch, reg on sampled
// positives, IoU branch (when enabled) on all candidates past the threshold
// up to the cap.
inline void standard_image_step(GradChunk& ch, const HeadModel& model,
                                const std::vector<Box>& candidates, const GroundTruth& gt,
                                const TrainStepOptions& opts, Rng& rng, ForwardCache& cache) {
  if (candidates.empty()) return;
  const MatchResult m = match(candidates, gt, opts.fg_threshold);
  const SampleBatch batch =
      sample(m, candidates, gt, opts.batch_size, opts.positive_fraction, model.delta_weights, rng);
  for (const SampleEntry& e : batch) {
    const auto* fo = cache.get(static_cast<std::size_t>(e.index), candidates[e.index]);
    if (!fo) continue;
    add_cls_sample(ch, model, fo->second, fo->first, e.class_target);
    if (e.is_positive) add_reg_sample(ch, fo->second, fo->first, e.delta_target);
  }
  if (opts.train_iou) {
    std::vector<int> pool;
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m.max_iou[i] >= opts.iou_threshold) pool.push_back(static_cast<int>(i));
    pool = subsample(std::move(pool), static_cast<std::size_t>(opts.iou_cap), rng);
    for (int idx : pool) {
      const auto* fo = cache.get(static_cast<std::size_t>(idx), candidates[idx]);
      if (!fo) continue;
      add_iou_sample(ch, fo->second, fo->first, m.max_iou[idx]);
    }
  }
}

// Augmented per-image step: build the augmented set with the (read-only)
// model, route by provenance and IoU, sample the classification candidates,
// take regression and IoU sets whole up to their caps.
inline void augmented_image_step(GradChunk& ch, const HeadModel& model, const ImageTensor& img,
                                 const ProposalSet& proposals, const GroundTruth& gt,
                                 const TrainStepOptions& opts, Rng& rng, ForwardCache& cache) {
  const AugmentedProposals aug =
      augment_proposals(model, img, proposals, gt, opts.fg_threshold);
  if (aug.empty()) return;
  const RoutedSamples routed =
      route_training_samples(aug, gt, img, model.delta_weights, opts.fg_threshold,
                             opts.iou_threshold, opts.iou_source);

  // Sample the refined-provenance classification candidates with the usual
  // quota arithmetic.
  if (!routed.cls.empty()) {
    MatchResult sub;
    std::vector<Box> sub_boxes;
    sub_boxes.reserve(routed.cls.size());
    for (std::size_t ai : routed.cls) {
      const AugmentedBox& a = aug[ai];
      sub_boxes.push_back(a.box);
      sub.matched_gt.push_back(a.matched_gt);
      sub.max_iou.push_back(a.max_iou);
      const bool pos = a.max_iou >= opts.fg_threshold && a.matched_gt != kNoMatch;
      sub.positive.push_back(pos);
      sub.class_target.push_back(pos ? gt[a.matched_gt].class_id : kBackground);
    }
    const SampleBatch batch = sample(sub, sub_boxes, gt, opts.batch_size, opts.positive_fraction,
                                     model.delta_weights, rng);
    for (const SampleEntry& e : batch) {
      const std::size_t ai = routed.cls[static_cast<std::size_t>(e.index)];
      const auto* fo = cache.get(ai, aug[ai].box);
      if (!fo) continue;
      add_cls_sample(ch, model, fo->second, fo->first, e.class_target);
    }
  }

  std::vector<int> reg_pool(routed.reg.size());
  for (std::size_t i = 0; i < reg_pool.size(); ++i) reg_pool[i] = static_cast<int>(i);
  reg_pool = subsample(std::move(reg_pool), static_cast<std::size_t>(opts.reg_cap), rng);
  for (int ri : reg_pool) {
    const auto& [ai, target] = routed.reg[static_cast<std::size_t>(ri)];
    const auto* fo = cache.get(ai, aug[ai].box);
    if (!fo) continue;
    add_reg_sample(ch, fo->second, fo->first, target);
  }

  if (opts.train_iou) {
    std::vector<int> iou_pool(routed.iou.size());
    for (std::size_t i = 0; i < iou_pool.size(); ++i) iou_pool[i] = static_cast<int>(i);
    iou_pool = subsample(std::move(iou_pool), static_cast<std::size_t>(opts.iou_cap), rng);
    for (int ii : iou_pool) {
      const auto& [ai, target] = routed.iou[static_cast<std::size_t>(ii)];
      const auto* fo = cache.get(ai, aug[ai].box);
      if (!fo) continue;
      add_iou_sample(ch, fo->second, fo->first, target);
    }
  }
}

inline LossReport reduce_and_apply(HeadModel& model, std::vector<GradChunk>& chunks,
                                   const TrainStepOptions& opts) {
  HeadGradients g(model);
  LossReport rep;
  double cls_sum = 0, reg_sum = 0, iou_sum = 0;
  for (GradChunk& ch : chunks) {
    g.g_cls.noalias() += ch.g_cls;
    g.g_reg.noalias() += ch.g_reg;
    g.g_iou.noalias() += ch.g_iou;
    g.n_cls += ch.n_cls;
    g.n_reg += ch.n_reg;
    g.n_iou += ch.n_iou;
    cls_sum += ch.loss_cls_sum;
    reg_sum += ch.loss_reg_sum;
    iou_sum += ch.loss_iou_sum;
  }
  rep.n_cls = g.n_cls;
  rep.n_reg = g.n_reg;
  rep.n_iou = g.n_iou;
  rep.cls = g.n_cls ? cls_sum / static_cast<double>(g.n_cls) : 0.0;
  rep.reg = g.n_reg ? reg_sum / static_cast<double>(g.n_reg) : 0.0;
  rep.iou = g.n_iou ? iou_sum / static_cast<double>(g.n_iou) : 0.0;
  rep.total = opts.w_cls * rep.cls + opts.w_reg * rep.reg + opts.w_iou * rep.iou;
  sgd_step(model, g, opts.learning_rate, opts.w_cls, opts.w_reg, opts.w_iou);
  return rep;
}

}  // namespace detail

// One optimization step over a batch of images: per-image sample gathering
// (parallel, pure), serial gradient reduction in image order, one SGD update.
inline LossReport train_step(HeadModel& model, const std::vector<TrainImage>& images,
                             const TrainStepOptions& opts) {
  std::vector<detail::GradChunk> chunks(images.size(), detail::GradChunk(model));
  parallel_for(images.size(), opts.workers, [&](std::size_t i) {
    const TrainImage& ti = images[i];
    Rng rng(ti.sample_seed);
    detail::ForwardCache cache(model, *ti.img);
    if (opts.augment) {
      detail::augmented_image_step(chunks[i], model, *ti.img, *ti.proposals, *ti.gt, opts, rng,
                                   cache);
    } else {
      const detail::PoolableSet cand = detail::poolable_subset(ti.proposals->boxes, ti.img->bounds());
      detail::standard_image_step(chunks[i], model, cand.boxes, *ti.gt, opts, rng, cache);
    }
  });
  return detail::reduce_and_apply(model, chunks, opts);
}

// ---- cascade --------------------------------------------------------------

struct CascadeStepOptions {
  TrainMode mode = TrainMode::kCascadeBaseline;
  bool augment = false;     // stage-1 augmentation (cascade-apdi past warmup)
  bool train_iou = false;   // train the IoU branch of every stage
  std::array<double, 3> thresholds = {0.5, 0.6, 0.7};
  double iou_threshold = 0.3;
  IouSource iou_source = IouSource::kAugmented;
  int batch_size = 512;
  double positive_fraction = 0.25;
  int reg_cap = 512;
  int iou_cap = 512;
  double learning_rate = 0.02;
  double w_cls = 1.0;
  double w_reg = 1.0;
  double w_iou = 1.0;
  int workers = 1;
};

// One cascade step: stage 1 trains on the original proposals (augmented in
// cascade-apdi), each later stage trains on the previous stage's refined
// stream at its own matching threshold. Refinement between stages uses the
// pre-update weights; each stage takes one SGD update at the end.
inline std::array<LossReport, 3> cascade_train_step(std::vector<HeadModel>& stages,
                                                    const std::vector<TrainImage>& images,
                                                    const CascadeStepOptions& opts) {
  if (stages.size() != 3) throw std::invalid_argument("cascade_train_step: expected 3 stages");

  struct ImageChunks {
    std::vector<detail::GradChunk> per_stage;
  };
  std::vector<ImageChunks> all(images.size());
  for (auto& ic : all)
    for (const HeadModel& m : stages) ic.per_stage.emplace_back(m);

  parallel_for(images.size(), opts.workers, [&](std::size_t i) {
    const TrainImage& ti = images[i];
    std::vector<Box> stream = ti.proposals->boxes;
    for (std::size_t s = 0; s < 3; ++s) {
      const HeadModel& model = stages[s];
      TrainStepOptions stage_opts;
      stage_opts.fg_threshold = opts.thresholds[s];
      stage_opts.iou_threshold = opts.iou_threshold;
      stage_opts.iou_source = opts.iou_source;
      stage_opts.batch_size = opts.batch_size;
      stage_opts.positive_fraction = opts.positive_fraction;
      stage_opts.reg_cap = opts.reg_cap;
      stage_opts.iou_cap = opts.iou_cap;
      stage_opts.train_iou = opts.train_iou;

      Rng rng(derive_seed(ti.sample_seed, rng_stream::kTrain, s));
      detail::ForwardCache cache(model, *ti.img);
      if (s == 0 && opts.augment) {
        ProposalSet ps;
        ps.boxes = stream;
        detail::augmented_image_step(all[i].per_stage[s], model, *ti.img, ps, *ti.gt, stage_opts,
                                     rng, cache);
      } else {
        const detail::PoolableSet cand = detail::poolable_subset(stream, ti.img->bounds());
        detail::standard_image_step(all[i].per_stage[s], model, cand.boxes, *ti.gt, stage_opts,
                                    rng, cache);
      }
      if (s + 1 < 3)
        for (Box& b : stream) b = refine_box(model, *ti.img, b);
    }
  });

  std::array<LossReport, 3> reports;
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<detail::GradChunk> chunks;
    chunks.reserve(images.size());
    for (auto& ic : all) chunks.push_back(std::move(ic.per_stage[s]));
    TrainStepOptions stage_opts;
    stage_opts.learning_rate = opts.learning_rate;
    stage_opts.w_cls = opts.w_cls;
    stage_opts.w_reg = opts.w_reg;
    stage_opts.w_iou = opts.w_iou;
    reports[s] = detail::reduce_and_apply(stages[s], chunks, stage_opts);
  }
  return reports;
}

// Inference-only iterative box regression: apply refine `iterations` times.
inline ProposalSet ibbr_refine(const HeadModel& model, const ImageTensor& img,
                               const ProposalSet& proposals, int iterations = 2) {
  if (iterations < 1) throw std::invalid_argument("ibbr_refine: iterations must be >= 1");
  ProposalSet out = proposals;
  for (int it = 0; it < iterations; ++it)
    for (Box& b : out.boxes) b = refine_box(model, img, b);
  if (!out.boxes.empty())
    out.provenance = std::vector<Provenance>(out.boxes.size(), Provenance::kRefined);
  return out;
}

}  // namespace detkit
