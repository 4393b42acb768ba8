#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "detkit/apdi.hpp"
#include "detkit/data.hpp"
#include "detkit/heads.hpp"
#include "detkit/io.hpp"

namespace detkit {

struct Detection {
  Box box;
  int class_id = 0;
  double raw_cls_score = 0.0;
  double iou_score = 1.0;    // predicted, in (0,1)
  double final_score = 0.0;  // raw * iou when calibrated, else raw
  std::int64_t image_id = 0;
};

struct InferStats {
  std::uint64_t head_forwards = 0;
};

struct InferenceOptions {
  double score_threshold = 0.05;  // kept iff final score strictly above
  double nms_iou = 0.5;
  int top_k = 100;  // per image, across classes
  bool calibrate = false;
  int regression_passes = 1;  // total delta applications; 2 = refine once, then score
};

// Elementwise product with the category-agnostic IoU score; never reorders
// the classes.
inline std::vector<double> calibrate_scores(const std::vector<double>& raw, double iou_score) {
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] * iou_score;
  return out;
}

// Greedy NMS over one class: highest score first (ties to the lower index),
// keep a box iff its IoU with every kept box is strictly below the threshold.
// Returns kept indices in score order.
inline std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                                    double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("nms: iou_threshold must be in (0, 1)");
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms: box/score count mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool ok = true;
    for (std::size_t k : kept) {
      if (iou(boxes[i], boxes[k]) >= iou_threshold) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(i);
  }
  return kept;
}

namespace detail {

// One scored proposal: final output box, full class probabilities, predicted
// IoU, and the proposal's input index for deterministic tie-breaks.
struct ScoredBox {
  Box box;
  Eigen::VectorXd probs;
  double iou_score = 0.5;
  std::size_t source = 0;
};

// Score threshold, per-class NMS, cross-class top-k.
inline std::vector<Detection> form_detections(const std::vector<ScoredBox>& scored, int num_classes,
                                              std::int64_t image_id, const InferenceOptions& opts) {
  struct Candidate {
    Box box;
    int class_id;
    double raw, iou, final_score;
    std::size_t source;
  };
  std::vector<Detection> out;
  std::vector<Candidate> kept_all;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<Candidate> cand;
    for (const ScoredBox& s : scored) {
      const double raw = s.probs[c];
      const double fin = opts.calibrate ? raw * s.iou_score : raw;
      if (fin > opts.score_threshold)
        cand.push_back(Candidate{s.box, c, raw, s.iou_score, fin, s.source});
    }
    std::vector<Box> boxes;
    std::vector<double> scores;
    boxes.reserve(cand.size());
    scores.reserve(cand.size());
    for (const Candidate& k : cand) {
      boxes.push_back(k.box);
      scores.push_back(k.final_score);
    }
    for (std::size_t i : nms(boxes, scores, opts.nms_iou)) kept_all.push_back(cand[i]);
  }
  std::stable_sort(kept_all.begin(), kept_all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.final_score != b.final_score) return a.final_score > b.final_score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return a.source < b.source;
  });
  if (opts.top_k >= 0 && kept_all.size() > static_cast<std::size_t>(opts.top_k))
    kept_all.resize(static_cast<std::size_t>(opts.top_k));
  out.reserve(kept_all.size());
  for (const Candidate& k : kept_all)
    out.push_back(Detection{k.box, k.class_id, k.raw, k.iou, k.final_score, image_id});
  return out;
}

}  // namespace detail

// Single-head inference. regression_passes - 1 refinement passes move the
// proposals first (the same pool/forward/decode path augmentation uses), then
// the scoring pass reads class probabilities and the IoU score and applies
// its deltas once more for the output boxes. Every head forward is counted.
inline std::vector<Detection> infer_image(const HeadModel& model, const ImageTensor& img,
                                          const ProposalSet& proposals, std::int64_t image_id,
                                          const InferenceOptions& opts, InferStats* stats = nullptr) {
  if (opts.regression_passes < 1)
    throw std::invalid_argument("infer_image: regression_passes must be >= 1");
  std::vector<Box> boxes = proposals.boxes;
  for (int pass = 1; pass < opts.regression_passes; ++pass) {
    for (Box& b : boxes) {
      auto f = detail::try_pool(img, b, model.grid_size);
      if (!f) continue;
      if (stats) ++stats->head_forwards;
      const HeadOutput o = forward(model, *f);
      b = decode_deltas(b, o.deltas, model.delta_weights, img.bounds());
    }
  }
  std::vector<detail::ScoredBox> scored;
  scored.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    auto f = detail::try_pool(img, boxes[i], model.grid_size);
    if (!f) continue;
    if (stats) ++stats->head_forwards;
    const HeadOutput o = forward(model, *f);
    scored.push_back(detail::ScoredBox{decode_deltas(boxes[i], o.deltas, model.delta_weights, img.bounds()),
                                       o.probs, o.iou_score, i});
  }
  return detail::form_detections(scored, model.num_classes, image_id, opts);
}

// Three-stage cascade inference: each stage scores the previous stage's
// boxes and moves them by its deltas; class probabilities are averaged over
// the stages, the IoU score is the last stage's.
inline std::vector<Detection> infer_cascade(const std::vector<HeadModel>& stages,
                                            const ImageTensor& img, const ProposalSet& proposals,
                                            std::int64_t image_id, const InferenceOptions& opts,
                                            InferStats* stats = nullptr) {
  if (stages.size() != 3) throw std::invalid_argument("infer_cascade: expected 3 stages");
  std::vector<detail::ScoredBox> scored;
  for (std::size_t i = 0; i < proposals.boxes.size(); ++i) {
    Box b = proposals.boxes[i];
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(stages[0].num_classes + 1);
    double last_iou = 0.5;
    bool alive = true;
    for (const HeadModel& model : stages) {
      auto f = detail::try_pool(img, b, model.grid_size);
      if (!f) {
        alive = false;
        break;
      }
      if (stats) ++stats->head_forwards;
      const HeadOutput o = forward(model, *f);
      acc += o.probs;
      last_iou = o.iou_score;
      b = decode_deltas(b, o.deltas, model.delta_weights, img.bounds());
    }
    if (!alive) continue;
    scored.push_back(detail::ScoredBox{b, acc / 3.0, last_iou, i});
  }
  return detail::form_detections(scored, stages[0].num_classes, image_id, opts);
}

// ---- detections dump (JSONL, one detection per line) ----------------------

inline nlohmann::json detection_to_json(const Detection& d) {
  nlohmann::json j;
  j["schema"] = kDetectionSchema;
  j["image_id"] = d.image_id;
  j["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
  j["class"] = d.class_id;
  j["raw"] = d.raw_cls_score;
  j["iou"] = d.iou_score;
  j["score"] = d.final_score;
  return j;
}

inline Detection detection_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("schema") || j["schema"] != kDetectionSchema)
    throw SchemaError("detections: missing or unsupported schema " + where);
  for (const char* key : {"image_id", "box", "class", "raw", "iou", "score"})
    if (!j.contains(key)) throw SchemaError("detections: missing key '" + std::string(key) + "' " + where);
  const auto& bj = j["box"];
  if (!bj.is_array() || bj.size() != 4) throw SchemaError("detections: box must have 4 entries " + where);
  for (const auto& v : bj)
    if (!v.is_number()) throw SchemaError("detections: box entries must be numeric " + where);
  if (!j["image_id"].is_number_integer() || !j["class"].is_number_integer())
    throw SchemaError("detections: image_id and class must be integers " + where);
  for (const char* key : {"raw", "iou", "score"})
    if (!j[key].is_number()) throw SchemaError("detections: '" + std::string(key) + "' must be numeric " + where);
  Detection d;
  try {
    d.box = Box(bj[0].get<double>(), bj[1].get<double>(), bj[2].get<double>(), bj[3].get<double>());
  } catch (const std::invalid_argument& e) {
    throw SchemaError("detections: invalid box " + where + ": " + e.what());
  }
  d.image_id = j["image_id"].get<std::int64_t>();
  d.class_id = j["class"].get<int>();
  d.raw_cls_score = j["raw"].get<double>();
  d.iou_score = j["iou"].get<double>();
  d.final_score = j["score"].get<double>();
  return d;
}

inline void save_detections(const std::vector<Detection>& dets, std::ostream& out) {
  std::vector<const Detection*> ordered;
  ordered.reserve(dets.size());
  for (const Detection& d : dets) ordered.push_back(&d);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Detection* a, const Detection* b) { return a->image_id < b->image_id; });
  for (const Detection* d : ordered) out << detection_to_json(*d).dump() << "\n";
  if (!out) throw IoError("failed writing detections dump");
}

inline void save_detections(const std::vector<Detection>& dets, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open detections dump for writing: " + path);
  save_detections(dets, out);
}

inline std::vector<Detection> load_detections(std::istream& in, const std::string& source = "<stream>") {
  std::vector<Detection> dets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("detections parse error at " + source + ":" + std::to_string(line_no) + ": " + e.what());
    }
    dets.push_back(detection_from_json(j, "at " + source + ":" + std::to_string(line_no)));
  }
  return dets;
}

inline std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections dump: " + path);
  return load_detections(in, path);
}

}  // namespace detkit
